#include "kernels.hpp"

#include <cmath>
#include <limits>

#include "taq/error.hpp"

namespace taq::kernels {

namespace {

ConstMap weight(const Block& b, MatrixKind k) {
  return as_mat(b.matrix(k).effective());
}

MutMap grad_weight(Block& g, MatrixKind k) {
  return as_mat(g.matrix(k).weight);
}

// Row-wise causal softmax of scores (in place). The exponential runs over
// the whole tile in one vectorized pass; masked entries are zeroed after.
void causal_softmax(Mat& s) {
  const Eigen::Index t = s.rows();
  for (Eigen::Index i = 0; i < t; ++i) {
    auto live = s.row(i).head(i + 1);
    live.array() -= live.maxCoeff();
    s.row(i).tail(t - i - 1).setZero();
  }
  s = s.array().exp().matrix();
  for (Eigen::Index i = 0; i < t; ++i) {
    s.row(i).tail(t - i - 1).setZero();
    s.row(i).head(i + 1) /= s.row(i).head(i + 1).sum();
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

// sigmoid(2z) for the GELU inner argument z.
Mat gelu_gate(const Mat& u) {
  const auto z = kGeluC * (u.array() + kGeluA * u.array().cube());
  return (1.0 + (-2.0 * z).exp()).inverse().matrix();
}

}  // namespace

void gelu(const Mat& u, Mat& out) {
  const auto z = kGeluC * (u.array() + kGeluA * u.array().cube());
  out = (u.array() / (1.0 + (-2.0 * z).exp())).matrix();
}

void gelu_grad(const Mat& u, Mat& out) {
  const Mat sig = gelu_gate(u);
  const auto dz = kGeluC * (1.0 + 3.0 * kGeluA * u.array().square());
  out = (sig.array() +
         2.0 * u.array() * sig.array() * (1.0 - sig.array()) * dz)
            .matrix();
}

void layer_norm(const Mat& x, const Tensor& gain, const Tensor& bias, Mat& y,
                LayerNormCache* cache) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  y.resize(n, d);
  if (cache) {
    cache->xhat.resize(n, d);
    cache->inv_std.resize(n);
  }
  const auto g = as_vec(gain);
  const auto b = as_vec(bias);
  Vec xhat(d);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = x.row(r).mean();
    xhat = x.row(r).array() - mean;
    const double var = xhat.squaredNorm() / static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat *= inv;
    y.row(r) = xhat.cwiseProduct(g) + b;
    if (cache) {
      cache->xhat.row(r) = xhat;
      cache->inv_std(r) = inv;
    }
  }
}

void layer_norm_backward(const Mat& dy, const Tensor& gain,
                         const LayerNormCache& cache, Mat& dx, Tensor& dgain,
                         Tensor& dbias) {
  const Eigen::Index n = dy.rows();
  const Eigen::Index d = dy.cols();
  dx.resize(n, d);
  const auto g = as_vec(gain);
  Vec dxhat(d);
  for (Eigen::Index r = 0; r < n; ++r) {
    dxhat = dy.row(r).cwiseProduct(g);
    const double m1 = dxhat.mean();
    const double m2 = dxhat.cwiseProduct(cache.xhat.row(r)).mean();
    dx.row(r) = cache.inv_std(r) *
                (dxhat.array() - m1 - cache.xhat.row(r).array() * m2).matrix();
  }
  as_vec(dgain) += dy.cwiseProduct(cache.xhat).colwise().sum();
  as_vec(dbias) += dy.colwise().sum();
}

namespace {

// Concatenated head outputs of causal self-attention within each sequence.
void attention(const Mat& q, const Mat& k, const Mat& v,
               std::span<const std::size_t> offsets, Eigen::Index heads,
               Mat& attn, std::vector<Mat>* probs) {
  const Eigen::Index d = q.cols();
  const Eigen::Index hd = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::size_t n_seq = offsets.size() - 1;
  attn.resize(q.rows(), d);  // every (token, head) block is written below
  if (probs) probs->resize(n_seq * static_cast<std::size_t>(heads));
  Mat scores;
  for (std::size_t s = 0; s < n_seq; ++s) {
    const auto o = static_cast<Eigen::Index>(offsets[s]);
    const auto t = static_cast<Eigen::Index>(offsets[s + 1] - offsets[s]);
    for (Eigen::Index h = 0; h < heads; ++h) {
      scores.noalias() = q.block(o, h * hd, t, hd) * k.block(o, h * hd, t, hd).transpose();
      scores *= scale;
      causal_softmax(scores);
      attn.block(o, h * hd, t, hd).noalias() = scores * v.block(o, h * hd, t, hd);
      if (probs) (*probs)[s * static_cast<std::size_t>(heads) + h] = scores;
    }
  }
}

// x <- x + down(gelu(up(ln2(x)))).
void mlp_residual(const Block& block, Mat& x, BlockCache& c, bool keep_ln) {
  layer_norm(x, block.ln2_gain, block.ln2_bias, c.xn2, keep_ln ? &c.ln2 : nullptr);
  c.up.noalias() = c.xn2 * weight(block, MatrixKind::kUp);
  gelu(c.up, c.act);
  x.noalias() += c.act * weight(block, MatrixKind::kDown);
}

}  // namespace

void block_forward(const Block& block, const ModelConfig& cfg,
                   std::span<const std::size_t> offsets, Mat& x,
                   BlockCache* cache) {
  // Per-thread scratch: freeing and reallocating these large buffers on every
  // call makes the allocator hand pages back and fault them in again.
  thread_local BlockCache scratch;
  BlockCache& c = cache ? *cache : scratch;
  layer_norm(x, block.ln1_gain, block.ln1_bias, c.xn1, cache ? &c.ln1 : nullptr);
  c.q.noalias() = c.xn1 * weight(block, MatrixKind::kQuery);
  c.k.noalias() = c.xn1 * weight(block, MatrixKind::kKey);
  c.v.noalias() = c.xn1 * weight(block, MatrixKind::kValue);
  attention(c.q, c.k, c.v, offsets, static_cast<Eigen::Index>(cfg.n_heads), c.attn,
            cache ? &c.probs : nullptr);
  x.noalias() += c.attn * weight(block, MatrixKind::kOutput);
  mlp_residual(block, x, c, cache != nullptr);
}

void block_state(const Block& block, const ModelConfig& cfg,
                 std::span<const std::size_t> offsets, const Mat& x,
                 BlockState& s) {
  BlockCache& c = s.cache;
  s.input = x;
  layer_norm(x, block.ln1_gain, block.ln1_bias, c.xn1, nullptr);
  c.q.noalias() = c.xn1 * weight(block, MatrixKind::kQuery);
  c.k.noalias() = c.xn1 * weight(block, MatrixKind::kKey);
  c.v.noalias() = c.xn1 * weight(block, MatrixKind::kValue);
  attention(c.q, c.k, c.v, offsets, static_cast<Eigen::Index>(cfg.n_heads), c.attn,
            nullptr);
  s.mid = x;
  s.mid.noalias() += c.attn * weight(block, MatrixKind::kOutput);
  s.output = s.mid;
  mlp_residual(block, s.output, c, false);
}

void block_forward_delta(const Block& block, const ModelConfig& cfg,
                         std::span<const std::size_t> offsets,
                         const BlockState& s, MatrixKind kind, Eigen::Index row,
                         const Mat& delta, Mat& out) {
  const BlockCache& c = s.cache;
  const Eigen::Index nr = delta.rows();
  thread_local BlockCache scratch;
  thread_local Mat changed;
  switch (kind) {
    case MatrixKind::kQuery:
    case MatrixKind::kKey:
    case MatrixKind::kValue: {
      const Mat* base = kind == MatrixKind::kQuery ? &c.q
                        : kind == MatrixKind::kKey ? &c.k
                                                   : &c.v;
      changed = *base;
      changed.noalias() += c.xn1.middleCols(row, nr) * delta;
      attention(kind == MatrixKind::kQuery ? changed : c.q,
                kind == MatrixKind::kKey ? changed : c.k,
                kind == MatrixKind::kValue ? changed : c.v, offsets,
                static_cast<Eigen::Index>(cfg.n_heads), scratch.attn, nullptr);
      out = s.input;
      out.noalias() += scratch.attn * weight(block, MatrixKind::kOutput);
      mlp_residual(block, out, scratch, false);
      return;
    }
    case MatrixKind::kOutput:
      out = s.mid;
      out.noalias() += c.attn.middleCols(row, nr) * delta;
      mlp_residual(block, out, scratch, false);
      return;
    case MatrixKind::kUp:
      scratch.up = c.up;
      scratch.up.noalias() += c.xn2.middleCols(row, nr) * delta;
      gelu(scratch.up, scratch.act);
      out = s.mid;
      out.noalias() += scratch.act * weight(block, MatrixKind::kDown);
      return;
    case MatrixKind::kDown:
      out = s.output;
      out.noalias() += c.act.middleCols(row, nr) * delta;
      return;
  }
}

void block_backward(const Block& block, const ModelConfig& cfg,
                    std::span<const std::size_t> offsets,
                    const BlockCache& c, Mat& dx, Block& grad) {
  const auto d = static_cast<Eigen::Index>(cfg.d_model);
  const auto heads = static_cast<Eigen::Index>(cfg.n_heads);
  const Eigen::Index hd = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::size_t n_seq = offsets.size() - 1;

  // MLP branch.
  grad_weight(grad, MatrixKind::kDown).noalias() += c.act.transpose() * dx;
  Mat dup = dx * weight(block, MatrixKind::kDown).transpose();
  Mat dgelu;
  gelu_grad(c.up, dgelu);
  dup.array() *= dgelu.array();
  grad_weight(grad, MatrixKind::kUp).noalias() += c.xn2.transpose() * dup;
  const Mat dxn2 = dup * weight(block, MatrixKind::kUp).transpose();
  Mat tmp;
  layer_norm_backward(dxn2, block.ln2_gain, c.ln2, tmp, grad.ln2_gain,
                      grad.ln2_bias);
  dx += tmp;

  // Attention branch.
  grad_weight(grad, MatrixKind::kOutput).noalias() += c.attn.transpose() * dx;
  const Mat dattn = dx * weight(block, MatrixKind::kOutput).transpose();
  Mat dq = Mat::Zero(dx.rows(), d);
  Mat dk = Mat::Zero(dx.rows(), d);
  Mat dv = Mat::Zero(dx.rows(), d);
  Mat dp, ds;
  for (std::size_t s = 0; s < n_seq; ++s) {
    const auto o = static_cast<Eigen::Index>(offsets[s]);
    const auto t = static_cast<Eigen::Index>(offsets[s + 1] - offsets[s]);
    for (Eigen::Index h = 0; h < heads; ++h) {
      const Mat& p = c.probs[s * static_cast<std::size_t>(heads) + h];
      const auto d_out = dattn.block(o, h * hd, t, hd);
      dp.noalias() = d_out * c.v.block(o, h * hd, t, hd).transpose();
      dv.block(o, h * hd, t, hd).noalias() += p.transpose() * d_out;
      const Eigen::VectorXd row_dot = dp.cwiseProduct(p).rowwise().sum();
      ds = p.array() * (dp.colwise() - row_dot).array();
      dq.block(o, h * hd, t, hd).noalias() =
          scale * ds * c.k.block(o, h * hd, t, hd);
      dk.block(o, h * hd, t, hd).noalias() =
          scale * ds.transpose() * c.q.block(o, h * hd, t, hd);
    }
  }
  grad_weight(grad, MatrixKind::kQuery).noalias() += c.xn1.transpose() * dq;
  grad_weight(grad, MatrixKind::kKey).noalias() += c.xn1.transpose() * dk;
  grad_weight(grad, MatrixKind::kValue).noalias() += c.xn1.transpose() * dv;
  Mat dxn1 = dq * weight(block, MatrixKind::kQuery).transpose();
  dxn1.noalias() += dk * weight(block, MatrixKind::kKey).transpose();
  dxn1.noalias() += dv * weight(block, MatrixKind::kValue).transpose();
  layer_norm_backward(dxn1, block.ln1_gain, c.ln1, tmp, grad.ln1_gain,
                      grad.ln1_bias);
  dx += tmp;
}

void embed_into(const Model& model, const SequenceBatch& batch, Mat& x) {
  const ModelConfig& cfg = model.config;
  const auto d = static_cast<Eigen::Index>(cfg.d_model);
  x.resize(static_cast<Eigen::Index>(batch.total_tokens()), d);
  const auto tok = as_mat(model.tok_emb);
  const auto pos = as_mat(model.pos_emb);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const auto seq = batch.sequence(s);
    if (seq.size() > cfg.max_seq) {
      throw Error(ErrorCode::kInvalidInput,
                  "sequence of " + std::to_string(seq.size()) +
                      " tokens exceeds max_seq " + std::to_string(cfg.max_seq));
    }
    const auto base = static_cast<Eigen::Index>(batch.offsets()[s]);
    for (std::size_t p = 0; p < seq.size(); ++p) {
      const int id = seq[p];
      if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab) {
        throw Error(ErrorCode::kInvalidInput,
                    "token id " + std::to_string(id) + " outside vocabulary");
      }
      x.row(base + static_cast<Eigen::Index>(p)) =
          tok.row(id) + pos.row(static_cast<Eigen::Index>(p));
    }
  }
}

}  // namespace taq::kernels
