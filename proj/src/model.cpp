#include "taq/model.hpp"

#include "kernels.hpp"
#include "taq/error.hpp"

namespace taq {

using kernels::Mat;

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) {
    throw Error(ErrorCode::kInvalidConfig, msg);
  };
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    fail("d_model must be a positive multiple of n_heads");
  }
  if (n_layers == 0) fail("n_layers must be positive");
  if (vocab < 8) fail("vocab must be at least 8");
  if (max_seq == 0 || d_ff == 0) fail("max_seq and d_ff must be positive");
}

std::uint64_t ModelConfig::weights_per_layer() const noexcept {
  return 4 * d_model * d_model + 2 * d_model * d_ff;
}

std::string_view matrix_name(MatrixKind kind) noexcept {
  switch (kind) {
    case MatrixKind::kQuery: return "attn.query";
    case MatrixKind::kKey: return "attn.key";
    case MatrixKind::kValue: return "attn.value";
    case MatrixKind::kOutput: return "attn.output";
    case MatrixKind::kUp: return "mlp.up";
    case MatrixKind::kDown: return "mlp.down";
  }
  return "unknown";
}

namespace {

template <typename M, typename T>
std::vector<std::pair<std::string, T*>> collect(M& m) {
  std::vector<std::pair<std::string, T*>> out;
  out.emplace_back("tok_emb", &m.tok_emb);
  out.emplace_back("pos_emb", &m.pos_emb);
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    auto& b = m.blocks[l];
    const std::string prefix = "blocks." + std::to_string(l) + ".";
    out.emplace_back(prefix + "ln1.gain", &b.ln1_gain);
    out.emplace_back(prefix + "ln1.bias", &b.ln1_bias);
    for (std::size_t k = 0; k < kMatricesPerBlock; ++k) {
      out.emplace_back(prefix + std::string(matrix_name(static_cast<MatrixKind>(k))),
                       &b.linear[k].weight);
    }
    out.emplace_back(prefix + "ln2.gain", &b.ln2_gain);
    out.emplace_back(prefix + "ln2.bias", &b.ln2_bias);
  }
  out.emplace_back("ln_f.gain", &m.lnf_gain);
  out.emplace_back("ln_f.bias", &m.lnf_bias);
  out.emplace_back("unembed", &m.unembed);
  return out;
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> Model::parameters() {
  return collect<Model, Tensor>(*this);
}

std::vector<std::pair<std::string, const Tensor*>> Model::parameters() const {
  return collect<const Model, const Tensor>(*this);
}

int Model::layer_bits(std::size_t layer) const {
  const Block& b = blocks.at(layer);
  for (const Linear& lin : b.linear) {
    if (lin.quant) return lin.quant->bits();
  }
  return 32;
}

void Model::quantize_layer(std::size_t layer, int bits, std::size_t group_size) {
  if (layer >= blocks.size()) {
    throw Error(ErrorCode::kInvalidInput,
                "layer " + std::to_string(layer) + " out of range");
  }
  for (Linear& lin : blocks[layer].linear) {
    lin.quant = quantize_tensor(lin.weight, bits, group_size, true);
  }
}

void Model::clear_quantization() {
  for (Block& b : blocks) {
    for (Linear& lin : b.linear) lin.quant.reset();
  }
}

Model zero_model(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d_model;
  Model m;
  m.config = cfg;
  m.tok_emb = Tensor(cfg.vocab, d);
  m.pos_emb = Tensor(cfg.max_seq, d);
  m.blocks.resize(cfg.n_layers);
  for (Block& b : m.blocks) {
    b.ln1_gain = Tensor(1, d);
    b.ln1_bias = Tensor(1, d);
    b.ln2_gain = Tensor(1, d);
    b.ln2_bias = Tensor(1, d);
    for (std::size_t k = 0; k < kMatricesPerBlock; ++k) {
      const auto kind = static_cast<MatrixKind>(k);
      const std::size_t in = kind == MatrixKind::kDown ? cfg.d_ff : d;
      const std::size_t out = kind == MatrixKind::kUp ? cfg.d_ff : d;
      b.linear[k].weight = Tensor(in, out);
    }
  }
  m.lnf_gain = Tensor(1, d);
  m.lnf_bias = Tensor(1, d);
  m.unembed = Tensor(d, cfg.vocab);
  for (auto& [name, t] : m.parameters()) {
    t->set_label(name);
    if (ends_with(name, ".gain")) {
      for (double& v : t->data()) v = 1.0;
    }
  }
  return m;
}

Model init_model(const ModelConfig& cfg) {
  Model m = zero_model(cfg);
  SeededRng rng(derive_seed(cfg.seed, "init"));
  for (auto& [name, t] : m.parameters()) {
    if (ends_with(name, ".gain") || ends_with(name, ".bias")) continue;
    for (double& v : t->data()) v = 0.02 * rng.normal();
  }
  return m;
}

void SequenceBatch::add(std::span<const int> tokens) {
  tokens_.insert(tokens_.end(), tokens.begin(), tokens.end());
  offsets_.push_back(tokens_.size());
}

namespace {

Tensor to_tensor(const Mat& m) {
  Tensor t(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  kernels::as_mat(t) = m;
  return t;
}

}  // namespace

Tensor embed(const Model& model, const SequenceBatch& batch) {
  Mat x;
  kernels::embed_into(model, batch, x);
  return to_tensor(x);
}

void run_blocks(const Model& model, const SequenceBatch& batch, Tensor& hidden,
                std::size_t first, std::size_t last, const CaptureSink& sink) {
  if (hidden.rows() != batch.total_tokens() ||
      hidden.cols() != model.config.d_model) {
    throw Error(ErrorCode::kInvalidShape, "hidden state does not match batch");
  }
  Mat x = kernels::as_mat(hidden);
  for (std::size_t l = first; l < last; ++l) {
    kernels::block_forward(model.blocks.at(l), model.config, batch.offsets(), x,
                           nullptr);
    if (sink) sink(l, to_tensor(x));
  }
  kernels::as_mat(hidden) = x;
}

Tensor head(const Model& model, const Tensor& hidden) {
  Mat hf;
  kernels::layer_norm(kernels::as_mat(hidden), model.lnf_gain, model.lnf_bias,
                      hf, nullptr);
  Tensor logits(hidden.rows(), model.config.vocab);
  kernels::as_mat(logits).noalias() = hf * kernels::as_mat(model.unembed);
  if (!logits.all_finite()) {
    throw Error(ErrorCode::kInvalidInput, "forward pass produced non-finite logits");
  }
  return logits;
}

Tensor forward(const Model& model, const SequenceBatch& batch,
               const CaptureSink& sink) {
  Tensor hidden = embed(model, batch);
  run_blocks(model, batch, hidden, 0, model.blocks.size(), sink);
  return head(model, hidden);
}

Tensor forward(const Model& model, std::span<const int> tokens,
               const CaptureSink& sink) {
  SequenceBatch batch;
  batch.add(tokens);
  return forward(model, batch, sink);
}

}  // namespace taq
