#include "taq/train.hpp"

#include <cmath>

#include "kernels.hpp"
#include "taq/error.hpp"

namespace taq {

using kernels::Mat;

TrainBatch make_train_batch(std::span<const TaskItem> items) {
  TrainBatch batch;
  for (const TaskItem& item : items) {
    const std::vector<int> seq = full_sequence(item);
    batch.inputs.add(std::span<const int>(seq).first(seq.size() - 1));
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
      batch.targets.push_back(t + 1 >= item.prompt.size() ? seq[t + 1] : -1);
    }
  }
  return batch;
}

namespace {

std::size_t count_targets(const TrainBatch& batch) {
  std::size_t n = 0;
  for (int t : batch.targets) n += t >= 0 ? 1 : 0;
  if (n == 0) throw Error(ErrorCode::kInvalidInput, "batch has no targets");
  return n;
}

// Cross-entropy of softmax(row) against `target`; optionally writes the
// softmax probabilities into `probs`.
double row_cross_entropy(const Eigen::Ref<const kernels::Vec>& row, int target,
                         kernels::Vec* probs) {
  const double mx = row.maxCoeff();
  const double lse = mx + std::log((row.array() - mx).exp().sum());
  if (probs) *probs = (row.array() - lse).exp().matrix();
  return lse - row(target);
}

}  // namespace

double compute_loss(const Model& model, const TrainBatch& batch) {
  const Tensor logits = forward(model, batch.inputs);
  const auto l = kernels::as_mat(logits);
  const std::size_t n = count_targets(batch);
  double total = 0.0;
  for (std::size_t r = 0; r < batch.targets.size(); ++r) {
    if (batch.targets[r] < 0) continue;
    total += row_cross_entropy(l.row(static_cast<Eigen::Index>(r)),
                               batch.targets[r], nullptr);
  }
  return total / static_cast<double>(n);
}

LossAndGradient compute_loss_and_gradient(const Model& model,
                                          const TrainBatch& batch) {
  const ModelConfig& cfg = model.config;
  const std::size_t n_targets = count_targets(batch);
  const auto offsets = batch.inputs.offsets();

  Mat x;
  kernels::embed_into(model, batch.inputs, x);
  std::vector<kernels::BlockCache> caches(model.blocks.size());
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    kernels::block_forward(model.blocks[l], cfg, offsets, x, &caches[l]);
  }
  kernels::LayerNormCache lnf;
  Mat hf;
  kernels::layer_norm(x, model.lnf_gain, model.lnf_bias, hf, &lnf);
  const Mat logits = hf * kernels::as_mat(model.unembed);

  LossAndGradient out;
  out.gradient = zero_model(cfg);
  for (auto& [name, t] : out.gradient.parameters()) {
    for (double& v : t->data()) v = 0.0;
  }
  Model& g = out.gradient;

  Mat dlogits = Mat::Zero(logits.rows(), logits.cols());
  const double inv_n = 1.0 / static_cast<double>(n_targets);
  kernels::Vec probs;
  for (std::size_t r = 0; r < batch.targets.size(); ++r) {
    const int target = batch.targets[r];
    if (target < 0) continue;
    const auto row = static_cast<Eigen::Index>(r);
    out.loss += row_cross_entropy(logits.row(row), target, &probs);
    probs(target) -= 1.0;
    dlogits.row(row) = probs * inv_n;
  }
  out.loss *= inv_n;
  if (!std::isfinite(out.loss)) {
    throw Error(ErrorCode::kTrainingDiverged, "loss is not finite");
  }

  kernels::as_mat(g.unembed).noalias() += hf.transpose() * dlogits;
  const Mat dhf = dlogits * kernels::as_mat(model.unembed).transpose();
  Mat dx;
  kernels::layer_norm_backward(dhf, model.lnf_gain, lnf, dx, g.lnf_gain,
                               g.lnf_bias);
  for (std::size_t l = model.blocks.size(); l-- > 0;) {
    kernels::block_backward(model.blocks[l], cfg, offsets, caches[l], dx,
                            g.blocks[l]);
  }

  auto dtok = kernels::as_mat(g.tok_emb);
  auto dpos = kernels::as_mat(g.pos_emb);
  for (std::size_t s = 0; s < batch.inputs.size(); ++s) {
    const auto seq = batch.inputs.sequence(s);
    for (std::size_t p = 0; p < seq.size(); ++p) {
      const auto row = static_cast<Eigen::Index>(offsets[s] + p);
      dtok.row(seq[p]) += dx.row(row);
      dpos.row(static_cast<Eigen::Index>(p)) += dx.row(row);
    }
  }
  return out;
}

TrainResult train_toy(Model& model, const TrainConfig& cfg) {
  TrainResult result;
  if (cfg.steps == 0) return result;
  if (cfg.batch_size == 0 || !(cfg.learning_rate > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "bad training configuration");
  }
  TaskGenConfig gen = cfg.generator;
  gen.vocab = static_cast<int>(model.config.vocab);
  TaskSampler sampler(cfg.tasks, cfg.seed, gen);

  auto params = model.parameters();
  std::vector<std::vector<double>> m1, m2;
  if (cfg.optimizer == Optimizer::kAdam) {
    for (auto& [name, t] : params) {
      m1.emplace_back(t->size(), 0.0);
      m2.emplace_back(t->size(), 0.0);
    }
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-8;

  std::vector<TaskItem> items(cfg.batch_size);
  double running = 0.0;
  result.loss_history.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (TaskItem& item : items) item = sampler.next();
    LossAndGradient lg = compute_loss_and_gradient(model, make_train_batch(items));
    result.loss_history.push_back(lg.loss);
    if (step == 0) {
      result.initial_loss = lg.loss;
      running = lg.loss;
    } else {
      running = 0.98 * running + 0.02 * lg.loss;
    }

    auto grads = lg.gradient.parameters();
    double norm_sq = 0.0;
    for (auto& [name, t] : grads) {
      for (double v : t->data()) norm_sq += v * v;
    }
    const double norm = std::sqrt(norm_sq);
    if (!std::isfinite(norm)) {
      throw Error(ErrorCode::kTrainingDiverged,
                  "gradient norm is not finite at step " + std::to_string(step));
    }
    const double clip = norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;

    const double t1 = static_cast<double>(step + 1);
    const double bc1 = 1.0 - std::pow(kBeta1, t1);
    const double bc2 = 1.0 - std::pow(kBeta2, t1);
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto w = params[p].second->data();
      const auto gr = grads[p].second->data();
      if (cfg.optimizer == Optimizer::kSgd) {
        for (std::size_t i = 0; i < w.size(); ++i) {
          w[i] -= cfg.learning_rate * clip * gr[i];
        }
      } else {
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double gi = clip * gr[i];
          m1[p][i] = kBeta1 * m1[p][i] + (1.0 - kBeta1) * gi;
          m2[p][i] = kBeta2 * m2[p][i] + (1.0 - kBeta2) * gi * gi;
          w[i] -= cfg.learning_rate * (m1[p][i] / bc1) /
                  (std::sqrt(m2[p][i] / bc2) + kAdamEps);
        }
      }
    }
  }
  result.final_loss = running;
  return result;
}

}  // namespace taq
