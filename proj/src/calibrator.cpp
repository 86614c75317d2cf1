#include "taq/calibrator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kernels.hpp"
#include "taq/error.hpp"

namespace taq {

std::string_view loss_kind_name(LossKind kind) noexcept {
  return kind == LossKind::kLogitsKl ? "logits_kl" : "logits_mse";
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "logits_mse") return LossKind::kLogitsMse;
  if (name == "logits_kl") return LossKind::kLogitsKl;
  throw Error(ErrorCode::kInvalidConfig,
              "unknown loss kind '" + std::string(name) + "'");
}

double logit_discrepancy(const Tensor& reference, const Tensor& test,
                         LossKind kind) {
  if (reference.rows() != test.rows() || reference.cols() != test.cols()) {
    throw Error(ErrorCode::kInvalidShape, "logit shapes differ");
  }
  if (reference.rows() == 0) {
    throw Error(ErrorCode::kInvalidInput, "no logits to compare");
  }
  const auto a = kernels::as_mat(reference);
  const auto b = kernels::as_mat(test);
  double total = 0.0;
  if (kind == LossKind::kLogitsMse) {
    total = (a - b).squaredNorm() / static_cast<double>(a.cols());
  } else {
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
      const double ma = a.row(r).maxCoeff();
      const double mb = b.row(r).maxCoeff();
      const double lse_a = ma + std::log((a.row(r).array() - ma).exp().sum());
      const double lse_b = mb + std::log((b.row(r).array() - mb).exp().sum());
      const auto log_p = a.row(r).array() - lse_a;
      const auto log_q = b.row(r).array() - lse_b;
      // Clamp tiny negative round-off; KL is non-negative.
      total += std::max(0.0, (log_p.exp() * (log_p - log_q)).sum());
    }
  }
  return total / static_cast<double>(a.rows());
}

namespace {

SequenceBatch full_sequences(std::span<const TaskItem> items) {
  SequenceBatch batch;
  for (const TaskItem& item : items) batch.add(full_sequence(item));
  return batch;
}

void check_same_shape(const Model& a, const Model& b) {
  if (!(a.config.n_layers == b.config.n_layers &&
        a.config.d_model == b.config.d_model &&
        a.config.n_heads == b.config.n_heads && a.config.vocab == b.config.vocab &&
        a.config.max_seq == b.config.max_seq && a.config.d_ff == b.config.d_ff)) {
    throw Error(ErrorCode::kInvalidPlan, "models differ in shape");
  }
}

void check_plan_matches(const Model& model, const BitPlan& plan) {
  if (plan.bits.size() != model.blocks.size()) {
    throw Error(ErrorCode::kInvalidPlan, "plan covers " +
                                             std::to_string(plan.bits.size()) +
                                             " layers, model has " +
                                             std::to_string(model.blocks.size()));
  }
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    for (const Linear& lin : model.blocks[l].linear) {
      const int bits = lin.quant ? lin.quant->bits() : kFullPrecisionBits;
      if (bits != plan.bits[l]) {
        throw Error(ErrorCode::kInvalidPlan,
                    "layer " + std::to_string(l) + " is at " +
                        std::to_string(bits) + " bits, plan says " +
                        std::to_string(plan.bits[l]));
      }
    }
  }
}

}  // namespace

ProxyLoss proxy_error(const Model& model_fp, const Model& model_q,
                      std::span<const TaskItem> items, LossKind kind) {
  if (items.empty()) {
    throw Error(ErrorCode::kInvalidInput, "calibration set is empty");
  }
  check_same_shape(model_fp, model_q);
  const SequenceBatch batch = full_sequences(items);
  return {kind, logit_discrepancy(forward(model_fp, batch),
                                  forward(model_q, batch), kind)};
}

void apply_plan(Model& model, const BitPlan& plan, std::size_t group_size) {
  if (plan.bits.size() != model.blocks.size()) {
    throw Error(ErrorCode::kInvalidPlan, "plan does not cover every layer");
  }
  for (int b : plan.bits) {
    if (b != kFullPrecisionBits && !is_admissible_bits(b)) {
      throw Error(ErrorCode::kInvalidPlan, "inadmissible bitwidth " +
                                               std::to_string(b) + " in plan");
    }
  }
  model.clear_quantization();
  for (std::size_t l = 0; l < plan.bits.size(); ++l) {
    if (plan.bits[l] != kFullPrecisionBits) {
      model.quantize_layer(l, plan.bits[l], group_size);
    }
  }
}

CalibResult calibrate(const Model& model_fp, Model& model_q, const BitPlan& plan,
                      std::span<const TaskItem> items, const CalibConfig& cfg,
                      std::span<const double> priority) {
  if (items.empty()) {
    throw Error(ErrorCode::kInvalidInput, "calibration set is empty");
  }
  if (std::find(cfg.grid.begin(), cfg.grid.end(), 1.0) == cfg.grid.end()) {
    throw Error(ErrorCode::kInvalidConfig, "calibration grid must contain 1.0");
  }
  for (double m : cfg.grid) {
    if (!(m > 0.0) || !std::isfinite(m)) {
      throw Error(ErrorCode::kInvalidConfig, "grid multipliers must be positive");
    }
  }
  if (cfg.subset_size == 0) {
    throw Error(ErrorCode::kInvalidConfig, "calibration subset must be non-empty");
  }
  check_same_shape(model_fp, model_q);
  check_plan_matches(model_q, plan);
  const std::size_t n_layers = model_q.blocks.size();
  if (!priority.empty() && priority.size() != n_layers) {
    throw Error(ErrorCode::kInvalidInput, "priority must have one entry per layer");
  }

  CalibResult result;
  result.layer_order.resize(n_layers);
  std::iota(result.layer_order.begin(), result.layer_order.end(), 0);
  if (!priority.empty()) {
    std::stable_sort(result.layer_order.begin(), result.layer_order.end(),
                     [&](std::size_t a, std::size_t b) {
                       return priority[a] > priority[b];
                     });
  }
  std::erase_if(result.layer_order, [&](std::size_t l) {
    return plan.bits[l] == kFullPrecisionBits;
  });

  const SequenceBatch full_batch = full_sequences(items);
  const Tensor full_reference = forward(model_fp, full_batch);
  result.initial_loss =
      logit_discrepancy(full_reference, forward(model_q, full_batch), cfg.loss);

  const auto subset = items.first(std::min(cfg.subset_size, items.size()));
  result.subset_size = subset.size();
  const SequenceBatch batch = full_sequences(subset);
  const Tensor reference = forward(model_fp, batch);
  double current = logit_discrepancy(reference, forward(model_q, batch), cfg.loss);
  result.subset_initial_loss = current;

  // Chosen multiplier per group, for the histogram.
  std::vector<std::vector<double>> chosen(n_layers * kMatricesPerBlock);
  std::vector<Block> initial(model_q.blocks);
  for (std::size_t l : result.layer_order) {
    for (std::size_t k = 0; k < kMatricesPerBlock; ++k) {
      chosen[l * kMatricesPerBlock + k].assign(
          model_q.blocks[l].linear[k].quant->group_count(), 1.0);
    }
  }

  const ModelConfig& mcfg = model_q.config;
  // Subset loss when the hidden state leaving layer `l` is `x`. The final
  // norm and unembedding write into buffers reused across candidates.
  kernels::Mat final_norm;
  Tensor logits(batch.total_tokens(), mcfg.vocab);
  auto tail_loss = [&](std::size_t l, kernels::Mat& x) {
    for (std::size_t j = l + 1; j < n_layers; ++j) {
      kernels::block_forward(model_q.blocks[j], mcfg, batch.offsets(), x, nullptr);
    }
    kernels::layer_norm(x, model_q.lnf_gain, model_q.lnf_bias, final_norm, nullptr);
    kernels::as_mat(logits).noalias() = final_norm * kernels::as_mat(model_q.unembed);
    if (!logits.all_finite()) {
      throw Error(ErrorCode::kInvalidInput, "forward pass produced non-finite logits");
    }
    return logit_discrepancy(reference, logits, cfg.loss);
  };

  for (std::size_t pass = 0; pass < cfg.passes; ++pass) {
    for (std::size_t l : result.layer_order) {
      // Hidden state entering layer l under the current quantization. Each
      // candidate re-runs layer l from the changed matrix on, then the tail.
      Tensor entry = embed(model_q, batch);
      run_blocks(model_q, batch, entry, 0, l);
      const kernels::Mat entry_x = kernels::as_mat(entry);
      kernels::BlockState state;
      kernels::block_state(model_q.blocks[l], mcfg, batch.offsets(), entry_x, state);
      kernels::Mat x;
      for (std::size_t k = 0; k < kMatricesPerBlock; ++k) {
        const auto kind = static_cast<MatrixKind>(k);
        Linear& lin = model_q.blocks[l].linear[k];
        QTensor& q = *lin.quant;
        if (!q.cached()) q.enable_cache();
        const std::size_t cols = q.cols();
        const auto weights = lin.weight.data();
        for (std::size_t g = 0; g < q.group_count(); ++g) {
          ++result.groups_visited;
          const std::size_t begin = q.group_begin(g);
          const std::size_t len = q.group_length(g);
          const auto group = weights.subspan(begin, len);
          const auto now = q.cached()->data().subspan(begin, len);
          const std::size_t first_row = begin / cols;
          const std::size_t n_rows = (begin + len - 1) / cols - first_row + 1;
          double& mult = chosen[l * kMatricesPerBlock + k][g];
          double best = current;
          double best_mult = mult;
          for (double m : cfg.grid) {
            if (m == mult) continue;
            const QuantParams p = fit_scaled(group, q.bits(), m);
            const auto values = dequantize_group(quantize_group(group, p), p);
            kernels::Mat delta = kernels::Mat::Zero(static_cast<Eigen::Index>(n_rows),
                                                    static_cast<Eigen::Index>(cols));
            bool same = true;
            for (std::size_t i = 0; i < len; ++i) {
              const std::size_t flat = begin + i - first_row * cols;
              delta(static_cast<Eigen::Index>(flat / cols),
                    static_cast<Eigen::Index>(flat % cols)) = values[i] - now[i];
              same = same && values[i] == now[i];
            }
            // Identical dequantized weights cannot improve the loss.
            if (same) continue;
            kernels::block_forward_delta(model_q.blocks[l], mcfg, batch.offsets(), state,
                                         kind, static_cast<Eigen::Index>(first_row),
                                         delta, x);
            const double loss = tail_loss(l, x);
            if (loss < best) {
              best = loss;
              best_mult = m;
            }
          }
          if (best_mult != mult) {
            const QuantParams p = fit_scaled(group, q.bits(), best_mult);
            q.set_group(g, p, quantize_group(group, p));
            kernels::block_state(model_q.blocks[l], mcfg, batch.offsets(), entry_x, state);
            mult = best_mult;
            current = best;
            ++result.groups_changed;
          }
        }
      }
    }
  }
  result.subset_final_loss = current;
  result.final_loss =
      logit_discrepancy(full_reference, forward(model_q, full_batch), cfg.loss);
  if (result.final_loss > result.initial_loss) {
    model_q.blocks = std::move(initial);
    result.final_loss = result.initial_loss;
    result.subset_final_loss = result.subset_initial_loss;
    result.reverted = true;
    for (auto& v : chosen) std::fill(v.begin(), v.end(), 1.0);
  }
  for (const auto& v : chosen) {
    for (double m : v) ++result.multiplier_histogram[m];
  }
  return result;
}

}  // namespace taq
