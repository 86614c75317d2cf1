#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string_view>
#include <vector>

#include "taq/allocator.hpp"
#include "taq/model.hpp"
#include "taq/tasks.hpp"

namespace taq {

enum class LossKind { kLogitsMse, kLogitsKl };

std::string_view loss_kind_name(LossKind kind) noexcept;
// Throws InvalidConfig on an unknown name.
LossKind parse_loss_kind(std::string_view name);

struct ProxyLoss {
  LossKind kind = LossKind::kLogitsMse;
  double value = 0.0;
};

// Mean over rows of the per-position discrepancy between two logit matrices:
// squared error averaged over the vocabulary, or KL(softmax(ref) ||
// softmax(test)).
double logit_discrepancy(const Tensor& reference, const Tensor& test,
                         LossKind kind);

// Discrepancy between the two models' logits over every position of each
// item's full sequence. Throws InvalidInput on an empty item list.
ProxyLoss proxy_error(const Model& model_fp, const Model& model_q,
                      std::span<const TaskItem> items, LossKind kind);

// Quantizes every layer whose plan entry is a code width with min-max
// parameters; layers at kFullPrecisionBits stay in floating point. Clears
// any previous quantization. Throws InvalidPlan on a size mismatch or a
// bitwidth outside {4, 8, 16, 32}.
void apply_plan(Model& model, const BitPlan& plan,
                std::size_t group_size = kDefaultGroupSize);

struct CalibConfig {
  std::vector<double> grid{0.8, 0.9, 1.0, 1.1, 1.2};
  std::size_t passes = 1;
  LossKind loss = LossKind::kLogitsMse;
  std::size_t subset_size = 32;  // leading items of C used inside the search
};

struct CalibResult {
  double initial_loss = 0.0;  // full C, min-max initialization
  double final_loss = 0.0;    // full C
  double subset_initial_loss = 0.0;
  double subset_final_loss = 0.0;
  std::size_t subset_size = 0;
  std::size_t groups_visited = 0;
  std::size_t groups_changed = 0;
  // Set when the subset search raised the full-C loss and the min-max
  // initialization was restored.
  bool reverted = false;
  std::map<double, std::size_t> multiplier_histogram;
  std::vector<std::size_t> layer_order;
};

// Coordinate descent over the quantized layers of `model_q` (highest
// `priority` first, ties to the lower index; index order when `priority` is
// empty), then over matrices, groups, and the multiplier grid. A group's
// candidate parameters are fit_scaled(weights, bits, m) and a candidate
// replaces the current one only when it strictly lowers the proxy loss on
// the calibration subset. Full-precision weights are never modified.
//
// Throws InvalidPlan when model_q's quantization does not match `plan` or
// the models differ in shape, InvalidInput on an empty C, and InvalidConfig
// when the grid lacks 1.0.
CalibResult calibrate(const Model& model_fp, Model& model_q, const BitPlan& plan,
                      std::span<const TaskItem> items, const CalibConfig& cfg,
                      std::span<const double> priority = {});

}  // namespace taq
