#include "taq/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "taq/error.hpp"
#include "taq/parallel.hpp"

namespace taq {

std::string_view metric_kind_name(MetricKind kind) noexcept {
  return kind == MetricKind::kExactMatch ? "exact_match" : "proxy_loss_delta";
}

SensitivityCurve sensitivity_sweep(const Model& model, const ModelMetric& metric,
                                   MetricKind kind, int probe_bits,
                                   std::size_t group_size) {
  if (!is_admissible_bits(probe_bits)) {
    throw Error(ErrorCode::kInvalidConfig,
                "probe bits must be 4, 8 or 16, got " + std::to_string(probe_bits));
  }
  const std::size_t n = model.blocks.size();
  SensitivityCurve curve;
  curve.metric = kind;
  curve.probe_bits = probe_bits;
  curve.baseline = metric(model);
  curve.probe_metric.resize(n);
  curve.delta.resize(n);
  parallel_for(n, [&](std::size_t l) {
    try {
      Model probe = model;
      probe.clear_quantization();
      probe.quantize_layer(l, probe_bits, group_size);
      curve.probe_metric[l] = metric(probe);
    } catch (const Error& e) {
      throw Error(e.code(), "probe of layer " + std::to_string(l) + ": " + e.what());
    }
  });
  for (std::size_t l = 0; l < n; ++l) {
    curve.delta[l] = curve.baseline - curve.probe_metric[l];
    if (!std::isfinite(curve.delta[l])) {
      throw Error(ErrorCode::kInvalidInput,
                  "probe of layer " + std::to_string(l) + " gave a non-finite drop");
    }
  }
  return curve;
}

CriticalSet critical_set(std::span<const double> delta, double gamma) {
  CriticalSet set{gamma, {}};
  for (std::size_t l = 0; l < delta.size(); ++l) {
    if (delta[l] >= gamma) set.layers.push_back(l);
  }
  return set;
}

double auto_gamma(std::span<const double> delta, double target_fraction) {
  if (!(target_fraction > 0.0 && target_fraction <= 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "target fraction must lie in (0, 1]");
  }
  if (delta.empty()) {
    throw Error(ErrorCode::kInvalidInput, "sensitivity curve is empty");
  }
  const std::size_t n = delta.size();
  std::vector<double> sorted(delta.begin(), delta.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const auto k = static_cast<std::size_t>(
      std::ceil(target_fraction * static_cast<double>(n) - 1e-9));
  if (k >= n) return sorted.back();
  // Every threshold above sorted[k] admits at most k layers; pick the
  // midpoint of the gap to the next distinct value.
  const double floor_value = sorted[k];
  const auto above = std::find_if(sorted.rbegin(), sorted.rend(),
                                  [&](double v) { return v > floor_value; });
  if (above == sorted.rend()) return floor_value + 1.0;
  return floor_value + (*above - floor_value) / 2.0;
}

BitPlan taqo_allocate(const CriticalSet& set, const TaqoConfig& cfg,
                      const CostModel& cost, std::optional<std::uint64_t> budget,
                      std::span<const double> delta) {
  if (!is_admissible_bits(cfg.high_bits) || !is_admissible_bits(cfg.low_bits) ||
      cfg.high_bits <= cfg.low_bits) {
    throw Error(ErrorCode::kInvalidConfig,
                "need admissible bitwidths with high > low");
  }
  const std::size_t n = cost.layer_count();
  if (!delta.empty() && delta.size() != n) {
    throw Error(ErrorCode::kInvalidInput, "curve and cost model differ in size");
  }
  BitPlan plan;
  plan.bits.assign(n, cfg.low_bits);
  for (std::size_t l : set.layers) {
    if (l >= n) {
      throw Error(ErrorCode::kInvalidPlan,
                  "critical layer " + std::to_string(l) + " out of range");
    }
    plan.bits[l] = cfg.high_bits;
  }
  plan.budget = budget;
  plan.cost = plan_cost(plan.bits, cost);
  if (!budget || plan.cost <= *budget) return plan;

  std::optional<double> min_gamma;
  if (!delta.empty()) {
    // The critical set only shrinks at delta values, so the candidates are
    // the distinct deltas above gamma plus "just above the maximum".
    std::vector<double> candidates;
    for (double d : delta) {
      if (d > set.gamma) candidates.push_back(d);
    }
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()),
                     candidates.end());
    const double top = *std::max_element(delta.begin(), delta.end());
    candidates.push_back(
        std::nextafter(std::max(top, set.gamma), std::numeric_limits<double>::infinity()));
    for (double g : candidates) {
      const CriticalSet trial = critical_set(delta, g);
      std::vector<int> bits(n, cfg.low_bits);
      for (std::size_t l : trial.layers) bits[l] = cfg.high_bits;
      if (plan_cost(bits, cost) <= *budget) {
        min_gamma = g;
        break;
      }
    }
  }
  throw BudgetInfeasibleError("oracle plan costs " + std::to_string(plan.cost) +
                                  " bits, budget is " + std::to_string(*budget),
                              plan.cost, *budget, min_gamma);
}

}  // namespace taq
