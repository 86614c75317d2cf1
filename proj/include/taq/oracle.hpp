#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "taq/allocator.hpp"
#include "taq/model.hpp"

namespace taq {

enum class MetricKind { kExactMatch, kProxyLossDelta };

std::string_view metric_kind_name(MetricKind kind) noexcept;

struct SensitivityCurve {
  std::vector<double> delta;  // metric(full) - metric(probe), per layer
  std::vector<double> probe_metric;
  double baseline = 0.0;  // metric of the unquantized model
  MetricKind metric = MetricKind::kExactMatch;
  int probe_bits = 4;
};

// Scores a model; higher is better.
using ModelMetric = std::function<double(const Model&)>;

// Quantizes each layer alone to `probe_bits` (min-max, no calibration),
// scores it, and records the drop against the unquantized model. Probes run
// on private copies of the model, up to parallel_threads() at a time; the
// curve is assembled in layer order. A failing probe is rethrown with its
// layer index in the message.
SensitivityCurve sensitivity_sweep(const Model& model, const ModelMetric& metric,
                                   MetricKind kind, int probe_bits = 4,
                                   std::size_t group_size = kDefaultGroupSize);

struct CriticalSet {
  double gamma = 0.0;
  std::vector<std::size_t> layers;  // ascending
};

// {l : delta_l >= gamma}.
CriticalSet critical_set(std::span<const double> delta, double gamma);

// Smallest threshold admitting at most ceil(fraction * N) critical layers.
// With k = ceil(fraction * N) < N, the threshold sits midway between the
// (k+1)-th largest delta and the next larger distinct value, or one above
// the maximum when no larger value exists. fraction = 1 gives min delta.
// Throws InvalidConfig unless 0 < fraction <= 1.
double auto_gamma(std::span<const double> delta, double target_fraction);

struct TaqoConfig {
  int high_bits = 16;
  int low_bits = 4;
};

// Critical layers at high_bits, the rest at low_bits; nothing is pinned.
// When the plan exceeds `budget`, throws BudgetInfeasibleError; if `delta`
// is given, the error carries the smallest delta value above set.gamma
// whose critical set fits, or a value just above max delta when only the
// empty set fits.
BitPlan taqo_allocate(const CriticalSet& set, const TaqoConfig& cfg,
                      const CostModel& cost, std::optional<std::uint64_t> budget,
                      std::span<const double> delta = {});

}  // namespace taq
