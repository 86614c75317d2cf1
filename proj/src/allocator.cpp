#include "taq/allocator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "taq/error.hpp"

namespace taq {

namespace {

constexpr int kLevels[] = {4, 8, 16};

// ceil with a small guard so that e.g. 0.15 * 20 = 3.0000000000000004 maps
// to 3, not 4.
std::size_t guarded_ceil(double x) {
  return static_cast<std::size_t>(std::ceil(x - 1e-9));
}

}  // namespace

CostModel CostModel::uniform(std::size_t layers,
                             std::uint64_t weights_per_layer) {
  return CostModel{std::vector<std::uint64_t>(layers, weights_per_layer)};
}

std::uint64_t CostModel::full_precision_cost() const noexcept {
  std::uint64_t total = 0;
  for (auto w : weight_counts) total += w * kFullPrecisionBits;
  return total;
}

std::size_t BitPlan::count_at(int level) const noexcept {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), level));
}

bool BitPlan::is_pinned(std::size_t layer) const noexcept {
  return std::find(pinned.begin(), pinned.end(), layer) != pinned.end();
}

std::uint64_t plan_cost(std::span<const int> bits, const CostModel& cost) {
  if (bits.size() != cost.layer_count()) {
    throw Error(ErrorCode::kInvalidPlan,
                "plan covers " + std::to_string(bits.size()) +
                    " layers, cost model has " +
                    std::to_string(cost.layer_count()));
  }
  std::uint64_t total = 0;
  for (std::size_t l = 0; l < bits.size(); ++l) {
    total += cost.weight_counts[l] * static_cast<std::uint64_t>(bits[l]);
  }
  return total;
}

std::uint64_t plan_cost(const BitPlan& plan, const CostModel& cost) {
  return plan_cost(plan.bits, cost);
}

LevelCounts level_counts(std::size_t m, double frac16, double frac8) {
  if (frac16 < 0.0 || frac8 < 0.0) {
    throw Error(ErrorCode::kInvalidConfig, "budget fractions must be >= 0");
  }
  LevelCounts c;
  c.high = std::min(m, guarded_ceil(frac16 * static_cast<double>(m)));
  c.mid = std::min(m - c.high, guarded_ceil(frac8 * static_cast<double>(m)));
  return c;
}

std::vector<int> rank_assign(std::span<const double> scores,
                             LevelCounts counts) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  std::vector<int> bits(scores.size(), 4);
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (rank < counts.high) {
      bits[order[rank]] = 16;
    } else if (rank < counts.high + counts.mid) {
      bits[order[rank]] = 8;
    }
  }
  return bits;
}

BitPlan allocate_rank(std::span<const double> relevance, const RankConfig& cfg,
                      const CostModel& cost) {
  const std::size_t n = relevance.size();
  if (n < 2 * cfg.edge_layers + 1) {
    throw Error(ErrorCode::kModelTooSmall,
                std::to_string(n) + " layers cannot pin " +
                    std::to_string(cfg.edge_layers) +
                    " at each end and keep one to rank");
  }
  const std::size_t first = cfg.edge_layers;
  const std::size_t last = n - cfg.edge_layers;
  const auto middle = relevance.subspan(first, last - first);
  const std::vector<int> mid_bits = rank_assign(
      middle, level_counts(middle.size(), cfg.frac16, cfg.frac8));

  BitPlan plan;
  plan.bits.assign(n, kFullPrecisionBits);
  for (std::size_t l = 0; l < n; ++l) {
    if (l < first || l >= last) {
      plan.pinned.push_back(l);
    } else {
      plan.bits[l] = mid_bits[l - first];
    }
  }
  plan.budget = cfg.budget;
  plan.cost = plan_cost(plan, cost);
  if (cfg.budget && plan.cost > *cfg.budget) {
    throw BudgetInfeasibleError("rank plan costs " + std::to_string(plan.cost) +
                                    " bits, budget is " +
                                    std::to_string(*cfg.budget),
                                plan.cost, *cfg.budget);
  }
  return plan;
}

BitPlan uniform_plan(std::size_t layers, int bits, const CostModel& cost,
                     std::size_t edge_layers) {
  if (bits != kFullPrecisionBits && bits != 4 && bits != 8 && bits != 16) {
    throw Error(ErrorCode::kInvalidConfig,
                "uniform bitwidth " + std::to_string(bits) + " not admissible");
  }
  BitPlan plan;
  plan.bits.assign(layers, bits);
  for (std::size_t l = 0; l < layers; ++l) {
    if (l < edge_layers || l + edge_layers >= layers) {
      plan.bits[l] = kFullPrecisionBits;
      plan.pinned.push_back(l);
    }
  }
  plan.cost = plan_cost(plan, cost);
  return plan;
}

GainFn relevance_gain(std::span<const double> relevance) {
  std::vector<double> weight(relevance.begin(), relevance.end());
  const double lo =
      weight.empty() ? 0.0 : *std::min_element(weight.begin(), weight.end());
  for (double& w : weight) w = w - lo + 1.0;
  return [weight = std::move(weight)](std::size_t layer, int bits) {
    return weight.at(layer) * static_cast<double>(bits);
  };
}

BitPlan allocate_knapsack_exact(std::span<const double> relevance,
                                const CostModel& cost,
                                std::optional<std::uint64_t> budget,
                                const GainFn& gain) {
  const std::size_t n = relevance.size();
  if (n > kMaxOracleLayers) {
    throw Error(ErrorCode::kOracleTooLarge,
                "3^" + std::to_string(n) + " plans exceed the oracle limit");
  }
  if (cost.layer_count() != n) {
    throw Error(ErrorCode::kInvalidPlan, "cost model size mismatch");
  }
  std::vector<int> digits(n, 0);
  std::vector<int> current(n, kLevels[0]);
  std::vector<int> best;
  double best_gain = 0.0;
  std::uint64_t min_cost = plan_cost(current, cost);
  for (;;) {
    for (std::size_t l = 0; l < n; ++l) current[l] = kLevels[digits[l]];
    const std::uint64_t c = plan_cost(current, cost);
    min_cost = std::min(min_cost, c);
    if (!budget || c <= *budget) {
      double g = 0.0;
      for (std::size_t l = 0; l < n; ++l) g += gain(l, current[l]);
      if (best.empty() || g > best_gain) {
        best = current;
        best_gain = g;
      }
    }
    std::size_t pos = 0;
    while (pos < n && digits[pos] == 2) digits[pos++] = 0;
    if (pos == n) break;
    ++digits[pos];
  }
  if (best.empty()) {
    throw BudgetInfeasibleError(
        "no plan fits the budget; cheapest costs " + std::to_string(min_cost),
        min_cost, *budget);
  }
  BitPlan plan;
  plan.bits = std::move(best);
  plan.budget = budget;
  plan.cost = plan_cost(plan, cost);
  return plan;
}

bool is_monotone(const BitPlan& plan, std::span<const double> relevance) {
  for (std::size_t i = 0; i < plan.bits.size(); ++i) {
    if (plan.is_pinned(i)) continue;
    for (std::size_t j = 0; j < plan.bits.size(); ++j) {
      if (plan.is_pinned(j)) continue;
      if (relevance[i] > relevance[j] && plan.bits[i] < plan.bits[j]) return false;
    }
  }
  return true;
}

}  // namespace taq
