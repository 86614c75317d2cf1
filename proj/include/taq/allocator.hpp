#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace taq {

// Bits-per-weight charged for a layer held at full precision.
inline constexpr int kFullPrecisionBits = 32;

struct CostModel {
  std::vector<std::uint64_t> weight_counts;

  static CostModel uniform(std::size_t layers, std::uint64_t weights_per_layer);
  std::size_t layer_count() const noexcept { return weight_counts.size(); }
  std::uint64_t full_precision_cost() const noexcept;
};

// Per-layer bitwidths. Entries are 4, 8, 16 or kFullPrecisionBits (pinned).
struct BitPlan {
  std::vector<int> bits;
  std::optional<std::uint64_t> budget;
  std::uint64_t cost = 0;
  std::vector<std::size_t> pinned;

  std::size_t layer_count() const noexcept { return bits.size(); }
  std::size_t count_at(int level) const noexcept;
  bool is_pinned(std::size_t layer) const noexcept;

  bool operator==(const BitPlan&) const = default;
};

// Sum over layers of weight_count * bits, full precision charged at 32.
std::uint64_t plan_cost(std::span<const int> bits, const CostModel& cost);
std::uint64_t plan_cost(const BitPlan& plan, const CostModel& cost);

struct LevelCounts {
  std::size_t high = 0;  // 16-bit
  std::size_t mid = 0;   // 8-bit
};

// ceil(f16 * m) layers at 16 bits and ceil(f8 * m) at 8 bits, clipped so the
// two never exceed m.
LevelCounts level_counts(std::size_t m, double frac16, double frac8);

// Ranks `scores` descending (ties to the lower index) and hands out 16 bits
// to the first `counts.high`, 8 bits to the next `counts.mid`, 4 bits to the
// rest. Returned bits are indexed like `scores`.
std::vector<int> rank_assign(std::span<const double> scores, LevelCounts counts);

struct RankConfig {
  double frac16 = 0.15;
  double frac8 = 0.45;
  std::size_t edge_layers = 2;  // pinned at each end
  std::optional<std::uint64_t> budget;
};

// Pins the edge layers at full precision and rank-assigns the rest by
// relevance. Throws ModelTooSmall below 2 * edge + 1 layers and
// BudgetInfeasible when a budget is set and exceeded.
BitPlan allocate_rank(std::span<const double> relevance, const RankConfig& cfg,
                      const CostModel& cost);

// A plan with every layer at `bits`, optionally pinning `edge_layers` at
// each end.
BitPlan uniform_plan(std::size_t layers, int bits, const CostModel& cost,
                     std::size_t edge_layers = 0);

using GainFn = std::function<double(std::size_t layer, int bits)>;

// gain(l, b) = (R_l - min R + 1) * b: positive, increasing in both the
// layer's relevance and its bitwidth.
GainFn relevance_gain(std::span<const double> relevance);

inline constexpr std::size_t kMaxOracleLayers = 10;

// Exhaustive search over {4, 8, 16}^N for the feasible plan of maximum total
// gain. Ties keep the first plan in enumeration order. Throws OracleTooLarge
// above kMaxOracleLayers and BudgetInfeasible when no plan fits.
BitPlan allocate_knapsack_exact(std::span<const double> relevance,
                                const CostModel& cost,
                                std::optional<std::uint64_t> budget,
                                const GainFn& gain);

// True when R_i > R_j implies bits_i >= bits_j over all non-pinned pairs.
bool is_monotone(const BitPlan& plan, std::span<const double> relevance);

}  // namespace taq
