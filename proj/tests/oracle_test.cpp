#include "taq/oracle.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <set>

#include "taq/error.hpp"

namespace taq {
namespace {

ModelConfig small_config(std::size_t layers) {
  ModelConfig cfg;
  cfg.n_layers = layers;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.vocab = 16;
  cfg.max_seq = 8;
  cfg.d_ff = 16;
  cfg.seed = 3;
  return cfg;
}

// metric = 10 - sum of the costs of the layers quantized to 4 bits.
ModelMetric scripted_metric(std::vector<double> costs) {
  return [costs](const Model& m) {
    double v = 10.0;
    for (std::size_t l = 0; l < costs.size(); ++l)
      if (m.layer_bits(l) == 4) v -= costs[l];
    return v;
  };
}

TEST(SensitivitySweep, RecoversScriptedDrops) {
  const Model m = init_model(small_config(4));
  const std::vector<double> costs = {0.5, 3.0, 0.0, 1.25};
  const SensitivityCurve c = sensitivity_sweep(m, scripted_metric(costs), MetricKind::kExactMatch);
  EXPECT_EQ(c.baseline, 10.0);
  EXPECT_EQ(c.delta, costs);
  EXPECT_EQ(c.probe_metric, (std::vector<double>{9.5, 7.0, 10.0, 8.75}));
  EXPECT_EQ(c.probe_bits, 4);
  for (std::size_t l = 0; l < 4; ++l) EXPECT_EQ(m.layer_bits(l), 32);
}

TEST(SensitivitySweep, ProbesOnlyOneLayerAtATime) {
  Model m = init_model(small_config(3));
  m.quantize_layer(1, 8, 128);  // existing quantization is dropped per probe
  std::atomic<int> bad{0};
  sensitivity_sweep(m, [&](const Model& p) {
    int quantized = 0;
    for (std::size_t l = 0; l < 3; ++l) quantized += p.layer_bits(l) != 32;
    if (quantized > 1) ++bad;
    return 0.0;
  }, MetricKind::kProxyLossDelta, 8);
  EXPECT_EQ(bad.load(), 0);
}

TEST(SensitivitySweep, ThreadCountDoesNotChangeTheCurve) {
  const Model m = init_model(small_config(5));
  const ModelMetric metric = [](const Model& p) {
    const Tensor logits = forward(p, std::vector<int>{1, 2, 3, 4});
    double s = 0.0;
    for (double v : logits.data()) s += v * v;
    return s;
  };
  setenv("TAQ_THREADS", "1", 1);
  const SensitivityCurve one = sensitivity_sweep(m, metric, MetricKind::kProxyLossDelta);
  setenv("TAQ_THREADS", "4", 1);
  const SensitivityCurve four = sensitivity_sweep(m, metric, MetricKind::kProxyLossDelta);
  unsetenv("TAQ_THREADS");
  EXPECT_EQ(one.delta, four.delta);
}

TEST(SensitivitySweep, ErrorsNameTheLayer) {
  const Model m = init_model(small_config(4));
  try {
    sensitivity_sweep(m, [](const Model& p) {
      if (p.layer_bits(2) == 4) throw Error(ErrorCode::kInvalidInput, "boom");
      return 1.0;
    }, MetricKind::kExactMatch);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidInput);
    EXPECT_NE(std::string(e.what()).find("layer 2"), std::string::npos);
  }
  EXPECT_THROW(sensitivity_sweep(m, scripted_metric({0, 0, 0, 0}), MetricKind::kExactMatch, 5),
               Error);
}

TEST(CriticalSet, HandExamples) {
  const std::vector<double> d = {0.5, 0.1, 0.5, -0.2};
  EXPECT_EQ(critical_set(d, 0.5).layers, (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(critical_set(d, 0.1).layers, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(critical_set(d, -1.0).layers, (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_TRUE(critical_set(d, 0.6).layers.empty());
  EXPECT_EQ(critical_set(d, 0.1).gamma, 0.1);
}

TEST(CriticalSet, ShrinksAsGammaRises) {
  SeededRng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const auto d = rng_normal(rng, 1 + rng.uniform_int(20));
    const double g1 = rng.normal();
    const double g2 = g1 + rng.uniform();
    const auto a = critical_set(d, g1).layers;
    const auto b = critical_set(d, g2).layers;
    EXPECT_TRUE(std::includes(a.begin(), a.end(), b.begin(), b.end()));
  }
}

TEST(AutoGamma, HandExamples) {
  const std::vector<double> d = {3, 1, 2, 0};
  EXPECT_EQ(auto_gamma(d, 0.25), 2.5);  // k = 1: between 2 and 3
  EXPECT_EQ(auto_gamma(d, 0.5), 1.5);   // k = 2: between 1 and 2
  EXPECT_EQ(auto_gamma(d, 1.0), 0.0);   // every layer
  // All top values tied: no threshold admits exactly one layer.
  const std::vector<double> tied = {1, 1, 1, 0};
  EXPECT_EQ(auto_gamma(tied, 0.25), 2.0);
  EXPECT_TRUE(critical_set(tied, 2.0).layers.empty());
  EXPECT_EQ(auto_gamma(tied, 0.75), 0.5);
}

// The largest critical set with at most k members, found by scanning the
// distinct values upward.
std::vector<std::size_t> largest_set_within(const std::vector<double>& d, std::size_t k) {
  std::set<double> values(d.begin(), d.end());
  for (double t : values) {
    const auto s = critical_set(d, t).layers;
    if (s.size() <= k) return s;
  }
  return {};
}

TEST(AutoGamma, MatchesScanOracle) {
  SeededRng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.uniform_int(16);
    std::vector<double> d(n);
    for (double& v : d) v = static_cast<double>(rng.uniform_int(6)) - 2.0;
    const double f = (1.0 + static_cast<double>(rng.uniform_int(20))) / 20.0;
    const auto k = static_cast<std::size_t>(std::ceil(f * static_cast<double>(n) - 1e-9));
    const double g = auto_gamma(d, f);
    EXPECT_EQ(critical_set(d, g).layers, largest_set_within(d, k))
        << "trial " << trial << " f " << f;
  }
}

TEST(AutoGamma, RejectsBadInput) {
  const std::vector<double> d = {1, 2};
  EXPECT_THROW(auto_gamma(d, 0.0), Error);
  EXPECT_THROW(auto_gamma(d, 1.5), Error);
  EXPECT_THROW(auto_gamma({}, 0.5), Error);
}

TEST(TaqoAllocate, TwoLevels) {
  const CostModel cost = CostModel::uniform(5, 10);
  const BitPlan p = taqo_allocate({0.0, {1, 3}}, {}, cost, std::nullopt);
  EXPECT_EQ(p.bits, (std::vector<int>{4, 16, 4, 16, 4}));
  EXPECT_TRUE(p.pinned.empty());
  EXPECT_EQ(p.cost, 10u * (3 * 4 + 2 * 16));
  const BitPlan q = taqo_allocate({0.0, {0}}, {8, 4}, cost, std::nullopt);
  EXPECT_EQ(q.bits, (std::vector<int>{8, 4, 4, 4, 4}));
}

TEST(TaqoAllocate, ReportsMinimalFeasibleGamma) {
  const std::vector<double> d = {0.4, 0.3, 0.2, 0.1};
  const CostModel cost = CostModel::uniform(4, 1);
  const CriticalSet set = critical_set(d, 0.15);  // {0, 1, 2}: 16*3 + 4 = 52
  auto min_gamma = [&](std::uint64_t budget) -> std::optional<double> {
    try {
      taqo_allocate(set, {}, cost, budget, d);
    } catch (const BudgetInfeasibleError& e) {
      EXPECT_EQ(e.achieved_cost(), 52u);
      return e.min_feasible_gamma();
    }
    ADD_FAILURE() << "budget " << budget << " accepted";
    return std::nullopt;
  };
  EXPECT_EQ(min_gamma(40), 0.3);  // {0, 1}: 16*2 + 4*2 = 40
  EXPECT_EQ(min_gamma(30), 0.4);  // {0}: 16 + 12 = 28
  EXPECT_GT(*min_gamma(16), 0.4); // empty set: 16
  EXPECT_EQ(min_gamma(15), std::nullopt);
  EXPECT_EQ(taqo_allocate(set, {}, cost, 52, d).cost, 52u);
}

TEST(TaqoAllocate, RejectsBadConfig) {
  const CostModel cost = CostModel::uniform(3, 1);
  EXPECT_THROW(taqo_allocate({0.0, {}}, {4, 16}, cost, std::nullopt), Error);
  EXPECT_THROW(taqo_allocate({0.0, {3}}, {}, cost, std::nullopt), Error);
  EXPECT_THROW(taqo_allocate({0.0, {}}, {}, cost, std::nullopt, std::vector<double>{1}), Error);
}

}  // namespace
}  // namespace taq
