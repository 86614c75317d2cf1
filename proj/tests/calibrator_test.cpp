#include "taq/calibrator.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "taq/error.hpp"
#include "taq/tasks.hpp"

namespace taq {
namespace {

ModelConfig small_config(std::size_t layers, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.n_layers = layers;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.vocab = 16;
  cfg.max_seq = 16;
  cfg.d_ff = 32;
  cfg.seed = seed;
  return cfg;
}

// Weights large enough that 4-bit rounding visibly moves the logits.
Model spread_model(const ModelConfig& cfg) {
  Model m = init_model(cfg);
  SeededRng rng(cfg.seed + 100);
  for (auto& [name, t] : m.parameters())
    for (double& v : t->data()) v += 0.3 * rng.normal();
  return m;
}

std::vector<TaskItem> items_for(const ModelConfig& cfg, std::size_t n, std::uint64_t seed) {
  TaskGenConfig g;
  g.vocab = static_cast<int>(cfg.vocab);
  g.min_length = 3;
  g.max_length = 6;
  return gen_task({TaskId::kCopy, seed}, n, g);
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error";
  return ErrorCode::kIo;
}

TEST(LogitDiscrepancy, HandComputedMse) {
  const Tensor ref(2, 2, std::vector<double>{0, 0, 1, 1});
  const Tensor test(2, 2, std::vector<double>{1, 0, 1, 3});
  // Rows: (1 + 0) / 2 = 0.5 and (0 + 4) / 2 = 2.
  EXPECT_DOUBLE_EQ(logit_discrepancy(ref, test, LossKind::kLogitsMse), 1.25);
}

TEST(LogitDiscrepancy, HandComputedKl) {
  const Tensor ref(1, 2, std::vector<double>{0, 0});
  const Tensor test(1, 2, std::vector<double>{std::log(3.0), 0});
  // p = (1/2, 1/2), q = (3/4, 1/4).
  EXPECT_NEAR(logit_discrepancy(ref, test, LossKind::kLogitsKl),
              0.5 * std::log(4.0 / 3.0), 1e-15);
}

TEST(LogitDiscrepancy, ConstantOffset) {
  SeededRng rng(4);
  Tensor ref(5, 7), shifted(5, 7);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    ref.data()[i] = rng.normal();
    shifted.data()[i] = ref.data()[i] + 0.5;
  }
  EXPECT_NEAR(logit_discrepancy(ref, shifted, LossKind::kLogitsMse), 0.25, 1e-15);
  // Softmax ignores a constant shift.
  EXPECT_NEAR(logit_discrepancy(ref, shifted, LossKind::kLogitsKl), 0.0, 1e-15);
}

TEST(LogitDiscrepancy, KlIsNonNegative) {
  SeededRng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor a(3, 6), b(3, 6);
    for (double& v : a.data()) v = 3 * rng.normal();
    for (double& v : b.data()) v = 3 * rng.normal();
    EXPECT_GE(logit_discrepancy(a, b, LossKind::kLogitsKl), 0.0);
  }
  EXPECT_THROW(logit_discrepancy(Tensor(2, 2), Tensor(2, 3), LossKind::kLogitsMse), Error);
}

TEST(LossKind, Names) {
  EXPECT_EQ(parse_loss_kind("logits_mse"), LossKind::kLogitsMse);
  EXPECT_EQ(parse_loss_kind(loss_kind_name(LossKind::kLogitsKl)), LossKind::kLogitsKl);
  EXPECT_THROW(parse_loss_kind("l1"), Error);
}

TEST(ProxyError, ZeroForIdenticalModels) {
  const auto cfg = small_config(2, 1);
  const Model m = spread_model(cfg);
  const auto items = items_for(cfg, 5, 1);
  EXPECT_EQ(proxy_error(m, m, items, LossKind::kLogitsMse).value, 0.0);
  EXPECT_EQ(code_of([&] { proxy_error(m, m, {}, LossKind::kLogitsMse); }),
            ErrorCode::kInvalidInput);
}

TEST(ApplyPlan, QuantizesListedLayers) {
  const auto cfg = small_config(3, 1);
  Model m = spread_model(cfg);
  BitPlan plan;
  plan.bits = {4, 32, 16};
  apply_plan(m, plan);
  EXPECT_EQ(m.layer_bits(0), 4);
  EXPECT_EQ(m.layer_bits(1), 32);
  EXPECT_EQ(m.layer_bits(2), 16);
  plan.bits = {4, 32};
  EXPECT_EQ(code_of([&] { apply_plan(m, plan); }), ErrorCode::kInvalidPlan);
  plan.bits = {4, 32, 7};
  EXPECT_EQ(code_of([&] { apply_plan(m, plan); }), ErrorCode::kInvalidPlan);
}

struct Fixture {
  Model fp;
  Model q;
  BitPlan plan;
  std::vector<TaskItem> items;
};

Fixture make_fixture(std::size_t layers, std::uint64_t seed, std::vector<int> bits,
                 std::size_t n_items = 12) {
  const auto cfg = small_config(layers, seed);
  Fixture s{spread_model(cfg), {}, {}, items_for(cfg, n_items, seed)};
  s.q = s.fp;
  s.plan.bits = std::move(bits);
  apply_plan(s.q, s.plan);
  return s;
}

void expect_same_quantization(const Model& a, const Model& b) {
  for (std::size_t l = 0; l < a.blocks.size(); ++l)
    for (std::size_t k = 0; k < kMatricesPerBlock; ++k) {
      const auto& qa = a.blocks[l].linear[k].quant;
      const auto& qb = b.blocks[l].linear[k].quant;
      ASSERT_EQ(qa.has_value(), qb.has_value());
      if (!qa) continue;
      EXPECT_TRUE(std::equal(qa->all_params().begin(), qa->all_params().end(),
                             qb->all_params().begin()));
      EXPECT_TRUE(std::equal(qa->codes().begin(), qa->codes().end(), qb->codes().begin()));
    }
}

TEST(Calibrate, IdentityGridChangesNothing) {
  Fixture s = make_fixture(2, 3, {4, 8});
  const Model before = s.q;
  CalibConfig cfg;
  cfg.grid = {1.0};
  const CalibResult r = calibrate(s.fp, s.q, s.plan, s.items, cfg);
  EXPECT_EQ(r.groups_changed, 0u);
  EXPECT_EQ(r.final_loss, r.initial_loss);
  EXPECT_FALSE(r.reverted);
  expect_same_quantization(before, s.q);
}

// Coordinate descent written against the public API only: every candidate
// is scored with a full forward pass of both models.
TEST(Calibrate, MatchesIndependentCoordinateDescent) {
  ModelConfig mc;
  mc.n_layers = 1;
  mc.d_model = 4;
  mc.n_heads = 1;
  mc.vocab = 16;
  mc.max_seq = 16;
  mc.d_ff = 4;
  mc.seed = 6;
  // Six 16-weight matrices: one group each.
  Fixture s{spread_model(mc), {}, {}, items_for(mc, 8, 6)};
  s.q = s.fp;
  s.plan.bits = {4};
  apply_plan(s.q, s.plan);
  Model oracle = s.q;

  const std::vector<double> grid = {0.5, 1.0};
  for (std::size_t k = 0; k < kMatricesPerBlock; ++k) {
    QTensor& qt = *oracle.blocks[0].linear[k].quant;
    ASSERT_EQ(qt.group_count(), 1u);
    const auto w = s.fp.blocks[0].linear[k].weight.data();
    double best = proxy_error(s.fp, oracle, s.items, LossKind::kLogitsMse).value;
    QuantParams best_p = qt.params(0);
    for (double m : grid) {
      const QuantParams p = fit_scaled(w, 4, m);
      qt.set_group(0, p, quantize_group(w, p));
      const double loss = proxy_error(s.fp, oracle, s.items, LossKind::kLogitsMse).value;
      if (loss < best) {
        best = loss;
        best_p = p;
      }
    }
    qt.set_group(0, best_p, quantize_group(w, best_p));
  }

  CalibConfig cfg;
  cfg.grid = grid;
  const CalibResult r = calibrate(s.fp, s.q, s.plan, s.items, cfg);
  expect_same_quantization(oracle, s.q);
  EXPECT_NEAR(r.final_loss, proxy_error(s.fp, oracle, s.items, LossKind::kLogitsMse).value,
              1e-12);
  EXPECT_EQ(r.groups_visited, 6u);
}

TEST(Calibrate, NeverWorseAndFullPrecisionFrozen) {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    Fixture s = make_fixture(3, seed, {4, 8, 4});
    const Model fp_before = s.fp;
    std::vector<Tensor> q_weights;
    for (const Block& b : s.q.blocks)
      for (const Linear& lin : b.linear) q_weights.push_back(lin.weight);
    CalibConfig cfg;
    cfg.subset_size = 3;  // a small subset can mislead; the revert guards it
    const CalibResult r = calibrate(s.fp, s.q, s.plan, s.items, cfg);
    EXPECT_LE(r.final_loss, r.initial_loss) << "seed " << seed;
    EXPECT_NEAR(r.final_loss, proxy_error(s.fp, s.q, s.items, LossKind::kLogitsMse).value,
                1e-12);
    EXPECT_LE(r.subset_final_loss, r.subset_initial_loss);
    const auto pa = s.fp.parameters();
    const auto pb = fp_before.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(*pa[i].second, *pb[i].second);
    std::size_t i = 0;
    for (const Block& b : s.q.blocks)
      for (const Linear& lin : b.linear) EXPECT_EQ(lin.weight, q_weights[i++]);
  }
}

TEST(Calibrate, KlLossAlsoNeverWorse) {
  Fixture s = make_fixture(2, 9, {4, 4});
  CalibConfig cfg;
  cfg.loss = LossKind::kLogitsKl;
  const CalibResult r = calibrate(s.fp, s.q, s.plan, s.items, cfg);
  EXPECT_LE(r.final_loss, r.initial_loss);
  EXPECT_GE(r.final_loss, 0.0);
}

TEST(Calibrate, Deterministic) {
  Fixture a = make_fixture(2, 5, {4, 16});
  Fixture b = make_fixture(2, 5, {4, 16});
  const CalibResult ra = calibrate(a.fp, a.q, a.plan, a.items, CalibConfig{});
  const CalibResult rb = calibrate(b.fp, b.q, b.plan, b.items, CalibConfig{});
  EXPECT_EQ(ra.final_loss, rb.final_loss);
  EXPECT_EQ(ra.multiplier_histogram, rb.multiplier_histogram);
  expect_same_quantization(a.q, b.q);
}

TEST(Calibrate, LayerOrderFollowsPriority) {
  Fixture s = make_fixture(4, 2, {4, 32, 4, 8});
  CalibConfig cfg;
  cfg.grid = {1.0};
  const std::vector<double> priority = {0.1, 5.0, 0.7, 0.7};
  const CalibResult r = calibrate(s.fp, s.q, s.plan, s.items, cfg, priority);
  EXPECT_EQ(r.layer_order, (std::vector<std::size_t>{2, 3, 0}));
  const CalibResult plain = calibrate(s.fp, s.q, s.plan, s.items, cfg);
  EXPECT_EQ(plain.layer_order, (std::vector<std::size_t>{0, 2, 3}));
}

TEST(Calibrate, HistogramCountsEveryVisitedGroup) {
  Fixture s = make_fixture(2, 7, {8, 4});
  const CalibResult r = calibrate(s.fp, s.q, s.plan, s.items, CalibConfig{});
  std::size_t total = 0;
  for (const auto& [m, n] : r.multiplier_histogram) total += n;
  EXPECT_EQ(total, r.groups_visited);
  // d=16, d_ff=32: 4*256 + 2*512 = 2048 weights per layer, 16 groups each.
  EXPECT_EQ(r.groups_visited, 32u);
}

TEST(Calibrate, RejectsBadArguments) {
  Fixture s = make_fixture(2, 1, {4, 8});
  CalibConfig cfg;
  cfg.grid = {0.9, 1.1};
  EXPECT_EQ(code_of([&] { calibrate(s.fp, s.q, s.plan, s.items, cfg); }),
            ErrorCode::kInvalidConfig);
  BitPlan other;
  other.bits = {4, 4};
  EXPECT_EQ(code_of([&] { calibrate(s.fp, s.q, other, s.items, CalibConfig{}); }),
            ErrorCode::kInvalidPlan);
  EXPECT_EQ(code_of([&] { calibrate(s.fp, s.q, s.plan, {}, CalibConfig{}); }),
            ErrorCode::kInvalidInput);
  Model wrong_shape = spread_model(small_config(3, 1));
  EXPECT_EQ(code_of([&] { calibrate(wrong_shape, s.q, s.plan, s.items, CalibConfig{}); }),
            ErrorCode::kInvalidPlan);
}

}  // namespace
}  // namespace taq
