#include "taq/train.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "taq/error.hpp"
#include "taq/evaluate.hpp"

namespace taq {
namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.seed = 21;
  return cfg;
}

TEST(MakeTrainBatch, TargetsCoverAnswerAndEos) {
  const TaskItem item = make_item(TaskId::kCopy, std::vector<int>{7, 8}, 64);
  const TrainBatch b = make_train_batch(std::span(&item, 1));
  // seq = BOS m 7 8 SEP 7 8 EOS; inputs drop EOS.
  ASSERT_EQ(b.inputs.total_tokens(), 7u);
  EXPECT_EQ(b.targets, (std::vector<int>{-1, -1, -1, -1, 7, 8, kEosToken}));
}

TEST(Loss, ZeroModelIsLogVocab) {
  const Model m = zero_model(ModelConfig{});
  const auto items = gen_task({TaskId::kSortSeq, 3}, 4);
  EXPECT_NEAR(compute_loss(m, make_train_batch(items)), std::log(64.0), 1e-12);
}

TEST(Gradient, MatchesCentralDifferences) {
  Model m = init_model(tiny_config());
  // Larger weights than the 0.02 init so every path carries signal.
  SeededRng perturb(3);
  for (auto& [name, t] : m.parameters())
    for (double& v : t->data()) v += 0.2 * perturb.normal();
  const auto items = gen_task({TaskId::kCopy, 8}, 3);
  const TrainBatch batch = make_train_batch(items);
  const LossAndGradient lg = compute_loss_and_gradient(m, batch);
  EXPECT_NEAR(lg.loss, compute_loss(m, batch), 1e-12);

  auto params = m.parameters();
  const auto grads = lg.gradient.parameters();
  SeededRng rng(99);
  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t p = rng.uniform_int(params.size());
    Tensor& t = *params[p].second;
    const std::size_t i = rng.uniform_int(t.size());
    const double saved = t.data()[i];
    t.data()[i] = saved + h;
    const double up = compute_loss(m, batch);
    t.data()[i] = saved - h;
    const double down = compute_loss(m, batch);
    t.data()[i] = saved;
    const double numeric = (up - down) / (2 * h);
    const double analytic = grads[p].second->data()[i];
    const double rel = std::abs(analytic - numeric) /
                       std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    EXPECT_LT(rel, 1e-4) << params[p].first << "[" << i << "] analytic "
                         << analytic << " numeric " << numeric;
  }
}

TEST(Train, ZeroStepsLeavesModelUnchanged) {
  ModelConfig mc = tiny_config();
  Model m = init_model(mc);
  const Model before = m;
  TrainConfig cfg;
  cfg.steps = 0;
  train_toy(m, cfg);
  const auto a = m.parameters();
  const auto b = before.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i].second, *b[i].second);
}

TEST(Train, DeterministicAndLossDecreases) {
  TrainConfig cfg;
  cfg.steps = 150;
  cfg.seed = 5;
  ModelConfig mc = tiny_config();
  mc.d_model = 16;
  Model a = init_model(mc), b = init_model(mc);
  const TrainResult ra = train_toy(a, cfg);
  const TrainResult rb = train_toy(b, cfg);
  EXPECT_EQ(ra.loss_history, rb.loss_history);
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(*pa[i].second, *pb[i].second);
  ASSERT_EQ(ra.loss_history.size(), 150u);
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    head += ra.loss_history[i];
    tail += ra.loss_history[140 + i];
  }
  EXPECT_LT(tail, head);
}

TEST(Train, SgdAlsoReducesLoss) {
  TrainConfig cfg;
  cfg.steps = 150;
  cfg.optimizer = Optimizer::kSgd;
  cfg.learning_rate = 0.5;
  Model m = init_model(tiny_config());
  const TrainResult r = train_toy(m, cfg);
  EXPECT_LT(r.loss_history.back(), r.initial_loss);
}

TEST(Train, NonFiniteLossIsDivergence) {
  Model m = init_model(tiny_config());
  m.unembed.data()[0] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  cfg.steps = 1;
  try {
    train_toy(m, cfg);
    FAIL() << "expected TrainingDiverged";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTrainingDiverged);
  }
}

// Regression bound for the default recipe on the copy task.
TEST(Train, DefaultCopyRunReachesNinetyExactMatch) {
  ModelConfig mc;
  mc.seed = 1;
  Model m = init_model(mc);
  TrainConfig cfg;
  cfg.seed = 1;
  cfg.tasks = {TaskId::kCopy};
  train_toy(m, cfg);
  const EvalResult r = evaluate(m, gen_task({TaskId::kCopy, 1234}, 200));
  EXPECT_GE(r.exact_match, 90.0);
}

}  // namespace
}  // namespace taq
