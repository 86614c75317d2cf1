#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "taq/model.hpp"
#include "taq/tasks.hpp"

namespace taq {

// Teacher-forced batch: inputs are each item's full sequence minus its last
// token; a target is the next token at positions that predict the answer
// or the closing EOS, and -1 elsewhere.
struct TrainBatch {
  SequenceBatch inputs;
  std::vector<int> targets;
};

TrainBatch make_train_batch(std::span<const TaskItem> items);

// Mean cross-entropy over target positions.
double compute_loss(const Model& model, const TrainBatch& batch);

struct LossAndGradient {
  double loss = 0.0;
  Model gradient;  // same layout as the model; only parameters() are used
};

LossAndGradient compute_loss_and_gradient(const Model& model,
                                          const TrainBatch& batch);

enum class Optimizer { kSgd, kAdam };

struct TrainConfig {
  std::size_t steps = 3000;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double clip_norm = 1.0;
  Optimizer optimizer = Optimizer::kAdam;
  std::uint64_t seed = 0;
  std::vector<TaskId> tasks{std::begin(kAllTasks), std::end(kAllTasks)};
  TaskGenConfig generator;
};

struct TrainResult {
  double initial_loss = 0.0;
  double final_loss = 0.0;  // running (EMA) loss at the last step
  std::vector<double> loss_history;  // raw batch loss per step
};

// Trains in place on a fresh stream of task items. Throws TrainingDiverged
// on a non-finite loss.
TrainResult train_toy(Model& model, const TrainConfig& cfg);

}  // namespace taq
