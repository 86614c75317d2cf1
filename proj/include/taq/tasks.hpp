#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "taq/linalg.hpp"

namespace taq {

// Token ids 0-3 are reserved. Each task announces itself with a marker token
// taken from the top of the vocabulary; payload tokens come from the range
// in between.
inline constexpr int kPadToken = 0;
inline constexpr int kBosToken = 1;
inline constexpr int kSepToken = 2;
inline constexpr int kEosToken = 3;
inline constexpr int kFirstPayloadToken = 4;

enum class TaskId { kCopy, kModAdd, kSortSeq };

inline constexpr TaskId kAllTasks[] = {TaskId::kCopy, TaskId::kModAdd,
                                       TaskId::kSortSeq};

std::string_view task_name(TaskId task) noexcept;
// Throws InvalidConfig on an unknown name.
TaskId parse_task(std::string_view name);

int task_marker(TaskId task, int vocab) noexcept;
// Payload tokens are [kFirstPayloadToken, payload_end(vocab)).
int payload_end(int vocab) noexcept;

struct TaskItem {
  TaskId task = TaskId::kCopy;
  std::vector<int> prompt;
  std::vector<int> answer;

  bool operator==(const TaskItem&) const = default;
};

// copy: the payload; modadd: (a + b) mod vocab for payload {a, b};
// sortseq: the payload in ascending order.
std::vector<int> solve(TaskId task, std::span<const int> payload, int vocab);

// Prompt is [BOS, marker, payload..., SEP]; the answer is solve(payload).
TaskItem make_item(TaskId task, std::span<const int> payload, int vocab);

struct TaskGenConfig {
  int vocab = 64;
  std::size_t min_length = 3;
  std::size_t max_length = 8;
};

struct ToyTask {
  TaskId id = TaskId::kCopy;
  std::uint64_t seed = 0;
};

// n items drawn deterministically from the task's seed. Modular-addition
// operands whose sum lands on a reserved id are redrawn.
std::vector<TaskItem> gen_task(const ToyTask& task, std::size_t n,
                               const TaskGenConfig& cfg = {});

// Endless stream of items cycling through `tasks` in order; the trainer
// draws its batches from here.
class TaskSampler {
 public:
  TaskSampler(std::vector<TaskId> tasks, std::uint64_t seed,
              TaskGenConfig cfg = {});
  TaskItem next();

 private:
  std::vector<TaskId> tasks_;
  SeededRng rng_;
  TaskGenConfig cfg_;
  std::size_t turn_ = 0;
};

// prompt ++ answer ++ [EOS].
std::vector<int> full_sequence(const TaskItem& item);

}  // namespace taq
