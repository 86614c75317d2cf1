#include "taq/tasks.hpp"

#include <algorithm>

#include "taq/error.hpp"

namespace taq {

std::string_view task_name(TaskId task) noexcept {
  switch (task) {
    case TaskId::kCopy: return "copy";
    case TaskId::kModAdd: return "modadd";
    case TaskId::kSortSeq: return "sortseq";
  }
  return "unknown";
}

TaskId parse_task(std::string_view name) {
  for (TaskId t : kAllTasks) {
    if (task_name(t) == name) return t;
  }
  throw Error(ErrorCode::kInvalidConfig,
              "unknown task '" + std::string(name) +
                  "' (expected copy, modadd or sortseq)");
}

int task_marker(TaskId task, int vocab) noexcept {
  return vocab - 3 + static_cast<int>(task);
}

int payload_end(int vocab) noexcept { return vocab - 3; }

std::vector<int> solve(TaskId task, std::span<const int> payload, int vocab) {
  switch (task) {
    case TaskId::kCopy:
      return {payload.begin(), payload.end()};
    case TaskId::kModAdd:
      if (payload.size() != 2) {
        throw Error(ErrorCode::kInvalidInput, "modadd takes two operands");
      }
      return {(payload[0] + payload[1]) % vocab};
    case TaskId::kSortSeq: {
      std::vector<int> out(payload.begin(), payload.end());
      std::sort(out.begin(), out.end());
      return out;
    }
  }
  return {};
}

TaskItem make_item(TaskId task, std::span<const int> payload, int vocab) {
  TaskItem item;
  item.task = task;
  item.prompt.reserve(payload.size() + 3);
  item.prompt.push_back(kBosToken);
  item.prompt.push_back(task_marker(task, vocab));
  item.prompt.insert(item.prompt.end(), payload.begin(), payload.end());
  item.prompt.push_back(kSepToken);
  item.answer = solve(task, payload, vocab);
  return item;
}

namespace {

TaskItem draw_item(TaskId task, SeededRng& rng, const TaskGenConfig& cfg) {
  const auto span = static_cast<std::uint64_t>(payload_end(cfg.vocab) -
                                               kFirstPayloadToken);
  auto token = [&] {
    return kFirstPayloadToken + static_cast<int>(rng.uniform_int(span));
  };
  std::vector<int> payload;
  if (task == TaskId::kModAdd) {
    for (;;) {
      const int a = token();
      const int b = token();
      if ((a + b) % cfg.vocab >= kFirstPayloadToken) {
        payload = {a, b};
        break;
      }
    }
  } else {
    const std::size_t len =
        cfg.min_length +
        rng.uniform_int(static_cast<std::uint64_t>(cfg.max_length - cfg.min_length + 1));
    payload.resize(len);
    for (int& t : payload) t = token();
  }
  return make_item(task, payload, cfg.vocab);
}

void check_config(const TaskGenConfig& cfg) {
  if (cfg.vocab < 8 || cfg.min_length == 0 || cfg.max_length < cfg.min_length) {
    throw Error(ErrorCode::kInvalidConfig, "bad task generator configuration");
  }
}

}  // namespace

std::vector<TaskItem> gen_task(const ToyTask& task, std::size_t n,
                               const TaskGenConfig& cfg) {
  check_config(cfg);
  SeededRng rng(derive_seed(task.seed, task_name(task.id)));
  std::vector<TaskItem> items;
  items.reserve(n);
  for (std::size_t i = 0; i < n; ++i) items.push_back(draw_item(task.id, rng, cfg));
  return items;
}

TaskSampler::TaskSampler(std::vector<TaskId> tasks, std::uint64_t seed,
                         TaskGenConfig cfg)
    : tasks_(std::move(tasks)), rng_(derive_seed(seed, "sampler")), cfg_(cfg) {
  check_config(cfg_);
  if (tasks_.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "sampler needs at least one task");
  }
}

TaskItem TaskSampler::next() {
  const TaskId task = tasks_[turn_++ % tasks_.size()];
  return draw_item(task, rng_, cfg_);
}

std::vector<int> full_sequence(const TaskItem& item) {
  std::vector<int> seq = item.prompt;
  seq.insert(seq.end(), item.answer.begin(), item.answer.end());
  seq.push_back(kEosToken);
  return seq;
}

}  // namespace taq
