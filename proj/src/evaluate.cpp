#include "taq/evaluate.hpp"

#include <algorithm>
#include <map>

#include "taq/error.hpp"

namespace taq {

ItemScore score_prediction(std::span<const int> predicted,
                           std::span<const int> answer) {
  ItemScore s;
  s.exact = std::equal(predicted.begin(), predicted.end(), answer.begin(),
                       answer.end());
  if (predicted.empty() && answer.empty()) {
    s.both_empty = true;
    s.f1 = 100.0;
    return s;
  }
  if (predicted.empty() || answer.empty()) return s;
  std::map<int, int> counts;
  for (int t : answer) ++counts[t];
  std::size_t common = 0;
  for (int t : predicted) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return s;
  const double precision = static_cast<double>(common) / predicted.size();
  const double recall = static_cast<double>(common) / answer.size();
  s.f1 = 100.0 * 2.0 * precision * recall / (precision + recall);
  return s;
}

EvalResult score_predictions(std::span<const std::vector<int>> predictions,
                             std::span<const TaskItem> items) {
  if (items.empty()) {
    throw Error(ErrorCode::kInvalidInput, "cannot evaluate zero items");
  }
  if (predictions.size() != items.size()) {
    throw Error(ErrorCode::kInvalidInput, "prediction count mismatch");
  }
  EvalResult r;
  r.n_items = items.size();
  std::size_t exact = 0;
  double f1 = 0.0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const ItemScore s = score_prediction(predictions[i], items[i].answer);
    exact += s.exact ? 1 : 0;
    f1 += s.f1;
    r.both_empty += s.both_empty ? 1 : 0;
  }
  r.exact_match = 100.0 * static_cast<double>(exact) / items.size();
  r.token_f1 = f1 / items.size();
  return r;
}

std::vector<std::vector<int>> greedy_decode(const Model& model,
                                            std::span<const TaskItem> items,
                                            std::size_t max_new_tokens) {
  const std::size_t vocab = model.config.vocab;
  std::vector<std::vector<int>> seqs;
  seqs.reserve(items.size());
  for (const TaskItem& item : items) seqs.push_back(item.prompt);
  std::vector<std::vector<int>> generated(items.size());
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (seqs[i].size() > model.config.max_seq) {
      throw Error(ErrorCode::kInvalidInput, "prompt exceeds max_seq");
    }
    if (max_new_tokens > 0 && seqs[i].size() < model.config.max_seq) {
      active.push_back(i);
    }
  }
  while (!active.empty()) {
    SequenceBatch batch;
    for (std::size_t i : active) batch.add(seqs[i]);
    const Tensor logits = forward(model, batch);
    std::vector<std::size_t> still;
    for (std::size_t a = 0; a < active.size(); ++a) {
      const std::size_t i = active[a];
      const auto row = logits.row(batch.offsets()[a + 1] - 1);
      const int next = static_cast<int>(
          std::max_element(row.begin(), row.begin() + static_cast<long>(vocab)) -
          row.begin());
      if (next == kEosToken) continue;
      seqs[i].push_back(next);
      generated[i].push_back(next);
      if (generated[i].size() < max_new_tokens &&
          seqs[i].size() < model.config.max_seq) {
        still.push_back(i);
      }
    }
    active = std::move(still);
  }
  return generated;
}

EvalResult evaluate(const Model& model, std::span<const TaskItem> items,
                    std::size_t max_new_tokens) {
  if (items.empty()) {
    throw Error(ErrorCode::kInvalidInput, "cannot evaluate zero items");
  }
  const auto predictions = greedy_decode(model, items, max_new_tokens);
  return score_predictions(predictions, items);
}

}  // namespace taq
