#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "taq/model.hpp"
#include "taq/tasks.hpp"

namespace taq {

inline constexpr std::size_t kDefaultMaxNewTokens = 16;

struct ItemScore {
  bool exact = false;
  double f1 = 0.0;          // percent
  bool both_empty = false;  // scored as a perfect match
};

// Token F1 on multisets: 2PR/(P+R). An empty prediction against an empty
// answer scores 100 and is flagged; one empty side scores 0.
ItemScore score_prediction(std::span<const int> predicted,
                           std::span<const int> answer);

struct EvalResult {
  double exact_match = 0.0;  // percent
  double token_f1 = 0.0;     // percent
  std::size_t n_items = 0;
  std::size_t both_empty = 0;
};

EvalResult score_predictions(std::span<const std::vector<int>> predictions,
                             std::span<const TaskItem> items);

// Greedy decoding from each prompt until EOS, max_new_tokens, or max_seq.
// The returned tokens exclude the EOS. Ties in the argmax go to the lowest id.
std::vector<std::vector<int>> greedy_decode(const Model& model,
                                            std::span<const TaskItem> items,
                                            std::size_t max_new_tokens);

// Throws InvalidInput on an empty item list.
EvalResult evaluate(const Model& model, std::span<const TaskItem> items,
                    std::size_t max_new_tokens = kDefaultMaxNewTokens);

}  // namespace taq
