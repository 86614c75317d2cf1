#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace taq {

enum class ErrorCode {
  kInvalidShape,
  kInvalidInput,
  kInvalidConfig,
  kConvergence,
  kCorruptCodes,
  kInsufficientData,
  kModelTooSmall,
  kBudgetInfeasible,
  kOracleTooLarge,
  kInvalidPlan,
  kTrainingDiverged,
  kIo,
};

const char* to_string(ErrorCode code);

// Process exit status for a failure of the given kind:
// 2 for configuration/input problems, 3 for infeasible budgets,
// 4 for numeric convergence failures, 1 otherwise.
int exit_status(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& message, double off_diagonal_norm);
  double off_diagonal_norm() const noexcept { return off_diagonal_norm_; }

 private:
  double off_diagonal_norm_;
};

class BudgetInfeasibleError : public Error {
 public:
  BudgetInfeasibleError(const std::string& message, std::uint64_t achieved_cost,
                        std::uint64_t budget,
                        std::optional<double> min_feasible_gamma = std::nullopt);
  std::uint64_t achieved_cost() const noexcept { return achieved_cost_; }
  std::uint64_t budget() const noexcept { return budget_; }
  // Only set by the oracle allocator: the smallest threshold at or above the
  // requested one whose plan fits the budget. Reported, never applied.
  std::optional<double> min_feasible_gamma() const noexcept {
    return min_feasible_gamma_;
  }

 private:
  std::uint64_t achieved_cost_;
  std::uint64_t budget_;
  std::optional<double> min_feasible_gamma_;
};

}  // namespace taq
