#include "taq/error.hpp"

namespace taq {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidShape: return "InvalidShape";
    case ErrorCode::kInvalidInput: return "InvalidInput";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kConvergence: return "ConvergenceError";
    case ErrorCode::kCorruptCodes: return "CorruptCodes";
    case ErrorCode::kInsufficientData: return "InsufficientData";
    case ErrorCode::kModelTooSmall: return "ModelTooSmall";
    case ErrorCode::kBudgetInfeasible: return "BudgetInfeasible";
    case ErrorCode::kOracleTooLarge: return "OracleTooLarge";
    case ErrorCode::kInvalidPlan: return "InvalidPlan";
    case ErrorCode::kTrainingDiverged: return "TrainingDiverged";
    case ErrorCode::kIo: return "IoError";
  }
  return "Unknown";
}

int exit_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidShape:
    case ErrorCode::kInvalidInput:
    case ErrorCode::kInvalidConfig:
    case ErrorCode::kInsufficientData:
    case ErrorCode::kModelTooSmall:
    case ErrorCode::kInvalidPlan:
    case ErrorCode::kIo:
      return 2;
    case ErrorCode::kBudgetInfeasible:
      return 3;
    case ErrorCode::kConvergence:
    case ErrorCode::kTrainingDiverged:
      return 4;
    case ErrorCode::kCorruptCodes:
    case ErrorCode::kOracleTooLarge:
      return 1;
  }
  return 1;
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code) {}

ConvergenceError::ConvergenceError(const std::string& message,
                                   double off_diagonal_norm)
    : Error(ErrorCode::kConvergence, message),
      off_diagonal_norm_(off_diagonal_norm) {}

BudgetInfeasibleError::BudgetInfeasibleError(
    const std::string& message, std::uint64_t achieved_cost,
    std::uint64_t budget, std::optional<double> min_feasible_gamma)
    : Error(ErrorCode::kBudgetInfeasible, message),
      achieved_cost_(achieved_cost),
      budget_(budget),
      min_feasible_gamma_(min_feasible_gamma) {}

}  // namespace taq
