#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "taq/activation_stats.hpp"
#include "taq/allocator.hpp"
#include "taq/calibrator.hpp"
#include "taq/evaluate.hpp"
#include "taq/oracle.hpp"

namespace taq {

using Json = nlohmann::ordered_json;

// Key under which wall-clock measurements live; excluded from diffs.
inline constexpr const char* kTimingsKey = "timings";

// Two-space indented JSON with keys in insertion order and every float
// printed with 17 significant digits. Non-finite floats become null.
std::string canonical_dump(const Json& doc);

Json to_json(const LayerProfile& profile);
Json to_json(const BitPlan& plan, const CostModel& cost);
Json to_json(const EvalResult& result);
Json to_json(const CalibResult& result, const CalibConfig& cfg);
Json to_json(const SensitivityCurve& curve);
Json to_json(const CriticalSet& set);

// Inverses used to re-validate reports. Throw InvalidInput on missing or
// mistyped fields.
LayerProfile profile_from_json(const Json& j);
BitPlan plan_from_json(const Json& j);

// Paths (JSON pointer syntax) at which two reports differ, ignoring the
// top-level timings block. Empty when the reports agree.
std::vector<std::string> diff_reports(const Json& a, const Json& b);

}  // namespace taq
