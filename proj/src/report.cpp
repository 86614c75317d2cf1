#include "taq/report.hpp"

#include <cmath>
#include <cstdio>

#include "taq/error.hpp"

namespace taq {

namespace {

void emit(const Json& j, int indent, std::string& out) {
  const std::string pad(static_cast<std::size_t>(indent + 2), ' ');
  const std::string close(static_cast<std::size_t>(indent), ' ');
  switch (j.type()) {
    case Json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ",\n";
        first = false;
        out += pad + Json(it.key()).dump() + ": ";
        emit(it.value(), indent + 2, out);
      }
      out += "\n" + close + "}";
      return;
    }
    case Json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      out += "[\n";
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) out += ",\n";
        out += pad;
        emit(j[i], indent + 2, out);
      }
      out += "\n" + close + "]";
      return;
    }
    case Json::value_t::number_float: {
      const double v = j.get<double>();
      if (!std::isfinite(v)) {
        out += "null";
        return;
      }
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out += buf;
      return;
    }
    default:
      out += j.dump();
  }
}

template <typename T>
T field(const Json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidInput,
                std::string("report field '") + key + "': " + e.what());
  }
}

}  // namespace

std::string canonical_dump(const Json& doc) {
  std::string out;
  emit(doc, 0, out);
  out += "\n";
  return out;
}

Json to_json(const LayerProfile& profile) {
  Json layers = Json::array();
  for (const LayerStats& s : profile.layers) {
    layers.push_back({{"layer", s.layer},
                      {"entropy", s.entropy},
                      {"variance", s.variance},
                      {"stability", s.stability},
                      {"z_entropy", s.z_entropy},
                      {"z_stability", s.z_stability},
                      {"relevance", s.relevance},
                      {"reservoir_rows", s.reservoir_rows},
                      {"element_count", s.element_count},
                      {"entropy_degenerate", s.entropy_degenerate}});
  }
  return {{"layers", layers},
          {"z_entropy_degenerate", profile.z_entropy_degenerate},
          {"z_stability_degenerate", profile.z_stability_degenerate}};
}

LayerProfile profile_from_json(const Json& j) {
  LayerProfile p;
  p.z_entropy_degenerate = field<bool>(j, "z_entropy_degenerate");
  p.z_stability_degenerate = field<bool>(j, "z_stability_degenerate");
  for (const Json& l : field<Json>(j, "layers")) {
    LayerStats s;
    s.layer = field<std::size_t>(l, "layer");
    s.entropy = field<double>(l, "entropy");
    s.variance = field<double>(l, "variance");
    s.stability = field<double>(l, "stability");
    s.z_entropy = field<double>(l, "z_entropy");
    s.z_stability = field<double>(l, "z_stability");
    s.relevance = field<double>(l, "relevance");
    s.reservoir_rows = field<std::size_t>(l, "reservoir_rows");
    s.element_count = field<std::uint64_t>(l, "element_count");
    s.entropy_degenerate = field<bool>(l, "entropy_degenerate");
    p.layers.push_back(s);
  }
  return p;
}

Json to_json(const BitPlan& plan, const CostModel& cost) {
  const std::uint64_t full = cost.full_precision_cost();
  const std::uint64_t actual = plan_cost(plan, cost);
  // Quantized layers only: bits they would cost at full precision vs. now.
  std::uint64_t q_full = 0, q_actual = 0;
  for (std::size_t l = 0; l < plan.bits.size(); ++l) {
    if (plan.bits[l] == kFullPrecisionBits) continue;
    q_full += cost.weight_counts[l] * kFullPrecisionBits;
    q_actual += cost.weight_counts[l] * static_cast<std::uint64_t>(plan.bits[l]);
  }
  Json j{{"bits", plan.bits},
         {"pinned", plan.pinned},
         {"budget", plan.budget ? Json(*plan.budget) : Json(nullptr)},
         {"cost", actual},
         {"full_precision_cost", full},
         {"compression_ratio",
          actual ? static_cast<double>(full) / static_cast<double>(actual) : 0.0},
         {"quantized_layers_compression_ratio",
          q_actual ? static_cast<double>(q_full) / static_cast<double>(q_actual)
                   : 1.0},
         {"level_counts",
          {{"32", plan.count_at(32)},
           {"16", plan.count_at(16)},
           {"8", plan.count_at(8)},
           {"4", plan.count_at(4)}}}};
  return j;
}

BitPlan plan_from_json(const Json& j) {
  BitPlan plan;
  plan.bits = field<std::vector<int>>(j, "bits");
  plan.pinned = field<std::vector<std::size_t>>(j, "pinned");
  if (j.contains("budget") && !j.at("budget").is_null()) {
    plan.budget = field<std::uint64_t>(j, "budget");
  }
  plan.cost = field<std::uint64_t>(j, "cost");
  return plan;
}

Json to_json(const EvalResult& r) {
  return {{"exact_match", r.exact_match},
          {"token_f1", r.token_f1},
          {"n_items", r.n_items},
          {"both_empty", r.both_empty}};
}

Json to_json(const CalibResult& r, const CalibConfig& cfg) {
  Json hist = Json::array();
  for (const auto& [m, count] : r.multiplier_histogram) {
    hist.push_back({{"multiplier", m}, {"groups", count}});
  }
  return {{"loss_kind", loss_kind_name(cfg.loss)},
          {"grid", cfg.grid},
          {"passes", cfg.passes},
          {"subset_size", r.subset_size},
          {"layer_order", r.layer_order},
          {"initial_loss", r.initial_loss},
          {"final_loss", r.final_loss},
          {"subset_initial_loss", r.subset_initial_loss},
          {"subset_final_loss", r.subset_final_loss},
          {"groups_visited", r.groups_visited},
          {"groups_changed", r.groups_changed},
          {"reverted", r.reverted},
          {"multiplier_histogram", hist}};
}

Json to_json(const SensitivityCurve& c) {
  return {{"metric", metric_kind_name(c.metric)},
          {"probe_bits", c.probe_bits},
          {"baseline", c.baseline},
          {"probe_metric", c.probe_metric},
          {"delta", c.delta}};
}

Json to_json(const CriticalSet& s) {
  return {{"gamma", s.gamma}, {"layers", s.layers}};
}

std::vector<std::string> diff_reports(const Json& a, const Json& b) {
  Json lhs = a, rhs = b;
  if (lhs.is_object()) lhs.erase(kTimingsKey);
  if (rhs.is_object()) rhs.erase(kTimingsKey);
  std::vector<std::string> paths;
  for (const Json& op : Json::diff(lhs, rhs)) {
    const std::string path = op.at("path").get<std::string>();
    paths.push_back(path.empty() ? "/" : path);
  }
  return paths;
}

}  // namespace taq
