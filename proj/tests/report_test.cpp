#include "taq/report.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "taq/error.hpp"

namespace taq {
namespace {

TEST(CanonicalDump, ExactLayout) {
  Json j;
  j["b"] = 1;
  j["a"] = Json::array({0.1, true, "x"});
  j["e"] = Json::object();
  j["f"] = Json::array();
  j["n"] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_EQ(canonical_dump(j),
            "{\n"
            "  \"b\": 1,\n"
            "  \"a\": [\n"
            "    0.10000000000000001,\n"
            "    true,\n"
            "    \"x\"\n"
            "  ],\n"
            "  \"e\": {},\n"
            "  \"f\": [],\n"
            "  \"n\": null\n"
            "}\n");
}

TEST(CanonicalDump, FloatsRoundTripExactly) {
  SeededRng rng(3);
  Json j = Json::array();
  std::vector<double> values;
  for (int i = 0; i < 200; ++i) {
    values.push_back(rng.normal() * std::pow(10.0, static_cast<double>(rng.uniform_int(40)) - 20));
    j.push_back(values.back());
  }
  const Json back = Json::parse(canonical_dump(j));
  for (std::size_t i = 0; i < values.size(); ++i) EXPECT_EQ(back[i].get<double>(), values[i]);
  EXPECT_EQ(canonical_dump(back), canonical_dump(j));
}

TEST(DiffReports, IgnoresTopLevelTimingsOnly) {
  Json a = {{"eval", {{"exact_match", 50.0}}}, {"timings", {{"total_s", 1.0}}}};
  Json b = a;
  b["timings"]["total_s"] = 9.0;
  EXPECT_TRUE(diff_reports(a, b).empty());
  b["eval"]["exact_match"] = 51.0;
  EXPECT_EQ(diff_reports(a, b), (std::vector<std::string>{"/eval/exact_match"}));
  // A nested key of the same name is compared.
  Json c = {{"x", {{"timings", 1}}}};
  Json d = {{"x", {{"timings", 2}}}};
  EXPECT_EQ(diff_reports(c, d), (std::vector<std::string>{"/x/timings"}));
}

TEST(DiffReports, AddedRemovedAndEscapedKeys) {
  const Json a = {{"a/b", 1}, {"keep", 2}};
  const Json b = {{"keep", 2}, {"new", 3}};
  const auto paths = diff_reports(a, b);
  ASSERT_EQ(paths.size(), 2u);
  EXPECT_EQ(paths[0], "/a~1b");
  EXPECT_EQ(paths[1], "/new");
  EXPECT_EQ(diff_reports(Json(1), Json("x")), (std::vector<std::string>{"/"}));
}

LayerProfile sample_profile() {
  LayerProfile p;
  for (std::size_t l = 0; l < 3; ++l) {
    LayerStats s;
    s.layer = l;
    s.entropy = 0.1 * static_cast<double>(l) + 1.0 / 3.0;
    s.variance = 2.5 + static_cast<double>(l);
    s.stability = -s.variance;
    s.z_entropy = static_cast<double>(l) - 1.0;
    s.z_stability = 1.0 - static_cast<double>(l);
    s.relevance = 0.0;
    s.reservoir_rows = 256;
    s.element_count = 1000 + l;
    s.entropy_degenerate = l == 2;
    p.layers.push_back(s);
  }
  p.z_stability_degenerate = true;
  return p;
}

TEST(ProfileJson, RoundTrip) {
  const LayerProfile p = sample_profile();
  const LayerProfile back = profile_from_json(Json::parse(canonical_dump(to_json(p))));
  ASSERT_EQ(back.layers.size(), 3u);
  for (std::size_t l = 0; l < 3; ++l) {
    EXPECT_EQ(back.layers[l].entropy, p.layers[l].entropy);
    EXPECT_EQ(back.layers[l].variance, p.layers[l].variance);
    EXPECT_EQ(back.layers[l].z_entropy, p.layers[l].z_entropy);
    EXPECT_EQ(back.layers[l].element_count, p.layers[l].element_count);
    EXPECT_EQ(back.layers[l].entropy_degenerate, p.layers[l].entropy_degenerate);
  }
  EXPECT_TRUE(back.z_stability_degenerate);
  EXPECT_FALSE(back.z_entropy_degenerate);
}

TEST(ProfileJson, MissingFieldIsInvalidInput) {
  Json j = to_json(sample_profile());
  j["layers"][1].erase("variance");
  try {
    profile_from_json(j);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidInput);
  }
}

TEST(PlanJson, CostsAndRatios) {
  const CostModel cost = CostModel::uniform(4, 10);
  BitPlan plan;
  plan.bits = {32, 16, 8, 4};
  plan.pinned = {0};
  plan.budget = 700;
  plan.cost = plan_cost(plan, cost);
  const Json j = to_json(plan, cost);
  // Hand sums: 10 * (32 + 16 + 8 + 4) = 600; full precision 10 * 128 = 1280;
  // quantized layers 10 * 96 = 960 at full precision vs 10 * 28 = 280.
  EXPECT_EQ(j["cost"], 600u);
  EXPECT_EQ(j["full_precision_cost"], 1280u);
  EXPECT_EQ(j["compression_ratio"].get<double>(), 1280.0 / 600.0);
  EXPECT_EQ(j["quantized_layers_compression_ratio"].get<double>(), 960.0 / 280.0);
  EXPECT_EQ(j["level_counts"]["8"], 1u);
  EXPECT_EQ(plan_from_json(j), plan);
}

TEST(PlanJson, UniformSixteenHalvesTheCost) {
  const CostModel cost = CostModel::uniform(8, 32768);
  const Json j = to_json(uniform_plan(8, 16, cost), cost);
  EXPECT_EQ(j["compression_ratio"].get<double>(), 2.0);
  EXPECT_TRUE(j["budget"].is_null());
  EXPECT_FALSE(plan_from_json(j).budget);
}

TEST(SmallSections, Fields) {
  EvalResult r;
  r.exact_match = 12.5;
  r.token_f1 = 40.0;
  r.n_items = 8;
  EXPECT_EQ(to_json(r)["n_items"], 8u);
  SensitivityCurve c;
  c.delta = {1.0, 0.0};
  c.metric = MetricKind::kProxyLossDelta;
  EXPECT_EQ(to_json(c)["metric"], "proxy_loss_delta");
  EXPECT_EQ(to_json(CriticalSet{0.5, {1}})["layers"], Json::array({1}));
  CalibResult cr;
  cr.multiplier_histogram = {{0.9, 3}, {1.0, 5}};
  const Json cj = to_json(cr, CalibConfig{});
  EXPECT_EQ(cj["multiplier_histogram"][1]["groups"], 5u);
  EXPECT_EQ(cj["loss_kind"], "logits_mse");
}

}  // namespace
}  // namespace taq
