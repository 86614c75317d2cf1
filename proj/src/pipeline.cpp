#include "taq/pipeline.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "taq/checkpoint.hpp"
#include "taq/error.hpp"
#include "taq/evaluate.hpp"
#include "taq/oracle.hpp"

namespace taq {

namespace {

[[noreturn]] void bad_value(std::string_view key, std::string_view value) {
  throw Error(ErrorCode::kInvalidConfig, "bad value '" + std::string(value) +
                                             "' for " + std::string(key));
}

template <typename T>
T parse_number(std::string_view key, std::string_view s) {
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) bad_value(key, s);
  return v;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Field {
  std::string name;
  std::function<void(PipelineConfig&, std::string_view)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

template <typename T>
Field number_field(std::string name, T PipelineConfig::*member) {
  return {name,
          [name, member](PipelineConfig& c, std::string_view v) {
            c.*member = parse_number<T>(name, v);
          },
          [member](const PipelineConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(c.*member);
            } else {
              return std::to_string(c.*member);
            }
          }};
}

template <typename T>
Field optional_field(std::string name, std::optional<T> PipelineConfig::*member) {
  return {name,
          [name, member](PipelineConfig& c, std::string_view v) {
            if (v.empty()) {
              (c.*member).reset();
            } else {
              c.*member = parse_number<T>(name, v);
            }
          },
          [member](const PipelineConfig& c) -> std::string {
            if (!(c.*member)) return "";
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(*(c.*member));
            } else {
              return std::to_string(*(c.*member));
            }
          }};
}

Field string_field(std::string name, std::string PipelineConfig::*member) {
  return {name,
          [member](PipelineConfig& c, std::string_view v) { c.*member = v; },
          [member](const PipelineConfig& c) { return c.*member; }};
}

const std::vector<Field>& fields() {
  using C = PipelineConfig;
  static const std::vector<Field> table = {
      string_field("checkpoint", &C::checkpoint),
      string_field("task", &C::task),
      number_field("seed", &C::seed),
      string_field("calib", &C::calib),
      number_field("calib_size", &C::calib_size),
      string_field("eval", &C::eval),
      number_field("eval_size", &C::eval_size),
      number_field("sweep_size", &C::sweep_size),
      number_field("max_new_tokens", &C::max_new_tokens),
      number_field("reservoir", &C::reservoir),
      number_field("alpha", &C::alpha),
      number_field("beta", &C::beta),
      string_field("contrast_task", &C::contrast_task),
      number_field("direction_prompts", &C::direction_prompts),
      number_field("frac16", &C::frac16),
      number_field("frac8", &C::frac8),
      number_field("edge_layers", &C::edge_layers),
      optional_field("budget", &C::budget),
      number_field("group_size", &C::group_size),
      string_field("grid", &C::grid),
      number_field("passes", &C::passes),
      string_field("loss", &C::loss),
      number_field("calib_subset", &C::calib_subset),
      string_field("plan", &C::plan),
      optional_field("gamma", &C::gamma),
      number_field("critical_fraction", &C::critical_fraction),
      number_field("high_bits", &C::high_bits),
      number_field("low_bits", &C::low_bits),
      number_field("probe_bits", &C::probe_bits),
      string_field("sweep_metric", &C::sweep_metric),
      number_field("uniform_edge_layers", &C::uniform_edge_layers),
      string_field("out", &C::out),
      string_field("quantized_out", &C::quantized_out),
  };
  return table;
}

const Field& find_field(std::string_view key) {
  for (const Field& f : fields()) {
    if (f.name == key) return f;
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown config key '" + std::string(key) + "'");
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Json report_header(const PipelineConfig& cfg, std::string_view command) {
  return {{"version", kVersion},
          {"command", command},
          {"seed", cfg.seed},
          {"config", cfg.to_json()}};
}

TaskItem item_from_json(const Json& j) {
  TaskItem item;
  item.task = parse_task(j.at("task").get<std::string>());
  item.prompt = j.at("prompt").get<std::vector<int>>();
  item.answer = j.at("answer").get<std::vector<int>>();
  return item;
}

// Mean-pooled block outputs, one row per sequence: out[layer] is
// (sequences x d).
std::vector<Tensor> pooled_activations(const Model& model,
                                       const SequenceBatch& batch) {
  const std::size_t d = model.config.d_model;
  std::vector<Tensor> out(model.blocks.size(), Tensor(batch.size(), d));
  forward(model, batch, [&](std::size_t layer, const Tensor& acts) {
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const std::size_t b = batch.offsets()[s];
      const std::size_t e = batch.offsets()[s + 1];
      for (std::size_t r = b; r < e; ++r) {
        for (std::size_t c = 0; c < d; ++c) out[layer](s, c) += acts(r, c);
      }
      for (std::size_t c = 0; c < d; ++c) {
        out[layer](s, c) /= static_cast<double>(e - b);
      }
    }
  });
  return out;
}

Json directions_section(const PipelineConfig& cfg, const Model& model,
                        std::span<const TaskItem> calib) {
  const TaskId contrast = cfg.contrast_id();
  const std::size_t n = std::min(cfg.direction_prompts, calib.size());
  const auto contrast_pool =
      gen_task({contrast, derive_seed(cfg.seed, "contrast")},
               std::max<std::size_t>(n, 1), {static_cast<int>(model.config.vocab)});
  SeededRng pick(derive_seed(cfg.seed, "contrast/pick"));
  SequenceBatch task_batch, contrast_batch;
  for (std::size_t j = 0; j < n; ++j) {
    task_batch.add(calib[j].prompt);
    contrast_batch.add(contrast_pool[pick.uniform_int(contrast_pool.size())].prompt);
  }
  const std::string policy =
      "seeded-draw:" + std::string(task_name(contrast));
  Json layers = Json::array();
  if (n > 0) {
    const auto task_acts = pooled_activations(model, task_batch);
    const auto contrast_acts = pooled_activations(model, contrast_batch);
    std::optional<TaskDirection> prev;
    for (std::size_t l = 0; l < model.blocks.size(); ++l) {
      TaskDirection dir = task_direction(l, task_acts[l], contrast_acts[l],
                                         cfg.task, policy);
      double norm = 0.0;
      for (double v : dir.vector) norm += v * v;
      Json entry{{"layer", l}, {"norm", std::sqrt(norm)}};
      if (prev) {
        const Alignment a = cosine_alignment(*prev, dir);
        entry["cosine_with_previous"] = a.cosine;
        entry["cosine_degenerate"] = a.degenerate;
      }
      layers.push_back(entry);
      prev = std::move(dir);
    }
  }
  return {{"contrast_policy", policy}, {"prompts", n}, {"layers", layers}};
}

CostModel cost_model(const Model& model) {
  return CostModel::uniform(model.blocks.size(), model.config.weights_per_layer());
}

struct TaqoOutcome {
  SensitivityCurve curve;
  CriticalSet set;
  BitPlan plan;
  bool gamma_auto = false;
};

SensitivityCurve sweep_curve(const PipelineConfig& cfg, const Model& model) {
  const auto items = sweep_items(cfg, static_cast<int>(model.config.vocab));
  MetricKind kind = MetricKind::kExactMatch;
  const ModelMetric em = [&](const Model& m) {
    return evaluate(m, items, cfg.max_new_tokens).exact_match;
  };
  if (cfg.sweep_metric == "proxy_loss") {
    kind = MetricKind::kProxyLossDelta;
  } else if (cfg.sweep_metric == "auto" && em(model) == 0.0) {
    // No exact matches to lose: fall back to the proxy loss.
    kind = MetricKind::kProxyLossDelta;
  }
  if (kind == MetricKind::kExactMatch) {
    return sensitivity_sweep(model, em, kind, cfg.probe_bits, cfg.group_size);
  }
  const CalibConfig cc = cfg.calib_config();
  const ModelMetric neg_loss = [&](const Model& m) {
    return -proxy_error(model, m, items, cc.loss).value;
  };
  return sensitivity_sweep(model, neg_loss, kind, cfg.probe_bits, cfg.group_size);
}

TaqoOutcome taqo_plan(const PipelineConfig& cfg, const Model& model) {
  TaqoOutcome out;
  out.curve = sweep_curve(cfg, model);
  double gamma = 0.0;
  if (cfg.gamma) {
    gamma = *cfg.gamma;
  } else {
    gamma = auto_gamma(out.curve.delta, cfg.critical_fraction);
    out.gamma_auto = true;
  }
  out.set = critical_set(out.curve.delta, gamma);
  out.plan = taqo_allocate(out.set, {cfg.high_bits, cfg.low_bits},
                           cost_model(model), cfg.budget, out.curve.delta);
  return out;
}

Json sweep_json(const TaqoOutcome& t) {
  Json j = to_json(t.curve);
  j["gamma"] = t.set.gamma;
  j["gamma_source"] = t.gamma_auto ? "auto" : "config";
  j["critical_layers"] = t.set.layers;
  return j;
}

int parse_uniform_bits(std::string_view plan) {
  constexpr std::string_view prefix = "uniform:";
  if (plan.substr(0, prefix.size()) != prefix) return 0;
  const int bits = parse_number<int>("plan", plan.substr(prefix.size()));
  if (!is_admissible_bits(bits)) bad_value("plan", plan);
  return bits;
}

}  // namespace

const std::vector<std::string>& PipelineConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const Field& f : fields()) out.push_back(f.name);
    return out;
  }();
  return names;
}

void PipelineConfig::set(std::string_view key, std::string_view value) {
  find_field(key).set(*this, trim(value));
}

std::string PipelineConfig::get(std::string_view key) const {
  return find_field(key).get(*this);
}

TaskId PipelineConfig::contrast_id() const {
  if (!contrast_task.empty()) return parse_task(contrast_task);
  const TaskId t = task_id();
  return kAllTasks[(static_cast<std::size_t>(t) + 1) % std::size(kAllTasks)];
}

std::vector<double> PipelineConfig::grid_values() const {
  std::vector<double> out;
  std::string_view rest = grid;
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    out.push_back(parse_number<double>("grid", trim(rest.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return out;
}

CalibConfig PipelineConfig::calib_config() const {
  CalibConfig c;
  c.grid = grid_values();
  c.passes = passes;
  c.loss = parse_loss_kind(loss);
  c.subset_size = calib_subset;
  return c;
}

RankConfig PipelineConfig::rank_config() const {
  RankConfig r;
  r.frac16 = frac16;
  r.frac8 = frac8;
  r.edge_layers = edge_layers;
  r.budget = budget;
  return r;
}

void PipelineConfig::validate() const {
  auto fail = [](const std::string& msg) {
    throw Error(ErrorCode::kInvalidConfig, msg);
  };
  task_id();
  contrast_id();
  if (alpha < 0.0 || beta < 0.0 || std::abs(alpha + beta - 1.0) > 1e-9) {
    fail("alpha and beta must be non-negative and sum to 1");
  }
  if (frac16 < 0.0 || frac8 < 0.0 || frac16 + frac8 > 1.0 + 1e-9) {
    fail("frac16 and frac8 must be non-negative with sum at most 1");
  }
  if (calib_size == 0 || eval_size == 0 || sweep_size == 0) {
    fail("item counts must be positive");
  }
  if (reservoir == 0) fail("reservoir must be positive");
  if (group_size == 0) fail("group_size must be positive");
  if (!(critical_fraction > 0.0 && critical_fraction <= 1.0)) {
    fail("critical_fraction must lie in (0, 1]");
  }
  if (gamma && !std::isfinite(*gamma)) fail("gamma must be finite");
  if (sweep_metric != "auto" && sweep_metric != "exact_match" &&
      sweep_metric != "proxy_loss") {
    fail("sweep_metric must be auto, exact_match or proxy_loss");
  }
  if (plan != "taq" && plan != "taqo" && parse_uniform_bits(plan) == 0) {
    fail("plan must be taq, taqo or uniform:<bits>");
  }
  const CalibConfig c = calib_config();
  if (std::find(c.grid.begin(), c.grid.end(), 1.0) == c.grid.end()) {
    fail("grid must contain 1.0");
  }
}

Json PipelineConfig::to_json() const {
  // Output destinations are left out so that runs differing only in where
  // they write produce identical reports.
  Json j = Json::object();
  for (const Field& f : fields()) {
    if (f.name == "out" || f.name == "quantized_out") continue;
    j[f.name] = f.get(*this);
  }
  return j;
}

void apply_config_text(PipelineConfig& cfg, std::string_view text) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::kInvalidConfig,
                  "config line " + std::to_string(line_no) + " has no '='");
    }
    cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  PipelineConfig cfg;
  apply_config_text(cfg, ss.str());
  return cfg;
}

std::vector<TaskItem> read_items(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::vector<TaskItem> items;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      items.push_back(item_from_json(Json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kInvalidInput, path.string() + ":" +
                                                std::to_string(line_no) + ": " +
                                                e.what());
    }
  }
  if (items.empty()) {
    throw Error(ErrorCode::kInsufficientData, path.string() + " holds no items");
  }
  return items;
}

void write_items(const std::filesystem::path& path,
                 std::span<const TaskItem> items) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (const TaskItem& item : items) {
    out << Json{{"task", task_name(item.task)},
                {"prompt", item.prompt},
                {"answer", item.answer}}
               .dump()
        << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

std::vector<TaskItem> calibration_items(const PipelineConfig& cfg, int vocab) {
  if (!cfg.calib.empty()) return read_items(cfg.calib);
  return gen_task({cfg.task_id(), derive_seed(cfg.seed, "calib")}, cfg.calib_size,
                  {vocab});
}

std::vector<TaskItem> evaluation_items(const PipelineConfig& cfg, int vocab) {
  if (!cfg.eval.empty()) return read_items(cfg.eval);
  return gen_task({cfg.task_id(), derive_seed(cfg.seed, "eval")}, cfg.eval_size,
                  {vocab});
}

std::vector<TaskItem> sweep_items(const PipelineConfig& cfg, int vocab) {
  return gen_task({cfg.task_id(), derive_seed(cfg.seed, "sweep")}, cfg.sweep_size,
                  {vocab});
}

LayerProfile score_layers(const Model& model, std::span<const TaskItem> items,
                          std::size_t reservoir_capacity, double alpha,
                          double beta, std::uint64_t seed) {
  if (items.empty()) {
    throw Error(ErrorCode::kInsufficientData, "calibration set is empty");
  }
  LayerScorer scorer(model.blocks.size(), model.config.d_model,
                     reservoir_capacity, seed);
  constexpr std::size_t kChunk = 64;
  for (std::size_t b = 0; b < items.size(); b += kChunk) {
    SequenceBatch batch;
    for (const TaskItem& item : items.subspan(b, std::min(kChunk, items.size() - b))) {
      batch.add(full_sequence(item));
    }
    forward(model, batch, [&](std::size_t layer, const Tensor& acts) {
      scorer.observe(layer, acts);
    });
  }
  return scorer.finalize(alpha, beta);
}

Json run_score(const PipelineConfig& cfg, const Model& model) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto calib = calibration_items(cfg, static_cast<int>(model.config.vocab));
  const LayerProfile profile = score_layers(model, calib, cfg.reservoir, cfg.alpha,
                                            cfg.beta, derive_seed(cfg.seed, "score"));
  Json report = report_header(cfg, "score");
  report["profile"] = to_json(profile);
  report["directions"] = directions_section(cfg, model, calib);
  report[kTimingsKey] = {{"total_s", seconds_since(t0)}};
  return report;
}

Json run_sweep(const PipelineConfig& cfg, const Model& model) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const TaqoOutcome t = taqo_plan(cfg, model);
  Json report = report_header(cfg, "sweep");
  report["sensitivity"] = sweep_json(t);
  report["plan"] = to_json(t.plan, cost_model(model));
  report[kTimingsKey] = {{"total_s", seconds_since(t0)}};
  return report;
}

Json run_quantize(const PipelineConfig& cfg, const Model& model, Model* quantized) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const int vocab = static_cast<int>(model.config.vocab);
  const auto calib = calibration_items(cfg, vocab);
  const CostModel cost = cost_model(model);
  Json report = report_header(cfg, "quantize");
  Json timings = Json::object();

  BitPlan plan;
  std::vector<double> priority;
  auto t0 = std::chrono::steady_clock::now();
  if (cfg.plan == "taq") {
    const LayerProfile profile =
        score_layers(model, calib, cfg.reservoir, cfg.alpha, cfg.beta,
                     derive_seed(cfg.seed, "score"));
    priority = profile.relevance();
    plan = allocate_rank(priority, cfg.rank_config(), cost);
    report["profile"] = to_json(profile);
    timings["score_s"] = seconds_since(t0);
  } else if (cfg.plan == "taqo") {
    const TaqoOutcome t = taqo_plan(cfg, model);
    priority = t.curve.delta;
    plan = t.plan;
    report["sensitivity"] = sweep_json(t);
    timings["sweep_s"] = seconds_since(t0);
  } else {
    plan = uniform_plan(model.blocks.size(), parse_uniform_bits(cfg.plan), cost,
                        cfg.uniform_edge_layers);
    plan.budget = cfg.budget;
    if (cfg.budget && plan.cost > *cfg.budget) {
      throw BudgetInfeasibleError("uniform plan costs " + std::to_string(plan.cost) +
                                      " bits, budget is " +
                                      std::to_string(*cfg.budget),
                                  plan.cost, *cfg.budget);
    }
  }
  report["plan"] = to_json(plan, cost);
  report["quantized_tensors"] = "attention and MLP weight matrices only";

  t0 = std::chrono::steady_clock::now();
  Model q = model;
  apply_plan(q, plan, cfg.group_size);
  const CalibConfig cc = cfg.calib_config();
  const CalibResult calib_result = calibrate(model, q, plan, calib, cc, priority);
  report["calibration"] = to_json(calib_result, cc);
  timings["calibrate_s"] = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  const auto eval = evaluation_items(cfg, vocab);
  report["eval"] = {{"full_precision", to_json(evaluate(model, eval, cfg.max_new_tokens))},
                    {"quantized", to_json(evaluate(q, eval, cfg.max_new_tokens))}};
  timings["eval_s"] = seconds_since(t0);

  if (!cfg.quantized_out.empty()) save_checkpoint(cfg.quantized_out, q, plan.bits);
  timings["total_s"] = seconds_since(t_start);
  report[kTimingsKey] = timings;
  if (quantized) *quantized = std::move(q);
  return report;
}

Json run_eval(const PipelineConfig& cfg, const Model& model) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto eval = evaluation_items(cfg, static_cast<int>(model.config.vocab));
  Json report = report_header(cfg, "eval");
  std::vector<int> bits;
  for (std::size_t l = 0; l < model.blocks.size(); ++l) bits.push_back(model.layer_bits(l));
  report["layer_bits"] = bits;
  report["eval"] = to_json(evaluate(model, eval, cfg.max_new_tokens));
  report[kTimingsKey] = {{"total_s", seconds_since(t0)}};
  return report;
}

void write_report(const PipelineConfig& cfg, const Json& report) {
  const std::string text = canonical_dump(report);
  if (cfg.out.empty() || cfg.out == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(cfg.out, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + cfg.out);
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + cfg.out);
}

}  // namespace taq
