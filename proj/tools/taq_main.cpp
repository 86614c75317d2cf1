// Command-line front end: score, quantize, sweep, eval and report-diff over
// toy-model checkpoints, plus train and gen to produce those inputs.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "taq/checkpoint.hpp"
#include "taq/error.hpp"
#include "taq/pipeline.hpp"
#include "taq/train.hpp"

namespace {

using namespace taq;

struct PipelineVerb {
  CLI::App* app = nullptr;
  std::string config_path;
  std::map<std::string, std::string> flags;
};

PipelineVerb add_pipeline_verb(CLI::App& root, const std::string& name,
                               const std::string& help) {
  PipelineVerb v;
  v.app = root.add_subcommand(name, help);
  v.app->add_option("--config", v.config_path, "key=value config file");
  for (const std::string& key : PipelineConfig::keys()) {
    v.app->add_option("--" + key, v.flags[key]);
  }
  return v;
}

PipelineConfig resolve(const PipelineVerb& v) {
  PipelineConfig cfg;
  if (!v.config_path.empty()) cfg = load_config(v.config_path);
  for (const auto& [key, value] : v.flags) {
    if (v.app->count("--" + key) > 0) cfg.set(key, value);
  }
  return cfg;
}

Model load_model(const PipelineConfig& cfg) {
  if (cfg.checkpoint.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "a checkpoint is required");
  }
  return load_checkpoint(cfg.checkpoint).model;
}

Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidInput, path + ": " + e.what());
  }
}

std::vector<TaskId> parse_task_list(const std::string& list) {
  std::vector<TaskId> out;
  std::stringstream ss(list);
  std::string name;
  while (std::getline(ss, name, ',')) out.push_back(parse_task(name));
  if (out.empty()) throw Error(ErrorCode::kInvalidConfig, "no tasks given");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task-aware post-training quantization for the toy transformer"};
  app.require_subcommand(1);

  auto score = add_pipeline_verb(app, "score", "Per-layer relevance profile");
  auto quantize = add_pipeline_verb(app, "quantize",
                                    "Allocate bits, calibrate, write checkpoint");
  auto sweep = add_pipeline_verb(app, "sweep", "Per-layer sensitivity sweep");
  auto eval = add_pipeline_verb(app, "eval", "Exact match and token F1");

  auto* diff = app.add_subcommand("report-diff",
                                  "Compare two reports, ignoring timings");
  std::string diff_a, diff_b;
  diff->add_option("a", diff_a)->required();
  diff->add_option("b", diff_b)->required();

  auto* train = app.add_subcommand("train", "Train a toy model checkpoint");
  ModelConfig model_cfg;
  TrainConfig train_cfg;
  std::string train_out, train_tasks = "copy,modadd,sortseq", optimizer = "adam";
  train->add_option("--out", train_out)->required();
  train->add_option("--seed", model_cfg.seed);
  train->add_option("--n_layers", model_cfg.n_layers);
  train->add_option("--d_model", model_cfg.d_model);
  train->add_option("--n_heads", model_cfg.n_heads);
  train->add_option("--d_ff", model_cfg.d_ff);
  train->add_option("--steps", train_cfg.steps);
  train->add_option("--batch", train_cfg.batch_size);
  train->add_option("--lr", train_cfg.learning_rate);
  train->add_option("--optimizer", optimizer)->check(CLI::IsMember({"sgd", "adam"}));
  train->add_option("--tasks", train_tasks);

  auto* gen = app.add_subcommand("gen", "Write task items as JSONL");
  std::string gen_task_name = "copy", gen_out;
  std::uint64_t gen_seed = 0;
  std::size_t gen_n = 512;
  gen->add_option("--task", gen_task_name);
  gen->add_option("--seed", gen_seed);
  gen->add_option("--n", gen_n);
  gen->add_option("--out", gen_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int status = app.exit(e);
    return status == 0 ? 0 : 2;
  }

  try {
    if (diff->parsed()) {
      const auto paths = diff_reports(read_json(diff_a), read_json(diff_b));
      for (const std::string& p : paths) std::cout << p << '\n';
      return paths.empty() ? 0 : 1;
    }
    if (train->parsed()) {
      train_cfg.seed = model_cfg.seed;
      train_cfg.tasks = parse_task_list(train_tasks);
      train_cfg.optimizer = optimizer == "adam" ? Optimizer::kAdam : Optimizer::kSgd;
      Model model = init_model(model_cfg);
      const TrainResult r = train_toy(model, train_cfg);
      save_checkpoint(train_out, model);
      std::cerr << "loss " << r.initial_loss << " -> " << r.final_loss << '\n';
      return 0;
    }
    if (gen->parsed()) {
      write_items(gen_out, gen_task({parse_task(gen_task_name), gen_seed}, gen_n));
      return 0;
    }
    for (const PipelineVerb* v : {&score, &quantize, &sweep, &eval}) {
      if (!v->app->parsed()) continue;
      const PipelineConfig cfg = resolve(*v);
      cfg.validate();
      const Model model = load_model(cfg);
      Json report;
      if (v == &score) report = run_score(cfg, model);
      if (v == &quantize) report = run_quantize(cfg, model);
      if (v == &sweep) report = run_sweep(cfg, model);
      if (v == &eval) report = run_eval(cfg, model);
      write_report(cfg, report);
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_status(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
