#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "taq/activation_stats.hpp"
#include "taq/allocator.hpp"
#include "taq/calibrator.hpp"
#include "taq/model.hpp"
#include "taq/report.hpp"
#include "taq/tasks.hpp"

namespace taq {

inline constexpr const char* kVersion = "0.1.0";

// Every pipeline knob. Each field has a key of the same name in config
// files and a same-named command-line flag.
struct PipelineConfig {
  std::string checkpoint;
  std::string task = "copy";
  std::uint64_t seed = 0;
  std::string calib;  // JSONL file; generated from the seed when empty
  std::size_t calib_size = 512;
  std::string eval;  // JSONL file; generated from the seed when empty
  std::size_t eval_size = 200;
  std::size_t sweep_size = 200;
  std::size_t max_new_tokens = 16;
  std::size_t reservoir = kDefaultReservoirCapacity;
  double alpha = 0.5;
  double beta = 0.5;
  std::string contrast_task;  // empty: the next task in copy/modadd/sortseq
  std::size_t direction_prompts = 64;
  double frac16 = 0.15;
  double frac8 = 0.45;
  std::size_t edge_layers = 2;
  std::optional<std::uint64_t> budget;
  std::size_t group_size = kDefaultGroupSize;
  std::string grid = "0.8,0.9,1.0,1.1,1.2";
  std::size_t passes = 1;
  std::string loss = "logits_mse";
  std::size_t calib_subset = 32;
  std::string plan = "taq";
  std::optional<double> gamma;
  double critical_fraction = 0.25;
  int high_bits = 16;
  int low_bits = 4;
  int probe_bits = 4;
  std::string sweep_metric = "auto";  // auto | exact_match | proxy_loss
  std::size_t uniform_edge_layers = 0;
  std::string out;            // report path; empty or "-" for stdout
  std::string quantized_out;  // quantized checkpoint path, optional

  static const std::vector<std::string>& keys();
  // Throws InvalidConfig on an unknown key or unparsable value.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;

  // Throws InvalidConfig when a value is out of range.
  void validate() const;

  TaskId task_id() const { return parse_task(task); }
  TaskId contrast_id() const;
  CalibConfig calib_config() const;
  RankConfig rank_config() const;
  std::vector<double> grid_values() const;

  Json to_json() const;
};

// Flat key=value text, '#' starts a comment, blank lines ignored.
PipelineConfig load_config(const std::filesystem::path& path);
void apply_config_text(PipelineConfig& cfg, std::string_view text);

// One item per line: {"task": "copy", "prompt": [...], "answer": [...]}.
// Throws IoError when unreadable, InvalidInput on malformed lines and
// InsufficientData when the file holds no items.
std::vector<TaskItem> read_items(const std::filesystem::path& path);
void write_items(const std::filesystem::path& path,
                 std::span<const TaskItem> items);

// Calibration, evaluation and sweep items for the configured task: read
// from the named file, or generated from derived seeds so the three sets
// are independent draws.
std::vector<TaskItem> calibration_items(const PipelineConfig& cfg, int vocab);
std::vector<TaskItem> evaluation_items(const PipelineConfig& cfg, int vocab);
std::vector<TaskItem> sweep_items(const PipelineConfig& cfg, int vocab);

// Captures every block output over the items' full sequences and scores
// the layers.
LayerProfile score_layers(const Model& model, std::span<const TaskItem> items,
                          std::size_t reservoir_capacity, double alpha,
                          double beta, std::uint64_t seed);

// The report sections. Each returns a complete report document whose
// timings block is separate from the reproducible fields.
Json run_score(const PipelineConfig& cfg, const Model& model);
Json run_sweep(const PipelineConfig& cfg, const Model& model);
Json run_quantize(const PipelineConfig& cfg, const Model& model,
                  Model* quantized = nullptr);
Json run_eval(const PipelineConfig& cfg, const Model& model);

// Writes canonical_dump(report) to cfg.out, or stdout when out is empty/"-".
void write_report(const PipelineConfig& cfg, const Json& report);

}  // namespace taq
