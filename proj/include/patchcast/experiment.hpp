#pragma once

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "patchcast/checkpoint.hpp"
#include "patchcast/training.hpp"
#include "patchcast/uncertainty.hpp"

namespace patchcast {

// Experiment configuration: a sectioned key = value file parsed strictly.
// Unknown sections, unknown keys, duplicate keys, and malformed values are
// all fatal. Every field below is its documented default.
struct DataSection {
  std::string source = "synthetic";  // "synthetic" or "csv"
  std::string csv_path;              // required when source = csv
  std::vector<std::string> future_columns;
  std::vector<std::string> ignore_columns;
  std::size_t rows = 1000;       // synthetic table length
  std::uint64_t synth_seed = 1;  // synthetic generator stream
  double daily_amp = 1.0;
  double weekly_amp = 0.5;
  double driver_coef = 0.5;
  double noise_sd = 0.1;
  std::size_t n_targets = 1;
  std::size_t lookback = 336;
  std::size_t horizon = 96;
  std::size_t stride = 1;
  double train_ratio = 0.7;
  double val_ratio = 0.1;
  double test_ratio = 0.2;
  bool instance_norm = true;
};

struct ModelSection {
  std::string scales = "auto";  // "auto" or "w:P:tau" triplets joined by ';'
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t ff_width = 128;
  double dropout = 0.1;
  double lambda = 0.5;
  double var_floor = 1e-6;
};

struct TrainingSection {
  double learning_rate = 1e-4;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  std::size_t patience = 5;
  bool freeze_encoder = false;
};

struct UncertaintySection {
  std::size_t samples = 50;
  double level = 0.95;
  bool empirical_intervals = false;  // mixture quantiles instead of Gaussian
  bool mixture_crps = false;         // mixture CRPS instead of combined Gaussian
  bool original_units = false;       // metrics in de-normalized units
};

struct AblationSection {
  bool multi_scale = true;
  bool future_variables = true;
  bool uncertainty = true;
  bool pretraining = true;
};

struct PretrainSection {
  std::vector<std::string> corpus;  // CSV paths, comma separated in the file
  std::vector<double> corpus_weights;  // defaults to 1 per corpus entry
};

struct ExperimentConfig {
  std::uint64_t seed = 0;  // global key, set before any section header
  DataSection data;
  ModelSection model;
  TrainingSection training;
  UncertaintySection uncertainty;
  AblationSection ablation;
  PretrainSection pretrain;
};

ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::string& path);

// Canonical form: every key in fixed order with resolved values. Reruns of
// the same effective config serialize to identical bytes.
std::string serialize_config(const ExperimentConfig& config);

// Scale ladder for the model section; "auto" defers to the lookback ladder.
std::vector<ScaleSpec> resolve_scales(const std::string& text, std::size_t lookback,
                                      bool hourly, Warnings* warnings);

std::string train_report_json(const TrainReport& report);

struct CommandContext {
  std::ostream* out = &std::cout;
  std::ostream* err = &std::cerr;
};

// Each command creates `out_dir` exclusively and writes the resolved config
// snapshot before doing any work; a failed run still leaves the snapshot.
void cmd_synth(const ExperimentConfig& config, const std::string& out_dir,
               const CommandContext& ctx);
void cmd_pretrain(const ExperimentConfig& config, const std::string& out_dir,
                  const CommandContext& ctx);
void cmd_finetune(const ExperimentConfig& config, const std::string& checkpoint_path,
                  const std::string& out_dir, const CommandContext& ctx);
void cmd_evaluate(const ExperimentConfig& config, const std::string& checkpoint_path,
                  const std::vector<std::size_t>& horizons, bool baseline,
                  const std::string& out_dir, const CommandContext& ctx);
void cmd_ablate(const ExperimentConfig& config,
                const std::vector<std::size_t>& horizons,
                const std::string& out_dir, const CommandContext& ctx);
void cmd_forecast(const ExperimentConfig& config, const std::string& checkpoint_path,
                  const std::string& input_csv, const std::string& out_dir,
                  const CommandContext& ctx);

// Argument parsing plus exit-code mapping: 0 success, 1 runtime failure,
// 2 usage or configuration error.
int cli_main(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err);
int cli_main(int argc, char** argv);

}  // namespace patchcast
