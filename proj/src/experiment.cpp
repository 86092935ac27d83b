#include "patchcast/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "patchcast/errors.hpp"

namespace patchcast {

namespace {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const char* kind) {
  throw ConfigError("config: key '" + key + "' needs a " + kind + " value, got '" +
                    value + "'");
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true") return true;
  if (value == "false") return false;
  bad_value(key, value, "boolean (true/false)");
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    bad_value(key, value, "real number");
  }
  if (used != value.size() || !std::isfinite(v)) bad_value(key, value, "real number");
  return v;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  const auto [ptr, ec] =
      std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    bad_value(key, value, "non-negative integer");
  }
  return v;
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  return static_cast<std::size_t>(parse_u64(key, value));
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

std::string join(const std::vector<std::string>& items, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += sep;
    out += items[i];
  }
  return out;
}

std::string join_doubles(const std::vector<double>& items) {
  std::vector<std::string> text;
  text.reserve(items.size());
  for (double v : items) text.push_back(format_double(v));
  return join(text, ",");
}

void validate_config(const ExperimentConfig& c) {
  if (c.data.source != "synthetic" && c.data.source != "csv") {
    throw ConfigError("config: data.source must be 'synthetic' or 'csv'");
  }
  if (c.data.source == "csv" && c.data.csv_path.empty()) {
    throw ConfigError("config: data.csv_path is required when data.source = csv");
  }
  if (c.data.rows == 0) throw ConfigError("config: data.rows must be positive");
  if (c.data.n_targets == 0) {
    throw ConfigError("config: data.n_targets must be positive");
  }
  if (c.data.lookback == 0 || c.data.horizon == 0 || c.data.stride == 0) {
    throw ConfigError("config: data lookback, horizon and stride must be positive");
  }
  for (double r : {c.data.train_ratio, c.data.val_ratio, c.data.test_ratio}) {
    if (!(r > 0.0 && r < 1.0)) {
      throw ConfigError("config: split ratios must lie strictly in (0, 1)");
    }
  }
  if (c.data.train_ratio + c.data.val_ratio + c.data.test_ratio > 1.0 + 1e-9) {
    throw ConfigError("config: split ratios must not sum above 1");
  }
  if (c.model.d_model == 0 || c.model.n_heads == 0 || c.model.n_layers == 0 ||
      c.model.ff_width == 0) {
    throw ConfigError("config: model dimensions must be positive");
  }
  if (c.model.d_model % c.model.n_heads != 0) {
    throw ConfigError("config: model.d_model must be divisible by model.n_heads");
  }
  if (!(c.model.dropout >= 0.0 && c.model.dropout < 1.0)) {
    throw ConfigError("config: model.dropout must lie in [0, 1)");
  }
  if (c.model.lambda < 0.0) {
    throw ConfigError("config: model.lambda must be non-negative");
  }
  if (!(c.model.var_floor > 0.0)) {
    throw ConfigError("config: model.var_floor must be positive");
  }
  if (!(c.training.learning_rate > 0.0)) {
    throw ConfigError("config: training.learning_rate must be positive");
  }
  if (c.training.batch_size == 0) {
    throw ConfigError("config: training.batch_size must be positive");
  }
  if (c.uncertainty.samples < 2) {
    throw ConfigError("config: uncertainty.samples must be at least 2");
  }
  if (!(c.uncertainty.level > 0.0 && c.uncertainty.level < 1.0)) {
    throw ConfigError("config: uncertainty.level must lie strictly in (0, 1)");
  }
  if (!c.pretrain.corpus_weights.empty() &&
      c.pretrain.corpus_weights.size() != c.pretrain.corpus.size()) {
    throw ConfigError("config: pretrain.corpus_weights must match corpus length");
  }
  for (double w : c.pretrain.corpus_weights) {
    if (w < 0.0) {
      throw ConfigError("config: pretrain.corpus_weights must be non-negative");
    }
  }
  if (c.data.source == "synthetic") {
    if (c.data.noise_sd < 0.0) {
      throw ConfigError("config: data.noise_sd must be non-negative");
    }
  }
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& text) {
  ExperimentConfig config;
  std::istringstream in(text);
  std::string line;
  std::string section;  // empty = global scope
  std::set<std::string> seen;
  std::size_t line_no = 0;

  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;

    if (t.front() == '[') {
      if (t.back() != ']') {
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": unterminated section header");
      }
      section = trim(t.substr(1, t.size() - 2));
      static const std::set<std::string> known = {
          "data", "model", "training", "uncertainty", "ablation", "pretrain"};
      if (known.count(section) == 0) {
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": unknown section [" + section + "]");
      }
      continue;
    }

    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key = value");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    }
    const std::string qualified = section + "." + key;
    if (!seen.insert(qualified).second) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": duplicate key '" + key + "'");
    }

    auto unknown = [&]() -> void {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": unknown key '" + key + "' in " +
                        (section.empty() ? "the global scope"
                                         : "section [" + section + "]"));
    };

    if (section.empty()) {
      if (key == "seed") {
        config.seed = parse_u64(key, value);
      } else {
        unknown();
      }
    } else if (section == "data") {
      DataSection& d = config.data;
      if (key == "source") d.source = value;
      else if (key == "csv_path") d.csv_path = value;
      else if (key == "future_columns") d.future_columns = split_list(value, ',');
      else if (key == "ignore_columns") d.ignore_columns = split_list(value, ',');
      else if (key == "rows") d.rows = parse_size(key, value);
      else if (key == "synth_seed") d.synth_seed = parse_u64(key, value);
      else if (key == "daily_amp") d.daily_amp = parse_double(key, value);
      else if (key == "weekly_amp") d.weekly_amp = parse_double(key, value);
      else if (key == "driver_coef") d.driver_coef = parse_double(key, value);
      else if (key == "noise_sd") d.noise_sd = parse_double(key, value);
      else if (key == "n_targets") d.n_targets = parse_size(key, value);
      else if (key == "lookback") d.lookback = parse_size(key, value);
      else if (key == "horizon") d.horizon = parse_size(key, value);
      else if (key == "stride") d.stride = parse_size(key, value);
      else if (key == "train_ratio") d.train_ratio = parse_double(key, value);
      else if (key == "val_ratio") d.val_ratio = parse_double(key, value);
      else if (key == "test_ratio") d.test_ratio = parse_double(key, value);
      else if (key == "instance_norm") d.instance_norm = parse_bool(key, value);
      else unknown();
    } else if (section == "model") {
      ModelSection& m = config.model;
      if (key == "scales") m.scales = value;
      else if (key == "d_model") m.d_model = parse_size(key, value);
      else if (key == "n_heads") m.n_heads = parse_size(key, value);
      else if (key == "n_layers") m.n_layers = parse_size(key, value);
      else if (key == "ff_width") m.ff_width = parse_size(key, value);
      else if (key == "dropout") m.dropout = parse_double(key, value);
      else if (key == "lambda") m.lambda = parse_double(key, value);
      else if (key == "var_floor") m.var_floor = parse_double(key, value);
      else unknown();
    } else if (section == "training") {
      TrainingSection& tr = config.training;
      if (key == "learning_rate") tr.learning_rate = parse_double(key, value);
      else if (key == "batch_size") tr.batch_size = parse_size(key, value);
      else if (key == "max_epochs") tr.max_epochs = parse_size(key, value);
      else if (key == "patience") tr.patience = parse_size(key, value);
      else if (key == "freeze_encoder") tr.freeze_encoder = parse_bool(key, value);
      else unknown();
    } else if (section == "uncertainty") {
      UncertaintySection& u = config.uncertainty;
      if (key == "samples") u.samples = parse_size(key, value);
      else if (key == "level") u.level = parse_double(key, value);
      else if (key == "empirical_intervals")
        u.empirical_intervals = parse_bool(key, value);
      else if (key == "mixture_crps") u.mixture_crps = parse_bool(key, value);
      else if (key == "original_units") u.original_units = parse_bool(key, value);
      else unknown();
    } else if (section == "ablation") {
      AblationSection& a = config.ablation;
      if (key == "multi_scale") a.multi_scale = parse_bool(key, value);
      else if (key == "future_variables") a.future_variables = parse_bool(key, value);
      else if (key == "uncertainty") a.uncertainty = parse_bool(key, value);
      else if (key == "pretraining") a.pretraining = parse_bool(key, value);
      else unknown();
    } else if (section == "pretrain") {
      PretrainSection& p = config.pretrain;
      if (key == "corpus") p.corpus = split_list(value, ',');
      else if (key == "corpus_weights") {
        for (const std::string& w : split_list(value, ',')) {
          p.corpus_weights.push_back(parse_double(key, w));
        }
      } else {
        unknown();
      }
    }
  }

  validate_config(config);
  return config;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_experiment_config(buf.str());
}

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream out;
  out << "seed = " << c.seed << "\n\n";
  out << "[data]\n";
  out << "source = " << c.data.source << "\n";
  out << "csv_path = " << c.data.csv_path << "\n";
  out << "future_columns = " << join(c.data.future_columns, ",") << "\n";
  out << "ignore_columns = " << join(c.data.ignore_columns, ",") << "\n";
  out << "rows = " << c.data.rows << "\n";
  out << "synth_seed = " << c.data.synth_seed << "\n";
  out << "daily_amp = " << format_double(c.data.daily_amp) << "\n";
  out << "weekly_amp = " << format_double(c.data.weekly_amp) << "\n";
  out << "driver_coef = " << format_double(c.data.driver_coef) << "\n";
  out << "noise_sd = " << format_double(c.data.noise_sd) << "\n";
  out << "n_targets = " << c.data.n_targets << "\n";
  out << "lookback = " << c.data.lookback << "\n";
  out << "horizon = " << c.data.horizon << "\n";
  out << "stride = " << c.data.stride << "\n";
  out << "train_ratio = " << format_double(c.data.train_ratio) << "\n";
  out << "val_ratio = " << format_double(c.data.val_ratio) << "\n";
  out << "test_ratio = " << format_double(c.data.test_ratio) << "\n";
  out << "instance_norm = " << (c.data.instance_norm ? "true" : "false") << "\n\n";
  out << "[model]\n";
  out << "scales = " << c.model.scales << "\n";
  out << "d_model = " << c.model.d_model << "\n";
  out << "n_heads = " << c.model.n_heads << "\n";
  out << "n_layers = " << c.model.n_layers << "\n";
  out << "ff_width = " << c.model.ff_width << "\n";
  out << "dropout = " << format_double(c.model.dropout) << "\n";
  out << "lambda = " << format_double(c.model.lambda) << "\n";
  out << "var_floor = " << format_double(c.model.var_floor) << "\n\n";
  out << "[training]\n";
  out << "learning_rate = " << format_double(c.training.learning_rate) << "\n";
  out << "batch_size = " << c.training.batch_size << "\n";
  out << "max_epochs = " << c.training.max_epochs << "\n";
  out << "patience = " << c.training.patience << "\n";
  out << "freeze_encoder = " << (c.training.freeze_encoder ? "true" : "false")
      << "\n\n";
  out << "[uncertainty]\n";
  out << "samples = " << c.uncertainty.samples << "\n";
  out << "level = " << format_double(c.uncertainty.level) << "\n";
  out << "empirical_intervals = "
      << (c.uncertainty.empirical_intervals ? "true" : "false") << "\n";
  out << "mixture_crps = " << (c.uncertainty.mixture_crps ? "true" : "false")
      << "\n";
  out << "original_units = " << (c.uncertainty.original_units ? "true" : "false")
      << "\n\n";
  out << "[ablation]\n";
  out << "multi_scale = " << (c.ablation.multi_scale ? "true" : "false") << "\n";
  out << "future_variables = " << (c.ablation.future_variables ? "true" : "false")
      << "\n";
  out << "uncertainty = " << (c.ablation.uncertainty ? "true" : "false") << "\n";
  out << "pretraining = " << (c.ablation.pretraining ? "true" : "false") << "\n\n";
  out << "[pretrain]\n";
  out << "corpus = " << join(c.pretrain.corpus, ",") << "\n";
  out << "corpus_weights = " << join_doubles(c.pretrain.corpus_weights) << "\n";
  return out.str();
}

std::vector<ScaleSpec> resolve_scales(const std::string& text, std::size_t lookback,
                                      bool hourly, Warnings* warnings) {
  if (text == "auto") return default_scale_specs(lookback, hourly, warnings);
  std::vector<ScaleSpec> specs;
  for (const std::string& item : split_list(text, ';')) {
    const std::vector<std::string> parts = split_list(item, ':');
    if (parts.size() != 3) {
      throw ConfigError("config: scale entry '" + item +
                        "' must be window:patch:stride");
    }
    ScaleSpec s;
    s.window = parse_size("scales", parts[0]);
    s.patch_len = parse_size("scales", parts[1]);
    s.stride = parse_size("scales", parts[2]);
    specs.push_back(s);
  }
  if (specs.empty()) throw ConfigError("config: model.scales resolved to nothing");
  return specs;
}

std::string train_report_json(const TrainReport& report) {
  ordered_json doc;
  doc["epochs"] = ordered_json::array();
  for (const EpochStats& e : report.epochs) {
    // wall-clock seconds stay out of the artifact so reruns are byte-identical
    doc["epochs"].push_back({{"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
  }
  if (report.epochs.empty()) {
    doc["best_epoch"] = nullptr;
    doc["best_val_loss"] = nullptr;
  } else {
    doc["best_epoch"] = report.best_epoch;
    doc["best_val_loss"] = report.best_val_loss;
  }
  doc["early_stopped"] = report.early_stopped;
  return doc.dump(1) + "\n";
}

namespace {

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw IoError("failed writing '" + path + "'");
}

// Exclusive run-directory creation plus the config snapshot, written before
// any real work so failed runs still leave the resolved config behind.
std::string begin_run(const ExperimentConfig& config, const std::string& out_dir) {
  fs::path dir(out_dir);
  if (dir.empty()) throw ParameterError("output directory must not be empty");
  std::error_code ec;
  if (fs::exists(dir, ec)) {
    throw IoError("output directory '" + out_dir + "' already exists");
  }
  if (dir.has_parent_path()) fs::create_directories(dir.parent_path(), ec);
  if (!fs::create_directory(dir, ec) || ec) {
    throw IoError("cannot create output directory '" + out_dir + "'");
  }
  write_text_file((dir / "config.ini").string(), serialize_config(config));
  return dir.string();
}

void print_warnings(const Warnings& warnings, const CommandContext& ctx) {
  for (const std::string& w : warnings) *ctx.err << "warning: " << w << "\n";
}

CsvSchema schema_from(const DataSection& data, bool futures_as_ignore) {
  CsvSchema schema;
  for (const std::string& name : data.future_columns) {
    schema.roles[name] =
        futures_as_ignore ? ColumnRole::ignore : ColumnRole::future_known;
  }
  for (const std::string& name : data.ignore_columns) {
    schema.roles[name] = ColumnRole::ignore;
  }
  return schema;
}

SynthConfig synth_from(const DataSection& data) {
  SynthConfig sc;
  sc.daily_amp = data.daily_amp;
  sc.weekly_amp = data.weekly_amp;
  sc.driver_coef = data.driver_coef;
  sc.noise_sd = data.noise_sd;
  sc.n_targets = data.n_targets;
  return sc;
}

TimeSeriesTable load_table(const DataSection& data, bool futures_as_ignore,
                           Warnings* warnings) {
  if (data.source == "synthetic") {
    TimeSeriesTable table =
        generate_synthetic(data.synth_seed, data.rows, synth_from(data), warnings);
    if (futures_as_ignore) {
      table.futures = Tensor{};
      table.future_names.clear();
    }
    return table;
  }
  return load_csv(data.csv_path, schema_from(data, futures_as_ignore));
}

std::size_t train_row_count(std::size_t rows, double ratio) {
  return static_cast<std::size_t>(
      std::floor(static_cast<double>(rows) * ratio + 1e-9));
}

struct Pipeline {
  TimeSeriesTable table;
  NormalizationStats stats;
  std::vector<WindowSample> samples;
  DatasetSplit split;
};

// Global stats always come from the chronological training rows.
Pipeline build_pipeline(const DataSection& data, bool futures_as_ignore,
                        Warnings* warnings) {
  Pipeline p;
  p.table = load_table(data, futures_as_ignore, warnings);
  p.stats = fit_normalizer(p.table,
                           {0, train_row_count(p.table.rows(), data.train_ratio)});
  p.samples = make_windows(p.table, p.stats, data.lookback, data.horizon,
                           data.stride, data.instance_norm);
  p.split = chronological_split(p.samples.size(), data.train_ratio, data.val_ratio,
                                data.test_ratio);
  return p;
}

ModelConfig model_config_from(const ExperimentConfig& config, bool hourly,
                              std::size_t n_targets, std::size_t n_futures,
                              Warnings* warnings) {
  ModelConfig mc;
  try {
    mc.scales =
        resolve_scales(config.model.scales, config.data.lookback, hourly, warnings);
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  mc.d_model = config.model.d_model;
  mc.n_heads = config.model.n_heads;
  mc.n_layers = config.model.n_layers;
  mc.ff_width = config.model.ff_width;
  mc.dropout = config.model.dropout;
  mc.lookback = config.data.lookback;
  mc.horizon = config.data.horizon;
  mc.n_targets = n_targets;
  mc.n_futures = n_futures;
  mc.lambda = config.model.lambda;
  mc.var_floor = config.model.var_floor;
  try {
    mc.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return mc;
}

TrainConfig train_config_from(const ExperimentConfig& config) {
  TrainConfig tc;
  tc.learning_rate = config.training.learning_rate;
  tc.batch_size = config.training.batch_size;
  tc.max_epochs = config.training.max_epochs;
  tc.patience = config.training.patience;
  tc.seed = config.seed;
  tc.freeze_encoder = config.training.freeze_encoder;
  return tc;
}

void check_channel_names(const TimeSeriesTable& table, const Checkpoint& ckpt) {
  auto report = [](const char* kind, const std::vector<std::string>& want,
                   const std::vector<std::string>& have) {
    std::string msg = std::string("channel mismatch: checkpoint expects ") + kind +
                      " [" + join(want, ",") + "], data provides [" +
                      join(have, ",") + "]";
    throw LoadError(msg);
  };
  if (table.target_names != ckpt.target_names) {
    report("targets", ckpt.target_names, table.target_names);
  }
  if (ckpt.config.has_future_path() && table.future_names != ckpt.future_names) {
    report("future channels", ckpt.future_names, table.future_names);
  }
}

Tensor truncate_rows(const Tensor& t, std::size_t rows) {
  if (t.rows() == rows) return t;
  Tensor out({rows, t.cols()});
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < t.cols(); ++j) out.at(i, j) = t.at(i, j);
  }
  return out;
}

MCForecast truncate_mc(const MCForecast& mc, std::size_t rows) {
  if (mc.mean.rows() == rows) return mc;
  MCForecast out;
  out.n_samples = mc.n_samples;
  out.mean = truncate_rows(mc.mean, rows);
  out.variance = truncate_rows(mc.variance, rows);
  for (std::size_t s = 0; s < mc.n_samples; ++s) {
    out.sample_means.push_back(truncate_rows(mc.sample_means[s], rows));
    out.sample_variances.push_back(truncate_rows(mc.sample_variances[s], rows));
  }
  return out;
}

ordered_json metric_json(const MetricReport& r, double level) {
  return ordered_json{{"dataset", r.dataset},
                      {"horizon", r.horizon},
                      {"normalized_units", r.normalized_units},
                      {"level", level},
                      {"mse", r.mse},
                      {"mae", r.mae},
                      {"rse", r.rse},
                      {"crps", r.crps},
                      {"pi_coverage", r.pi_coverage}};
}

std::string dataset_label(const DataSection& data) {
  return data.source == "csv" ? data.csv_path : "synthetic";
}

}  // namespace

void cmd_synth(const ExperimentConfig& config, const std::string& out_dir,
               const CommandContext& ctx) {
  const std::string dir = begin_run(config, out_dir);
  if (config.data.source != "synthetic") {
    throw ConfigError("synth requires data.source = synthetic");
  }
  Warnings warnings;
  TimeSeriesTable table = load_table(config.data, false, &warnings);
  print_warnings(warnings, ctx);
  const std::string path = (fs::path(dir) / "data.csv").string();
  write_csv(table, path);
  *ctx.out << "wrote " << table.rows() << " rows to " << path << "\n";
}

void cmd_pretrain(const ExperimentConfig& config, const std::string& out_dir,
                  const CommandContext& ctx) {
  const std::string dir = begin_run(config, out_dir);
  if (config.pretrain.corpus.empty()) {
    throw ConfigError("pretrain: [pretrain] corpus must list at least one dataset");
  }
  Warnings warnings;

  // load the whole corpus before any training so load failures abort early;
  // future columns are ignored because pretraining excludes that pathway
  std::vector<Pipeline> pipelines;
  for (const std::string& path : config.pretrain.corpus) {
    DataSection section = config.data;
    section.source = "csv";
    section.csv_path = path;
    pipelines.push_back(build_pipeline(section, true, &warnings));
  }
  print_warnings(warnings, ctx);

  const std::size_t d = pipelines[0].table.n_targets();
  ModelConfig mc =
      model_config_from(config, pipelines[0].table.hourly(), d, 0, &warnings);

  std::vector<CorpusEntry> corpus;
  for (std::size_t i = 0; i < pipelines.size(); ++i) {
    CorpusEntry entry;
    entry.samples = &pipelines[i].samples;
    entry.split = pipelines[i].split;
    entry.weight = config.pretrain.corpus_weights.empty()
                       ? 1.0
                       : config.pretrain.corpus_weights[i];
    corpus.push_back(entry);
  }

  ModelParameters params = init_model(mc, config.seed);
  TrainReport report = pretrain(params, mc, corpus, train_config_from(config));

  Checkpoint ckpt;
  ckpt.config = mc;
  ckpt.target_names = pipelines[0].table.target_names;
  ckpt.stats = pipelines[0].stats;  // provenance: first corpus dataset
  ckpt.params = params;
  save_checkpoint(ckpt, (fs::path(dir) / "checkpoint.json").string());
  write_text_file((fs::path(dir) / "train_report.json").string(),
                  train_report_json(report));
  *ctx.out << "pretrained on " << corpus.size() << " datasets, "
           << report.epochs.size() << " epochs, best val "
           << (report.epochs.empty() ? std::string("n/a")
                                     : format_double(report.best_val_loss))
           << "\n";
}

void cmd_finetune(const ExperimentConfig& config, const std::string& checkpoint_path,
                  const std::string& out_dir, const CommandContext& ctx) {
  const std::string dir = begin_run(config, out_dir);
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  Warnings warnings;
  const bool use_futures = config.ablation.future_variables;
  Pipeline pipeline = build_pipeline(config.data, !use_futures, &warnings);
  print_warnings(warnings, ctx);

  // the checkpoint pins the architecture; the [data] geometry must agree
  std::vector<std::string> diffs;
  if (config.data.lookback != ckpt.config.lookback) diffs.push_back("lookback");
  if (config.data.horizon != ckpt.config.horizon) diffs.push_back("horizon");
  if (pipeline.table.n_targets() != ckpt.config.n_targets) {
    diffs.push_back("n_targets");
  }
  if (!diffs.empty()) {
    throw LoadError("checkpoint incompatible with config: fields [" +
                    join(diffs, ",") + "] differ");
  }

  const std::size_t e = pipeline.table.n_futures();
  ModelConfig mc = ckpt.config;
  ModelParameters params = ckpt.params;
  if (e > 0 && !ckpt.config.has_future_path()) {
    mc.n_futures = e;
    params = extend_future_pathway(ckpt.params, ckpt.config, mc, config.seed);
  } else if (e != ckpt.config.n_futures) {
    throw LoadError("checkpoint incompatible with config: fields [n_futures] "
                    "differ (checkpoint " +
                    std::to_string(ckpt.config.n_futures) + ", data " +
                    std::to_string(e) + ")");
  }

  TrainReport report =
      finetune(params, mc, pipeline.samples, pipeline.split, train_config_from(config));

  Checkpoint out;
  out.config = mc;
  out.target_names = pipeline.table.target_names;
  out.future_names = pipeline.table.future_names;
  out.stats = pipeline.stats;
  out.params = params;
  save_checkpoint(out, (fs::path(dir) / "checkpoint.json").string());
  write_text_file((fs::path(dir) / "train_report.json").string(),
                  train_report_json(report));
  *ctx.out << "finetuned for " << report.epochs.size() << " epochs, best val "
           << (report.epochs.empty() ? std::string("n/a")
                                     : format_double(report.best_val_loss))
           << "\n";
}

void cmd_evaluate(const ExperimentConfig& config, const std::string& checkpoint_path,
                  const std::vector<std::size_t>& horizons, bool baseline,
                  const std::string& out_dir, const CommandContext& ctx) {
  const std::string dir = begin_run(config, out_dir);
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  Warnings warnings;
  const bool use_futures =
      config.ablation.future_variables && ckpt.config.has_future_path();
  TimeSeriesTable table = load_table(config.data, !use_futures, &warnings);
  check_channel_names(table, ckpt);

  // evaluation reuses the checkpoint's normalization, not a fresh fit
  std::vector<WindowSample> samples =
      make_windows(table, ckpt.stats, ckpt.config.lookback, ckpt.config.horizon,
                   config.data.stride, config.data.instance_norm);
  DatasetSplit split =
      chronological_split(samples.size(), config.data.train_ratio,
                          config.data.val_ratio, config.data.test_ratio);

  const std::vector<std::size_t> wanted =
      horizons.empty() ? std::vector<std::size_t>{ckpt.config.horizon} : horizons;
  const std::size_t n_test = split.test.size();
  if (n_test == 0) {
    throw ConfigError("evaluate: the test split is empty at these ratios");
  }
  const std::size_t d = ckpt.config.n_targets;
  const UncertaintySection& un = config.uncertainty;

  // one MC sweep at the full trained horizon serves every requested prefix
  std::vector<MCForecast> forecasts;
  std::vector<Tensor> truths;       // [H, D], unit-matched to forecasts
  std::vector<Tensor> baselines;    // persistence: last lookback row repeated
  forecasts.reserve(n_test);
  for (std::size_t k = 0; k < n_test; ++k) {
    const WindowSample& s = samples[split.test.begin + k];
    MCForecast mc =
        mc_forecast(s.x, s.z, ckpt.params, ckpt.config, un.samples,
                    config.seed + k * un.samples, k == 0 ? &warnings : nullptr);
    Tensor y = s.y.clone();
    Tensor base{{ckpt.config.horizon, d}};
    for (std::size_t h = 0; h < ckpt.config.horizon; ++h) {
      for (std::size_t j = 0; j < d; ++j) {
        base.at(h, j) = s.x.at(ckpt.config.lookback - 1, j);
      }
    }
    if (un.original_units) {
      denormalize_forecast(mc.mean, mc.variance, ckpt.stats, s.instance);
      for (std::size_t p = 0; p < mc.n_samples; ++p) {
        denormalize_forecast(mc.sample_means[p], mc.sample_variances[p],
                             ckpt.stats, s.instance);
      }
      Tensor dummy = Tensor(y.shape(), 1.0);
      denormalize_forecast(y, dummy, ckpt.stats, s.instance);
      Tensor dummy2 = Tensor(base.shape(), 1.0);
      denormalize_forecast(base, dummy2, ckpt.stats, s.instance);
    }
    forecasts.push_back(std::move(mc));
    truths.push_back(std::move(y));
    baselines.push_back(std::move(base));
  }
  print_warnings(warnings, ctx);

  ordered_json doc;
  doc["reports"] = ordered_json::array();
  for (std::size_t h : wanted) {
    if (h == 0) throw ConfigError("evaluate: horizons must be positive");
    if (h > ckpt.config.horizon) {
      *ctx.err << "warning: skipping horizon " << h
               << ": exceeds the trained horizon " << ckpt.config.horizon << "\n";
      continue;
    }
    std::vector<double> ys, means, vars, base_means;
    ys.reserve(n_test * h * d);
    means.reserve(n_test * h * d);
    vars.reserve(n_test * h * d);
    base_means.reserve(n_test * h * d);
    double crps_acc = 0.0;
    std::size_t covered = 0;
    for (std::size_t k = 0; k < n_test; ++k) {
      const Tensor y = truncate_rows(truths[k], h);
      const MCForecast mc = truncate_mc(forecasts[k], h);
      const Tensor base = truncate_rows(baselines[k], h);
      for (std::size_t i = 0; i < h * d; ++i) {
        ys.push_back(y[i]);
        means.push_back(mc.mean[i]);
        vars.push_back(mc.variance[i]);
        base_means.push_back(base[i]);
      }
      if (un.mixture_crps) crps_acc += crps_mixture(y, mc);
      if (un.empirical_intervals) {
        const PredictionInterval pi = mixture_interval(mc, un.level);
        for (std::size_t i = 0; i < h * d; ++i) {
          if (pi.lower[i] <= y[i] && y[i] <= pi.upper[i]) ++covered;
        }
      }
    }
    Tensor y_all = Tensor::from_values({n_test * h, d}, ys);
    Tensor mean_all = Tensor::from_values({n_test * h, d}, means);
    Tensor var_all = Tensor::from_values({n_test * h, d}, vars);
    MetricReport report =
        evaluate_metrics(y_all, mean_all, var_all, un.level, h,
                         dataset_label(config.data), !un.original_units);
    if (un.mixture_crps) {
      report.crps = crps_acc / static_cast<double>(n_test);
    }
    if (un.empirical_intervals) {
      report.pi_coverage =
          static_cast<double>(covered) / static_cast<double>(n_test * h * d);
    }
    ordered_json entry = metric_json(report, un.level);
    if (baseline) {
      Tensor base_all = Tensor::from_values({n_test * h, d}, base_means);
      const PointMetrics pm = point_metrics(y_all, base_all);
      entry["persistence"] = {{"mse", pm.mse}, {"mae", pm.mae}, {"rse", pm.rse}};
    }
    doc["reports"].push_back(entry);
    *ctx.out << "horizon " << h << ": mse " << format_double(report.mse)
             << ", mae " << format_double(report.mae) << ", rse "
             << format_double(report.rse) << ", crps "
             << format_double(report.crps) << ", pi_coverage "
             << format_double(report.pi_coverage) << "\n";
  }
  write_text_file((fs::path(dir) / "metrics.json").string(), doc.dump(1) + "\n");
}

namespace {

struct VariantOutcome {
  std::string name;
  std::size_t n_scales = 0;
  std::vector<double> mse;  // per requested horizon
};

std::vector<double> variant_horizon_mse(const ModelParameters& params,
                                        const ModelConfig& mc,
                                        const std::vector<WindowSample>& samples,
                                        const IndexRange& test,
                                        const std::vector<std::size_t>& horizons) {
  std::vector<double> acc(horizons.size(), 0.0);
  std::vector<double> counts(horizons.size(), 0.0);
  for (std::size_t k = test.begin; k < test.end; ++k) {
    const WindowSample& s = samples[k];
    GaussianForecast f = forward(s.x, s.z, params, mc, {});
    for (std::size_t hi = 0; hi < horizons.size(); ++hi) {
      const std::size_t h = horizons[hi];
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < mc.n_targets; ++j) {
          const double e = s.y.at(i, j) - f.mean.at(i, j);
          acc[hi] += e * e;
          counts[hi] += 1.0;
        }
      }
    }
  }
  for (std::size_t hi = 0; hi < horizons.size(); ++hi) acc[hi] /= counts[hi];
  return acc;
}

}  // namespace

void cmd_ablate(const ExperimentConfig& config,
                const std::vector<std::size_t>& horizons,
                const std::string& out_dir, const CommandContext& ctx) {
  const std::string dir = begin_run(config, out_dir);
  Warnings warnings;
  Pipeline pipeline = build_pipeline(config.data, false, &warnings);
  if (pipeline.split.test.empty()) {
    throw ConfigError("ablate: the test split is empty at these ratios");
  }

  std::vector<std::size_t> wanted =
      horizons.empty() ? std::vector<std::size_t>{config.data.horizon} : horizons;
  for (std::size_t h : wanted) {
    if (h == 0 || h > config.data.horizon) {
      throw ConfigError("ablate: horizons must lie in [1, data.horizon]");
    }
  }

  const std::size_t d = pipeline.table.n_targets();
  const std::size_t e_avail = pipeline.table.n_futures();
  const AblationSection& base = config.ablation;

  ModelConfig full_mc = model_config_from(config, pipeline.table.hourly(), d,
                                          base.future_variables ? e_avail : 0,
                                          &warnings);
  if (!base.uncertainty) full_mc.lambda = 0.0;

  ModelConfig single_mc = full_mc;
  {
    std::vector<ScaleSpec> only_w1;
    for (const ScaleSpec& s : full_mc.scales) {
      if (s.window == 1) only_w1.push_back(s);
    }
    if (only_w1.empty()) {
      throw ConfigError("ablate: the scale ladder has no w=1 entry to keep for "
                        "the single-scale variant");
    }
    single_mc.scales = only_w1;
  }
  print_warnings(warnings, ctx);

  // one pretraining checkpoint per architecture, shared across the variants
  // that keep the pretraining toggle on
  const bool pretrain_on = base.pretraining && !config.pretrain.corpus.empty();
  ModelParameters pre_full, pre_single;
  if (pretrain_on) {
    std::vector<Pipeline> corpus_pipes;
    Warnings pw;
    for (const std::string& path : config.pretrain.corpus) {
      DataSection section = config.data;
      section.source = "csv";
      section.csv_path = path;
      corpus_pipes.push_back(build_pipeline(section, true, &pw));
    }
    print_warnings(pw, ctx);
    std::vector<CorpusEntry> corpus;
    for (std::size_t i = 0; i < corpus_pipes.size(); ++i) {
      corpus.push_back({&corpus_pipes[i].samples, corpus_pipes[i].split,
                        config.pretrain.corpus_weights.empty()
                            ? 1.0
                            : config.pretrain.corpus_weights[i]});
    }
    ModelConfig pre_mc = full_mc;
    pre_mc.n_futures = 0;
    pre_full = init_model(pre_mc, config.seed);
    pretrain(pre_full, pre_mc, corpus, train_config_from(config));
    save_checkpoint(
        Checkpoint{pre_mc, corpus_pipes[0].table.target_names, {},
                   corpus_pipes[0].stats, pre_full},
        (fs::path(dir) / "pretrained.json").string());

    ModelConfig pre_single_mc = single_mc;
    pre_single_mc.n_futures = 0;
    pre_single = init_model(pre_single_mc, config.seed);
    pretrain(pre_single, pre_single_mc, corpus, train_config_from(config));
  }

  struct VariantPlan {
    std::string name;
    ModelConfig mc;
    bool use_pretrained;
    bool single_scale;
  };
  std::vector<VariantPlan> plans;
  plans.push_back({"full", full_mc, pretrain_on, false});
  plans.push_back({"- Multi-scale", single_mc, pretrain_on, true});
  {
    ModelConfig v = full_mc;
    v.n_futures = 0;
    plans.push_back({"- Future Variables", v, pretrain_on, false});
  }
  {
    ModelConfig v = full_mc;
    v.lambda = 0.0;
    plans.push_back({"- Uncertainty Est.", v, pretrain_on, false});
  }
  plans.push_back({"- Pre-training", full_mc, false, false});

  std::vector<VariantOutcome> outcomes;
  for (const VariantPlan& plan : plans) {
    ModelParameters params;
    if (plan.use_pretrained) {
      const ModelParameters& pre = plan.single_scale ? pre_single : pre_full;
      if (plan.mc.has_future_path()) {
        ModelConfig pre_mc = plan.mc;
        pre_mc.n_futures = 0;
        params = extend_future_pathway(pre, pre_mc, plan.mc, config.seed);
      } else {
        params = pre.clone();
      }
    } else {
      params = init_model(plan.mc, config.seed);
    }
    train(params, plan.mc, pipeline.samples, pipeline.split,
          train_config_from(config));
    VariantOutcome outcome;
    outcome.name = plan.name;
    outcome.n_scales = plan.mc.scales.size();
    outcome.mse = variant_horizon_mse(params, plan.mc, pipeline.samples,
                                      pipeline.split.test, wanted);
    outcomes.push_back(std::move(outcome));
    *ctx.out << plan.name << " done\n";
  }

  ordered_json doc;
  doc["horizons"] = wanted;
  doc["variants"] = ordered_json::array();
  std::ostringstream table;
  table << "variant";
  for (std::size_t h : wanted) table << "\tmse@" << h << "\tdelta@" << h;
  table << "\n";
  for (const VariantOutcome& o : outcomes) {
    ordered_json row;
    row["name"] = o.name;
    row["n_scales"] = o.n_scales;
    row["mse"] = o.mse;
    ordered_json deltas = ordered_json::array();
    table << o.name;
    for (std::size_t hi = 0; hi < wanted.size(); ++hi) {
      const double full_v = outcomes[0].mse[hi];
      const double pct = (o.mse[hi] - full_v) / full_v * 100.0;
      deltas.push_back(pct);
      table << "\t" << format_double(o.mse[hi]);
      if (&o == &outcomes[0]) {
        table << "\t--";
      } else {
        table << "\t" << (pct >= 0 ? "+" : "") << format_double(pct) << "%";
      }
    }
    table << "\n";
    row["delta_pct"] = deltas;
    doc["variants"].push_back(row);
  }
  write_text_file((fs::path(dir) / "ablation.json").string(), doc.dump(1) + "\n");
  write_text_file((fs::path(dir) / "ablation.txt").string(), table.str());
  *ctx.out << table.str();
}

void cmd_forecast(const ExperimentConfig& config, const std::string& checkpoint_path,
                  const std::string& input_csv, const std::string& out_dir,
                  const CommandContext& ctx) {
  const std::string dir = begin_run(config, out_dir);
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  DataSection section = config.data;
  section.source = "csv";
  section.csv_path = input_csv;
  const bool use_futures =
      config.ablation.future_variables && ckpt.config.has_future_path();
  TimeSeriesTable table = load_table(section, !use_futures, nullptr);
  check_channel_names(table, ckpt);

  const std::size_t lookback = ckpt.config.lookback;
  const std::size_t horizon = ckpt.config.horizon;
  const std::size_t d = ckpt.config.n_targets;
  const std::size_t e = ckpt.config.n_futures;
  if (table.rows() < lookback) {
    throw ParameterError("forecast: input provides " +
                         std::to_string(table.rows()) + " rows but the model needs " +
                         std::to_string(lookback));
  }

  // lookback = the first L rows; future-known covariates come from the rows
  // after it when available and are zero-filled (global mean) otherwise
  Tensor raw{{lookback, d}};
  for (std::size_t i = 0; i < lookback; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      raw.at(i, j) = table.targets[i * d + j];
    }
  }
  std::vector<ChannelStats> instance;
  Tensor x =
      normalize_lookback(raw, ckpt.stats, config.data.instance_norm, instance);

  Tensor z;
  if (e > 0) {
    z = Tensor({horizon, e});
    std::size_t missing = 0;
    for (std::size_t i = 0; i < horizon; ++i) {
      const std::size_t row = lookback + i;
      for (std::size_t j = 0; j < e; ++j) {
        if (row < table.rows()) {
          const ChannelStats& g = ckpt.stats.future[j];
          z.at(i, j) = (table.futures[row * e + j] - g.mean) / g.std;
        } else {
          z.at(i, j) = 0.0;
          ++missing;
        }
      }
    }
    if (missing > 0) {
      *ctx.err << "warning: " << missing / e << " of " << horizon
               << " horizon rows lack future covariates; zero-filled in "
                  "normalized units\n";
    }
  }

  MCForecast mc = mc_forecast(x, z, ckpt.params, ckpt.config,
                              config.uncertainty.samples, config.seed, nullptr);
  PredictionInterval pi =
      config.uncertainty.empirical_intervals
          ? mixture_interval(mc, config.uncertainty.level)
          : prediction_interval(mc.mean, mc.variance, config.uncertainty.level);

  Tensor mean = mc.mean.clone();
  Tensor variance = mc.variance.clone();
  denormalize_forecast(mean, variance, ckpt.stats, instance);
  Tensor lower = pi.lower.clone();
  Tensor upper = pi.upper.clone();
  Tensor dummy_l = Tensor(lower.shape(), 1.0);
  Tensor dummy_u = Tensor(upper.shape(), 1.0);
  denormalize_forecast(lower, dummy_l, ckpt.stats, instance);
  denormalize_forecast(upper, dummy_u, ckpt.stats, instance);

  std::ostringstream csv;
  csv << "timestamp,channel,mean,variance,lower,upper\n";
  const std::int64_t last_ts = table.timestamps[lookback - 1];
  char buf[64];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (std::size_t h = 0; h < horizon; ++h) {
    const std::int64_t ts = last_ts + table.step * static_cast<std::int64_t>(h + 1);
    for (std::size_t j = 0; j < d; ++j) {
      csv << format_timestamp(ts) << "," << ckpt.target_names[j] << ","
          << fmt(mean.at(h, j)) << "," << fmt(variance.at(h, j)) << ","
          << fmt(lower.at(h, j)) << "," << fmt(upper.at(h, j)) << "\n";
    }
  }
  const std::string path = (fs::path(dir) / "forecast.csv").string();
  write_text_file(path, csv.str());
  *ctx.out << "wrote " << horizon * d << " forecast rows to " << path << "\n";
}

}  // namespace patchcast
