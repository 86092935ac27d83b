#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchcast/checkpoint.hpp"
#include "patchcast/errors.hpp"
#include "patchcast/experiment.hpp"
#include "patchcast/patching.hpp"

using namespace patchcast;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("patchcast_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string sub(const std::string& s) const { return (path / s).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(bool(in));
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spit(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(bool(out));
  out << content;
}

int run_cli(const std::vector<std::string>& args, std::string* out_text = nullptr,
            std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int code = cli_main(args, out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

// Micro experiment: hourly synthetic data small enough that every command
// finishes in well under a second.
std::string micro_ini(const std::string& extra = "") {
  return "seed = 7\n"
         "[data]\n"
         "source = synthetic\n"
         "future_columns = driver\n"
         "rows = 600\n"
         "lookback = 48\n"
         "horizon = 12\n"
         "noise_sd = 0.05\n"
         "[model]\n"
         "d_model = 8\n"
         "n_heads = 1\n"
         "n_layers = 1\n"
         "ff_width = 16\n"
         "dropout = 0.1\n"
         "[training]\n"
         "learning_rate = 0.003\n"
         "batch_size = 16\n"
         "max_epochs = 2\n" +
         extra;
}

std::size_t count_lines(const std::string& text) {
  std::size_t n = 0;
  for (char c : text) n += (c == '\n');
  return n;
}

// One synthetic CSV shared by the heavier cases; regenerated per TempDir.
std::string make_dataset(const TempDir& tmp, const std::string& run_name) {
  spit(tmp.sub("synth.ini"), micro_ini());
  const int code = run_cli({"synth", "--config", tmp.sub("synth.ini"), "--out",
                            tmp.sub(run_name)});
  REQUIRE(code == 0);
  return tmp.sub(run_name) + "/data.csv";
}

}  // namespace

TEST_SUITE("cli_harness") {

TEST_CASE("config defaults survive a serialize/parse round trip") {
  const ExperimentConfig def{};
  const std::string text = serialize_config(def);
  CHECK(serialize_config(parse_experiment_config(text)) == text);
  // an empty document resolves to pure defaults
  CHECK(serialize_config(parse_experiment_config("")) == text);

  ExperimentConfig tweaked;
  tweaked.seed = 99;
  tweaked.data.source = "csv";
  tweaked.data.csv_path = "x.csv";
  tweaked.data.future_columns = {"temp", "wind"};
  tweaked.data.noise_sd = 0.25;
  tweaked.model.scales = "1:8:4;24:4:2";
  tweaked.model.dropout = 0.15;
  tweaked.training.max_epochs = 0;
  tweaked.uncertainty.mixture_crps = true;
  tweaked.ablation.future_variables = false;
  tweaked.pretrain.corpus = {"a.csv", "b.csv"};
  tweaked.pretrain.corpus_weights = {2.0, 0.5};
  const std::string text2 = serialize_config(tweaked);
  CHECK(serialize_config(parse_experiment_config(text2)) == text2);

  // comments, blank lines, and whitespace are cosmetic
  const ExperimentConfig spaced = parse_experiment_config(
      "# comment\n\n  seed =  3\n; another\n[data]\n  rows = 42  \n");
  CHECK(spaced.seed == 3);
  CHECK(spaced.data.rows == 42);
}

TEST_CASE("config rejects unknown keys, duplicates, and bad values") {
  CHECK_THROWS_AS(parse_experiment_config("foo = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[data]\nfoo = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[bogus]\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[data]\nrows = 5\nrows = 6\n"),
                  ConfigError);
  // the global seed key is not valid inside a section
  CHECK_THROWS_AS(parse_experiment_config("[data]\nseed = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[data]\nrows = abc\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[data]\ninstance_norm = yes\n"),
                  ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[data]\nrows\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[uncertainty]\nlevel = 1\n"),
                  ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[uncertainty]\nsamples = 1\n"),
                  ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[model]\nd_model = 10\n"), ConfigError);
  CHECK_THROWS_AS(
      parse_experiment_config("[data]\ntrain_ratio = 0.8\nval_ratio = 0.3\n"),
      ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[data]\nsource = csv\n"), ConfigError);
  CHECK_THROWS_AS(
      parse_experiment_config("[pretrain]\ncorpus = a.csv\ncorpus_weights = 1,2\n"),
      ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(
                      "[pretrain]\ncorpus = a.csv\ncorpus_weights = -1\n"),
                  ConfigError);
  // error messages carry the offending line number
  try {
    parse_experiment_config("seed = 1\n[data]\nfoo = 1\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("scale ladders resolve from auto or explicit triplets") {
  const auto autod = resolve_scales("auto", 336, true, nullptr);
  const auto expected = default_scale_specs(336, true, nullptr);
  REQUIRE(autod.size() == expected.size());
  for (std::size_t i = 0; i < autod.size(); ++i) {
    CHECK(autod[i].window == expected[i].window);
    CHECK(autod[i].patch_len == expected[i].patch_len);
    CHECK(autod[i].stride == expected[i].stride);
  }

  const auto manual = resolve_scales("1:8:4; 24:4:2", 336, true, nullptr);
  REQUIRE(manual.size() == 2);
  CHECK(manual[0].window == 1);
  CHECK(manual[0].patch_len == 8);
  CHECK(manual[0].stride == 4);
  CHECK(manual[1].window == 24);

  CHECK_THROWS_AS(resolve_scales("1:8", 336, true, nullptr), ConfigError);
  CHECK_THROWS_AS(resolve_scales("", 336, true, nullptr), ConfigError);
  CHECK_THROWS_AS(resolve_scales("1:a:4", 336, true, nullptr), ConfigError);
}

TEST_CASE("synth writes deterministic CSV plus the config snapshot") {
  TempDir tmp("synth");
  spit(tmp.sub("cfg.ini"), micro_ini());
  std::string out_text;
  REQUIRE(run_cli({"synth", "--config", tmp.sub("cfg.ini"), "--out",
                   tmp.sub("a")}, &out_text) == 0);
  const std::string csv = slurp(tmp.sub("a") + "/data.csv");
  CHECK(count_lines(csv) == 601);  // header + rows
  CHECK(csv.substr(0, csv.find('\n')) == "timestamp,load,driver");

  // the snapshot is byte-identical to the resolved effective config
  const ExperimentConfig config = load_experiment_config(tmp.sub("cfg.ini"));
  CHECK(slurp(tmp.sub("a") + "/config.ini") == serialize_config(config));

  // same seed twice -> byte-identical data
  REQUIRE(run_cli({"synth", "--config", tmp.sub("cfg.ini"), "--out",
                   tmp.sub("b")}) == 0);
  CHECK(slurp(tmp.sub("b") + "/data.csv") == csv);

  // a different generator seed changes the bytes
  spit(tmp.sub("cfg2.ini"),
       "seed = 7\n[data]\nsource = synthetic\nrows = 600\nlookback = 48\n"
       "horizon = 12\nnoise_sd = 0.05\nsynth_seed = 2\n");
  REQUIRE(run_cli({"synth", "--config", tmp.sub("cfg2.ini"), "--out",
                   tmp.sub("c")}) == 0);
  CHECK(slurp(tmp.sub("c") + "/data.csv") != csv);

  // the global --seed override lands in the snapshot but does not steer the
  // generator; synthesis is pinned by data.synth_seed
  REQUIRE(run_cli({"synth", "--config", tmp.sub("cfg.ini"), "--out", tmp.sub("d"),
                   "--seed", "99"}) == 0);
  CHECK(slurp(tmp.sub("d") + "/data.csv") == csv);
  ExperimentConfig overridden = config;
  overridden.seed = 99;
  CHECK(slurp(tmp.sub("d") + "/config.ini") == serialize_config(overridden));
}

TEST_CASE("synth warns when the series is shorter than two weekly periods") {
  TempDir tmp("synth_short");
  spit(tmp.sub("cfg.ini"),
       "[data]\nsource = synthetic\nrows = 100\nlookback = 24\nhorizon = 4\n");
  std::string err_text;
  REQUIRE(run_cli({"synth", "--config", tmp.sub("cfg.ini"), "--out",
                   tmp.sub("run")}, nullptr, &err_text) == 0);
  CHECK(err_text.find("warning") != std::string::npos);
  CHECK(err_text.find("336") != std::string::npos);
  // the weekly component is still applied, so the data is unchanged in form
  CHECK(count_lines(slurp(tmp.sub("run") + "/data.csv")) == 101);
}

TEST_CASE("output directories are created exclusively") {
  TempDir tmp("collide");
  spit(tmp.sub("cfg.ini"), micro_ini());
  REQUIRE(run_cli({"synth", "--config", tmp.sub("cfg.ini"), "--out",
                   tmp.sub("run")}) == 0);
  std::string err_text;
  CHECK(run_cli({"synth", "--config", tmp.sub("cfg.ini"), "--out", tmp.sub("run")},
                nullptr, &err_text) == 1);
  CHECK(err_text.find("already exists") != std::string::npos);

  const ExperimentConfig config = load_experiment_config(tmp.sub("cfg.ini"));
  CHECK_THROWS_AS(cmd_synth(config, tmp.sub("run"), CommandContext{}), IoError);
}

TEST_CASE("a failed run still leaves the config snapshot") {
  TempDir tmp("snapshot");
  // valid config, but synth rejects csv sources after the snapshot is written
  spit(tmp.sub("cfg.ini"), "[data]\nsource = csv\ncsv_path = nowhere.csv\n");
  std::string err_text;
  CHECK(run_cli({"synth", "--config", tmp.sub("cfg.ini"), "--out", tmp.sub("run")},
                nullptr, &err_text) == 2);
  CHECK(fs::exists(tmp.sub("run") + "/config.ini"));
  CHECK(slurp(tmp.sub("run") + "/config.ini") ==
        serialize_config(load_experiment_config(tmp.sub("cfg.ini"))));
}

TEST_CASE("pretrain trains a corpus and reruns byte-identically") {
  TempDir tmp("pretrain");
  const std::string data = make_dataset(tmp, "data");
  spit(tmp.sub("pre.ini"),
       micro_ini("[pretrain]\ncorpus = " + data + "\n"));

  REQUIRE(run_cli({"pretrain", "--config", tmp.sub("pre.ini"), "--out",
                   tmp.sub("a")}) == 0);
  const Checkpoint ckpt = load_checkpoint(tmp.sub("a") + "/checkpoint.json");
  CHECK(ckpt.config.n_futures == 0);  // pretraining excludes the future pathway
  CHECK(ckpt.config.lookback == 48);
  CHECK(ckpt.target_names == std::vector<std::string>{"load"});

  const std::string report = slurp(tmp.sub("a") + "/train_report.json");
  const auto doc = nlohmann::json::parse(report);
  CHECK(doc["epochs"].size() == 2);
  CHECK(doc["epochs"][0].contains("train_loss"));
  CHECK(doc["epochs"][0].contains("val_loss"));

  // same config, same seed -> identical TrainReport bytes
  REQUIRE(run_cli({"pretrain", "--config", tmp.sub("pre.ini"), "--out",
                   tmp.sub("b")}) == 0);
  CHECK(slurp(tmp.sub("b") + "/train_report.json") == report);

  // a different seed changes the trajectory
  REQUIRE(run_cli({"pretrain", "--config", tmp.sub("pre.ini"), "--out",
                   tmp.sub("c"), "--seed", "8"}) == 0);
  CHECK(slurp(tmp.sub("c") + "/train_report.json") != report);
}

TEST_CASE("pretrain rejects an empty corpus and missing datasets") {
  TempDir tmp("pretrain_err");
  spit(tmp.sub("no_corpus.ini"), micro_ini());
  std::string err_text;
  CHECK(run_cli({"pretrain", "--config", tmp.sub("no_corpus.ini"), "--out",
                 tmp.sub("a")}, nullptr, &err_text) == 2);
  CHECK(err_text.find("corpus") != std::string::npos);
  CHECK(fs::exists(tmp.sub("a") + "/config.ini"));  // snapshot precedes the check

  // any dataset load failure aborts before training: no checkpoint artifact
  spit(tmp.sub("missing.ini"),
       micro_ini("[pretrain]\ncorpus = " + tmp.sub("nope.csv") + "\n"));
  CHECK(run_cli({"pretrain", "--config", tmp.sub("missing.ini"), "--out",
                 tmp.sub("b")}, nullptr, &err_text) == 1);
  CHECK(fs::exists(tmp.sub("b") + "/config.ini"));
  CHECK(!fs::exists(tmp.sub("b") + "/checkpoint.json"));
}

TEST_CASE("finetune with a zero epoch budget preserves shared parameters") {
  TempDir tmp("finetune");
  const std::string data = make_dataset(tmp, "data");
  spit(tmp.sub("pre.ini"), micro_ini("[pretrain]\ncorpus = " + data + "\n"));
  REQUIRE(run_cli({"pretrain", "--config", tmp.sub("pre.ini"), "--out",
                   tmp.sub("pre")}) == 0);

  // finetune on the same series, now exposing the driver as a future channel
  spit(tmp.sub("fine.ini"),
       "seed = 7\n[data]\nsource = csv\ncsv_path = " + data +
           "\nfuture_columns = driver\nlookback = 48\nhorizon = 12\n"
           "[training]\nmax_epochs = 0\n");
  REQUIRE(run_cli({"finetune", "--config", tmp.sub("fine.ini"), "--checkpoint",
                   tmp.sub("pre") + "/checkpoint.json", "--out",
                   tmp.sub("fine")}) == 0);

  const Checkpoint before = load_checkpoint(tmp.sub("pre") + "/checkpoint.json");
  const Checkpoint after = load_checkpoint(tmp.sub("fine") + "/checkpoint.json");
  CHECK(after.config.n_futures == 1);
  CHECK(after.future_names == std::vector<std::string>{"driver"});

  // every pretrained tensor survives bitwise; only the future pathway is new
  const auto old_named = before.params.named();
  std::size_t matched = 0;
  for (const auto& [name, tensor] : after.params.named()) {
    for (const auto& [old_name, old_tensor] : old_named) {
      if (old_name != name) continue;
      ++matched;
      if (name == "fusion.w1") {
        REQUIRE(tensor.rows() > old_tensor.rows());
        for (std::size_t i = 0; i < old_tensor.rows(); ++i) {
          for (std::size_t j = 0; j < old_tensor.cols(); ++j) {
            CHECK(tensor.at(i, j) == old_tensor.at(i, j));
          }
        }
        // appended fusion rows start at zero so the function is preserved
        for (std::size_t i = old_tensor.rows(); i < tensor.rows(); ++i) {
          for (std::size_t j = 0; j < tensor.cols(); ++j) {
            CHECK(tensor.at(i, j) == 0.0);
          }
        }
      } else {
        REQUIRE(tensor.numel() == old_tensor.numel());
        for (std::size_t i = 0; i < tensor.numel(); ++i) {
          CHECK(tensor[i] == old_tensor[i]);
        }
      }
    }
  }
  CHECK(matched == old_named.size());
}

TEST_CASE("finetune rejects incompatible checkpoints with a field diff") {
  TempDir tmp("finetune_err");
  const std::string data = make_dataset(tmp, "data");
  spit(tmp.sub("pre.ini"), micro_ini("[pretrain]\ncorpus = " + data + "\n"));
  REQUIRE(run_cli({"pretrain", "--config", tmp.sub("pre.ini"), "--out",
                   tmp.sub("pre")}) == 0);

  spit(tmp.sub("bad.ini"),
       "seed = 7\n[data]\nsource = csv\ncsv_path = " + data +
           "\nlookback = 24\nhorizon = 6\n[training]\nmax_epochs = 0\n");
  std::string err_text;
  CHECK(run_cli({"finetune", "--config", tmp.sub("bad.ini"), "--checkpoint",
                 tmp.sub("pre") + "/checkpoint.json", "--out", tmp.sub("x")},
                nullptr, &err_text) == 1);
  CHECK(err_text.find("lookback") != std::string::npos);
  CHECK(err_text.find("horizon") != std::string::npos);

  // a missing --checkpoint flag is a usage error
  CHECK(run_cli({"finetune", "--config", tmp.sub("bad.ini"), "--out",
                 tmp.sub("y")}, nullptr, &err_text) == 2);
  CHECK(err_text.find("--checkpoint") != std::string::npos);

  // a checkpoint path that does not exist is a runtime failure
  CHECK(run_cli({"finetune", "--config", tmp.sub("bad.ini"), "--checkpoint",
                 tmp.sub("nope.json"), "--out", tmp.sub("z")}, nullptr,
                &err_text) == 1);
}

TEST_CASE("evaluate reports near-perfect metrics for a memorizing model") {
  TempDir tmp("evaluate");
  // a purely seasonal target (no driver component) with low noise is
  // learnable to near the noise floor from the lookback alone
  spit(tmp.sub("synth.ini"),
       "[data]\nsource = synthetic\nfuture_columns = driver\nrows = 600\n"
       "lookback = 48\nhorizon = 12\nnoise_sd = 0.05\ndriver_coef = 0\n");
  REQUIRE(run_cli({"synth", "--config", tmp.sub("synth.ini"), "--out",
                   tmp.sub("data")}) == 0);
  const std::string data = tmp.sub("data") + "/data.csv";
  spit(tmp.sub("pre.ini"),
       "seed = 7\n[data]\nsource = synthetic\nfuture_columns = driver\n"
       "rows = 600\nlookback = 48\nhorizon = 12\nnoise_sd = 0.05\n"
       "driver_coef = 0\n"
       "[model]\nd_model = 8\nn_heads = 1\nn_layers = 1\nff_width = 16\n"
       "dropout = 0.1\n[training]\nlearning_rate = 0.003\nbatch_size = 16\n"
       "max_epochs = 60\npatience = 60\n[pretrain]\ncorpus = " + data + "\n");
  REQUIRE(run_cli({"pretrain", "--config", tmp.sub("pre.ini"), "--out",
                   tmp.sub("model")}) == 0);

  std::string out_text, err_text;
  REQUIRE(run_cli({"evaluate", "--config", tmp.sub("pre.ini"), "--checkpoint",
                   tmp.sub("model") + "/checkpoint.json", "--out", tmp.sub("eval"),
                   "--baseline"}, &out_text, &err_text) == 0);
  const auto doc = nlohmann::json::parse(slurp(tmp.sub("eval") + "/metrics.json"));
  REQUIRE(doc["reports"].size() == 1);
  const auto& r = doc["reports"][0];
  CHECK(r["horizon"] == 12);
  CHECK(r["normalized_units"] == true);
  CHECK(double(r["mse"]) < 0.1);
  CHECK(double(r["pi_coverage"]) >= 0.7);
  CHECK(double(r["crps"]) > 0.0);
  // the persistence baseline sits alongside the model metrics and is worse
  REQUIRE(r.contains("persistence"));
  CHECK(double(r["persistence"]["mse"]) > double(r["mse"]));

  // rerunning the identical evaluation reproduces the bytes
  REQUIRE(run_cli({"evaluate", "--config", tmp.sub("pre.ini"), "--checkpoint",
                   tmp.sub("model") + "/checkpoint.json", "--out", tmp.sub("eval2"),
                   "--baseline"}) == 0);
  CHECK(slurp(tmp.sub("eval2") + "/metrics.json") ==
        slurp(tmp.sub("eval") + "/metrics.json"));
}

TEST_CASE("evaluate skips horizons beyond the trained horizon with a warning") {
  TempDir tmp("eval_horizons");
  const std::string data = make_dataset(tmp, "data");
  spit(tmp.sub("pre.ini"), micro_ini("[pretrain]\ncorpus = " + data + "\n"));
  REQUIRE(run_cli({"pretrain", "--config", tmp.sub("pre.ini"), "--out",
                   tmp.sub("model")}) == 0);

  std::string err_text;
  REQUIRE(run_cli({"evaluate", "--config", tmp.sub("pre.ini"), "--checkpoint",
                   tmp.sub("model") + "/checkpoint.json", "--out", tmp.sub("eval"),
                   "--horizons", "6,24"}, nullptr, &err_text) == 0);
  CHECK(err_text.find("24") != std::string::npos);
  const auto doc = nlohmann::json::parse(slurp(tmp.sub("eval") + "/metrics.json"));
  REQUIRE(doc["reports"].size() == 1);
  CHECK(doc["reports"][0]["horizon"] == 6);

  std::string bad_err;
  CHECK(run_cli({"evaluate", "--config", tmp.sub("pre.ini"), "--checkpoint",
                 tmp.sub("model") + "/checkpoint.json", "--out", tmp.sub("eval2"),
                 "--horizons", "6,x"}, nullptr, &bad_err) == 2);
}

TEST_CASE("evaluate names mismatched channels") {
  TempDir tmp("eval_schema");
  const std::string data = make_dataset(tmp, "data");
  spit(tmp.sub("pre.ini"), micro_ini("[pretrain]\ncorpus = " + data + "\n"));
  REQUIRE(run_cli({"pretrain", "--config", tmp.sub("pre.ini"), "--out",
                   tmp.sub("model")}) == 0);

  // rename the target column in a copy of the data
  std::string csv = slurp(data);
  csv.replace(csv.find("load"), 4, "dmnd");
  spit(tmp.sub("renamed.csv"), csv);
  spit(tmp.sub("eval.ini"),
       "seed = 7\n[data]\nsource = csv\ncsv_path = " + tmp.sub("renamed.csv") +
           "\nlookback = 48\nhorizon = 12\n");
  std::string err_text;
  CHECK(run_cli({"evaluate", "--config", tmp.sub("eval.ini"), "--checkpoint",
                 tmp.sub("model") + "/checkpoint.json", "--out", tmp.sub("eval")},
                nullptr, &err_text) == 1);
  CHECK(err_text.find("load") != std::string::npos);
  CHECK(err_text.find("dmnd") != std::string::npos);
}

TEST_CASE("ablate emits five variants with per-horizon deltas") {
  TempDir tmp("ablate");
  const std::string data = make_dataset(tmp, "data");
  spit(tmp.sub("abl.ini"),
       "seed = 7\n[data]\nsource = csv\ncsv_path = " + data +
           "\nfuture_columns = driver\nlookback = 48\nhorizon = 12\n"
           "noise_sd = 0.05\n[model]\nd_model = 8\nn_heads = 1\nn_layers = 1\n"
           "ff_width = 16\ndropout = 0.1\n[training]\nlearning_rate = 0.003\n"
           "batch_size = 16\nmax_epochs = 2\n[pretrain]\ncorpus = " + data + "\n");
  std::string out_text, err_text;
  REQUIRE(run_cli({"ablate", "--config", tmp.sub("abl.ini"), "--out",
                   tmp.sub("run"), "--horizons", "6,12"}, &out_text,
                  &err_text) == 0);

  const auto doc = nlohmann::json::parse(slurp(tmp.sub("run") + "/ablation.json"));
  CHECK(doc["horizons"] == std::vector<std::size_t>{6, 12});
  REQUIRE(doc["variants"].size() == 5);
  const std::vector<std::string> names = {"full", "- Multi-scale",
                                          "- Future Variables",
                                          "- Uncertainty Est.", "- Pre-training"};
  for (std::size_t i = 0; i < names.size(); ++i) {
    CHECK(doc["variants"][i]["name"] == names[i]);
    CHECK(doc["variants"][i]["mse"].size() == 2);
    CHECK(doc["variants"][i]["delta_pct"].size() == 2);
  }
  // the hourly ladder at L=48 keeps windows {1, 24}; single-scale keeps w=1
  CHECK(doc["variants"][0]["n_scales"] == 2);
  CHECK(doc["variants"][1]["n_scales"] == 1);
  CHECK(double(doc["variants"][0]["delta_pct"][0]) == 0.0);

  // plain-text table: one header plus one row per variant
  const std::string table = slurp(tmp.sub("run") + "/ablation.txt");
  CHECK(count_lines(table) == 6);
  for (const std::string& n : names) {
    CHECK(table.find(n) != std::string::npos);
  }
  // a shared pretraining checkpoint is persisted for reuse across variants
  CHECK(fs::exists(tmp.sub("run") + "/pretrained.json"));
}

TEST_CASE("forecast writes denormalized intervals for an exact lookback") {
  TempDir tmp("forecast");
  const std::string data = make_dataset(tmp, "data");
  spit(tmp.sub("pre.ini"), micro_ini("[pretrain]\ncorpus = " + data + "\n"));
  REQUIRE(run_cli({"pretrain", "--config", tmp.sub("pre.ini"), "--out",
                   tmp.sub("model")}) == 0);

  // exactly L rows of input (header + 48 data rows)
  const std::string csv = slurp(data);
  std::size_t pos = 0;
  for (int i = 0; i < 49; ++i) pos = csv.find('\n', pos) + 1;
  spit(tmp.sub("lookback.csv"), csv.substr(0, pos));
  spit(tmp.sub("fc.ini"),
       "seed = 7\n[data]\nsource = csv\ncsv_path = unused.csv\n"
       "future_columns = driver\nlookback = 48\nhorizon = 12\n");

  std::string err_text;
  REQUIRE(run_cli({"forecast", "--config", tmp.sub("fc.ini"), "--checkpoint",
                   tmp.sub("model") + "/checkpoint.json", "--input",
                   tmp.sub("lookback.csv"), "--out", tmp.sub("a")}, nullptr,
                  &err_text) == 0);
  const std::string fc = slurp(tmp.sub("a") + "/forecast.csv");
  CHECK(count_lines(fc) == 13);  // header + H rows for the single channel
  CHECK(fc.substr(0, fc.find('\n')) == "timestamp,channel,mean,variance,lower,upper");

  std::istringstream rows(fc);
  std::string line;
  std::getline(rows, line);
  while (std::getline(rows, line)) {
    std::istringstream cells(line);
    std::string ts, channel, mean_s, var_s, lo_s, hi_s;
    std::getline(cells, ts, ',');
    std::getline(cells, channel, ',');
    std::getline(cells, mean_s, ',');
    std::getline(cells, var_s, ',');
    std::getline(cells, lo_s, ',');
    std::getline(cells, hi_s, ',');
    CHECK(channel == "load");
    const double mean = std::stod(mean_s), var = std::stod(var_s);
    const double lo = std::stod(lo_s), hi = std::stod(hi_s);
    CHECK(var > 0.0);
    CHECK(lo <= mean);
    CHECK(mean <= hi);
  }

  // reruns are byte-identical (seeded MC sampling)
  REQUIRE(run_cli({"forecast", "--config", tmp.sub("fc.ini"), "--checkpoint",
                   tmp.sub("model") + "/checkpoint.json", "--input",
                   tmp.sub("lookback.csv"), "--out", tmp.sub("b")}) == 0);
  CHECK(slurp(tmp.sub("b") + "/forecast.csv") == fc);

  // fewer than L rows is a runtime failure naming the requirement
  std::size_t short_pos = 0;
  for (int i = 0; i < 20; ++i) short_pos = csv.find('\n', short_pos) + 1;
  spit(tmp.sub("short.csv"), csv.substr(0, short_pos));
  CHECK(run_cli({"forecast", "--config", tmp.sub("fc.ini"), "--checkpoint",
                 tmp.sub("model") + "/checkpoint.json", "--input",
                 tmp.sub("short.csv"), "--out", tmp.sub("c")}, nullptr,
                &err_text) == 1);
  CHECK(err_text.find("48") != std::string::npos);
}

TEST_CASE("forecast zero-fills missing future covariates with a warning") {
  TempDir tmp("forecast_z");
  const std::string data = make_dataset(tmp, "data");
  spit(tmp.sub("pre.ini"), micro_ini("[pretrain]\ncorpus = " + data + "\n"));
  REQUIRE(run_cli({"pretrain", "--config", tmp.sub("pre.ini"), "--out",
                   tmp.sub("pre")}) == 0);
  spit(tmp.sub("fine.ini"),
       "seed = 7\n[data]\nsource = csv\ncsv_path = " + data +
           "\nfuture_columns = driver\nlookback = 48\nhorizon = 12\n"
           "[training]\nmax_epochs = 0\n");
  REQUIRE(run_cli({"finetune", "--config", tmp.sub("fine.ini"), "--checkpoint",
                   tmp.sub("pre") + "/checkpoint.json", "--out",
                   tmp.sub("model")}) == 0);

  // exactly L rows: every horizon row lacks its future covariate
  const std::string csv = slurp(data);
  std::size_t pos = 0;
  for (int i = 0; i < 49; ++i) pos = csv.find('\n', pos) + 1;
  spit(tmp.sub("lookback.csv"), csv.substr(0, pos));

  std::string err_text;
  REQUIRE(run_cli({"forecast", "--config", tmp.sub("fine.ini"), "--checkpoint",
                   tmp.sub("model") + "/checkpoint.json", "--input",
                   tmp.sub("lookback.csv"), "--out", tmp.sub("a")}, nullptr,
                  &err_text) == 0);
  CHECK(err_text.find("zero-filled") != std::string::npos);
  CHECK(err_text.find("12 of 12") != std::string::npos);

  // with L + H rows the covariates are fully known: no warning
  std::size_t full_pos = 0;
  for (int i = 0; i < 61; ++i) full_pos = csv.find('\n', full_pos) + 1;
  spit(tmp.sub("extended.csv"), csv.substr(0, full_pos));
  REQUIRE(run_cli({"forecast", "--config", tmp.sub("fine.ini"), "--checkpoint",
                   tmp.sub("model") + "/checkpoint.json", "--input",
                   tmp.sub("extended.csv"), "--out", tmp.sub("b")}, nullptr,
                  &err_text) == 0);
  CHECK(err_text.find("zero-filled") == std::string::npos);
}

TEST_CASE("exit codes distinguish usage, runtime, and success") {
  TempDir tmp("exit_codes");
  std::string out_text, err_text;
  CHECK(run_cli({}, &out_text, &err_text) == 2);
  CHECK(run_cli({"frobnicate"}, &out_text, &err_text) == 2);
  CHECK(run_cli({"synth"}, &out_text, &err_text) == 2);  // --config missing

  CHECK(run_cli({"--help"}, &out_text, &err_text) == 0);
  CHECK(out_text.find("synth") != std::string::npos);
  CHECK(out_text.find("forecast") != std::string::npos);

  spit(tmp.sub("bad.ini"), "rows = 5\n");  // unknown global key
  CHECK(run_cli({"synth", "--config", tmp.sub("bad.ini"), "--out", tmp.sub("a")},
                nullptr, &err_text) == 2);
  CHECK(err_text.find("config error") != std::string::npos);

  CHECK(run_cli({"synth", "--config", tmp.sub("nope.ini"), "--out", tmp.sub("b")},
                nullptr, &err_text) == 2);  // unreadable config is a config error

  // truncated checkpoint -> runtime failure
  spit(tmp.sub("cfg.ini"), micro_ini());
  spit(tmp.sub("trunc.json"), "{\"format\": \"patchcast-checkpoint\"");
  CHECK(run_cli({"evaluate", "--config", tmp.sub("cfg.ini"), "--checkpoint",
                 tmp.sub("trunc.json"), "--out", tmp.sub("c")}, nullptr,
                &err_text) == 1);
}

}  // TEST_SUITE
