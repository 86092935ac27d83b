#include "patchcast/experiment.hpp"

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "patchcast/errors.hpp"

namespace patchcast {

namespace {

std::vector<std::size_t> parse_horizons(const std::string& text) {
  std::vector<std::size_t> out;
  if (text.empty()) return out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const std::string item =
        text.substr(start, comma == std::string::npos ? comma : comma - start);
    std::size_t value = 0;
    try {
      std::size_t used = 0;
      value = std::stoull(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("--horizons: '" + item + "' is not a positive integer");
    }
    if (value == 0) {
      throw ConfigError("--horizons: horizons must be positive");
    }
    out.push_back(value);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err) {
  CLI::App app{"patchcast: probabilistic multi-scale energy forecasting"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint_path, input_csv, horizons_text;
  bool baseline = false;
  bool has_seed = false;
  std::uint64_t seed_override = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config file")->required();
    cmd->add_option("--out", out_dir, "output directory (created, must not exist)")
        ->required();
    cmd->add_option("--seed", seed_override, "override the config seed")
        ->each([&](const std::string&) { has_seed = true; });
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth);

  CLI::App* pre = app.add_subcommand("pretrain", "train on a weighted corpus");
  add_common(pre);

  CLI::App* fine = app.add_subcommand("finetune", "adapt a pretrained checkpoint");
  add_common(fine);
  fine->add_option("--checkpoint", checkpoint_path, "input checkpoint")->required();

  CLI::App* eval = app.add_subcommand("evaluate", "score a checkpoint on a test split");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoint_path, "input checkpoint")->required();
  eval->add_option("--horizons", horizons_text,
                   "comma-separated evaluation horizons");
  eval->add_flag("--baseline", baseline, "also report the persistence baseline");

  CLI::App* abl = app.add_subcommand("ablate", "single-toggle component ablations");
  add_common(abl);
  abl->add_option("--horizons", horizons_text,
                  "comma-separated evaluation horizons");

  CLI::App* fc = app.add_subcommand("forecast", "forecast beyond a lookback CSV");
  add_common(fc);
  fc->add_option("--checkpoint", checkpoint_path, "input checkpoint")->required();
  fc->add_option("--input", input_csv, "CSV holding at least one lookback")
      ->required();

  // CLI11 wants argv-style tokens in reverse order
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    ExperimentConfig config = load_experiment_config(config_path);
    if (has_seed) config.seed = seed_override;
    CommandContext ctx{&out, &err};
    if (synth->parsed()) {
      cmd_synth(config, out_dir, ctx);
    } else if (pre->parsed()) {
      cmd_pretrain(config, out_dir, ctx);
    } else if (fine->parsed()) {
      cmd_finetune(config, checkpoint_path, out_dir, ctx);
    } else if (eval->parsed()) {
      cmd_evaluate(config, checkpoint_path, parse_horizons(horizons_text),
                   baseline, out_dir, ctx);
    } else if (abl->parsed()) {
      cmd_ablate(config, parse_horizons(horizons_text), out_dir, ctx);
    } else if (fc->parsed()) {
      cmd_forecast(config, checkpoint_path, input_csv, out_dir, ctx);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cli_main(args, std::cout, std::cerr);
}

}  // namespace patchcast
