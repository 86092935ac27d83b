#include "patchcast/checkpoint.hpp"

#include <fstream>
#include <map>

#include <json.hpp>

namespace patchcast {

namespace {

using Json = nlohmann::ordered_json;

constexpr const char* kFormat = "patchcast-checkpoint";
constexpr int kVersion = 1;

const Json& field(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) {
    throw LoadError(std::string("checkpoint missing field '") + key + "'");
  }
  return *it;
}

template <typename T>
T number(const Json& j, const char* key) {
  try {
    return field(j, key).get<T>();
  } catch (const Json::exception&) {
    throw LoadError(std::string("checkpoint field '") + key + "' has the wrong type");
  }
}

Json stats_json(const std::vector<ChannelStats>& stats) {
  Json arr = Json::array();
  for (const ChannelStats& s : stats) arr.push_back({{"mean", s.mean}, {"std", s.std}});
  return arr;
}

std::vector<ChannelStats> stats_from(const Json& arr, const char* key) {
  if (!arr.is_array()) {
    throw LoadError(std::string("checkpoint field '") + key + "' must be an array");
  }
  std::vector<ChannelStats> out;
  for (const Json& s : arr) {
    out.push_back({number<double>(s, "mean"), number<double>(s, "std")});
  }
  return out;
}

Json config_json(const ModelConfig& c) {
  Json scales = Json::array();
  for (const ScaleSpec& s : c.scales) {
    scales.push_back({{"window", s.window},
                      {"patch_len", s.patch_len},
                      {"stride", s.stride}});
  }
  return Json{{"scales", scales},
              {"d_model", c.d_model},
              {"n_heads", c.n_heads},
              {"n_layers", c.n_layers},
              {"ff_width", c.ff_width},
              {"dropout", c.dropout},
              {"lookback", c.lookback},
              {"horizon", c.horizon},
              {"n_targets", c.n_targets},
              {"n_futures", c.n_futures},
              {"lambda", c.lambda},
              {"var_floor", c.var_floor}};
}

ModelConfig config_from(const Json& j) {
  ModelConfig c;
  const Json& scales = field(j, "scales");
  if (!scales.is_array() || scales.empty()) {
    throw LoadError("checkpoint config has no scales");
  }
  c.scales.clear();
  for (const Json& s : scales) {
    c.scales.push_back(ScaleSpec{number<std::size_t>(s, "window"),
                                 number<std::size_t>(s, "patch_len"),
                                 number<std::size_t>(s, "stride")});
  }
  c.d_model = number<std::size_t>(j, "d_model");
  c.n_heads = number<std::size_t>(j, "n_heads");
  c.n_layers = number<std::size_t>(j, "n_layers");
  c.ff_width = number<std::size_t>(j, "ff_width");
  c.dropout = number<double>(j, "dropout");
  c.lookback = number<std::size_t>(j, "lookback");
  c.horizon = number<std::size_t>(j, "horizon");
  c.n_targets = number<std::size_t>(j, "n_targets");
  c.n_futures = number<std::size_t>(j, "n_futures");
  c.lambda = number<double>(j, "lambda");
  c.var_floor = number<double>(j, "var_floor");
  return c;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  Json root;
  root["format"] = kFormat;
  root["version"] = kVersion;
  root["config"] = config_json(ckpt.config);
  root["target_names"] = ckpt.target_names;
  root["future_names"] = ckpt.future_names;
  root["stats"] = {{"target", stats_json(ckpt.stats.target)},
                   {"future", stats_json(ckpt.stats.future)}};
  Json params = Json::array();
  for (const auto& [name, t] : ckpt.params.named()) {
    params.push_back({{"name", name}, {"shape", t.shape()}, {"values", t.values()}});
  }
  root["params"] = std::move(params);

  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out << root.dump(1) << '\n';
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open checkpoint '" + path + "'");
  Json root;
  try {
    root = Json::parse(in);
  } catch (const Json::exception& e) {
    throw LoadError("checkpoint '" + path + "' is not valid JSON: " + e.what());
  }

  if (!root.is_object() || field(root, "format") != kFormat) {
    throw LoadError("checkpoint '" + path + "' has the wrong format marker");
  }
  if (number<int>(root, "version") != kVersion) {
    throw LoadError("checkpoint '" + path + "' has unsupported version " +
                    field(root, "version").dump());
  }

  Checkpoint ckpt;
  ckpt.config = config_from(field(root, "config"));
  try {
    ckpt.config.validate();
  } catch (const ParameterError& e) {
    throw LoadError("checkpoint '" + path + "' holds an invalid config: " + e.what());
  }
  try {
    ckpt.target_names = field(root, "target_names").get<std::vector<std::string>>();
    ckpt.future_names = field(root, "future_names").get<std::vector<std::string>>();
  } catch (const Json::exception&) {
    throw LoadError("checkpoint '" + path + "' has malformed channel names");
  }
  if (ckpt.target_names.size() != ckpt.config.n_targets ||
      ckpt.future_names.size() != ckpt.config.n_futures) {
    throw LoadError("checkpoint '" + path + "' channel names disagree with config");
  }
  const Json& stats = field(root, "stats");
  ckpt.stats.target = stats_from(field(stats, "target"), "target");
  ckpt.stats.future = stats_from(field(stats, "future"), "future");
  if (ckpt.stats.target.size() != ckpt.config.n_targets ||
      ckpt.stats.future.size() != ckpt.config.n_futures) {
    throw LoadError("checkpoint '" + path + "' stats disagree with config");
  }

  // The config fixes every tensor shape; build the skeleton, then demand the
  // file provide exactly that tensor set.
  ckpt.params = init_model(ckpt.config, 0);
  std::map<std::string, Tensor> expected;
  for (auto& [name, t] : ckpt.params.named()) expected.emplace(name, t);

  const Json& params = field(root, "params");
  if (!params.is_array()) throw LoadError("checkpoint params must be an array");
  const std::size_t expected_count = expected.size();
  std::size_t seen = 0;
  for (const Json& p : params) {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> values;
    try {
      name = field(p, "name").get<std::string>();
      shape = field(p, "shape").get<std::vector<std::size_t>>();
      values = field(p, "values").get<std::vector<double>>();
    } catch (const Json::exception&) {
      throw LoadError("checkpoint '" + path + "' has a malformed parameter entry");
    }
    auto it = expected.find(name);
    if (it == expected.end()) {
      throw LoadError("checkpoint '" + path + "' holds an unexpected or "
                      "duplicate parameter '" + name + "'");
    }
    if (shape != it->second.shape() || values.size() != it->second.numel()) {
      throw LoadError("checkpoint '" + path + "' parameter '" + name +
                      "' has shape " + shape_str(shape) + ", expected " +
                      shape_str(it->second.shape()));
    }
    it->second.values() = std::move(values);
    expected.erase(it);
    ++seen;
  }
  if (seen != expected_count) {
    throw LoadError("checkpoint '" + path + "' holds " + std::to_string(seen) +
                    " parameters, expected " + std::to_string(expected_count));
  }
  return ckpt;
}

}  // namespace patchcast
