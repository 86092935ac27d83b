#pragma once

#include <string>
#include <vector>

#include "patchcast/data.hpp"
#include "patchcast/model.hpp"

namespace patchcast {

/// Everything needed to resume or apply a trained model: architecture,
/// channel names, normalization statistics, and every parameter tensor.
struct Checkpoint {
  ModelConfig config;
  std::vector<std::string> target_names;
  std::vector<std::string> future_names;
  NormalizationStats stats;
  ModelParameters params;
};

/// JSON with a mandatory format/version header. Doubles are written with
/// shortest round-trip precision, so save -> load -> save is byte-stable
/// and parameters survive bitwise.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);

/// Validates the header, config, and every tensor's name/shape before any
/// state is constructed; a malformed file never yields a partial model.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace patchcast
