#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "patchcast/tensor.hpp"

namespace patchcast {

using Warnings = std::vector<std::string>;

/// Geometry of one temporal scale: averaging window, patch length, stride.
struct ScaleSpec {
  std::size_t window = 1;
  std::size_t patch_len = 16;
  std::size_t stride = 8;

  bool operator==(const ScaleSpec&) const = default;
};

/// Patches of one scale, stored as an N_s x (P_s * D) row-major matrix so a
/// row is one patch ready for embedding. Patch n starts at row n * stride of
/// the downsampled series.
struct PatchSet {
  Tensor patches;  // [N_s, P_s * D]
  std::size_t scale_index = 0;
  std::size_t patch_len = 0;
  std::size_t n_channels = 0;

  std::size_t count() const { return patches.rows(); }
};

std::size_t downsampled_len(std::size_t len, std::size_t window);
std::size_t patch_count(std::size_t len, std::size_t patch_len, std::size_t stride);

/// Non-overlapping window means over rows; the trailing L mod w rows are
/// dropped. window == 1 returns the input handle unchanged.
Tensor scale_transform(const Tensor& x, std::size_t window, Tape* tape = nullptr);

PatchSet patchify(const Tensor& x, std::size_t patch_len, std::size_t stride,
                  std::size_t scale_index, Tape* tape = nullptr);

/// Scale ladder for a lookback of length L: windows {1, 24, 168} on hourly
/// data, {1, 4, 16} otherwise. Patch geometry per scale is
/// P_s = min(16, L_s), stride = max(1, P_s / 2). Scales whose downsampled
/// length falls below 2 are dropped with a warning.
std::vector<ScaleSpec> default_scale_specs(std::size_t lookback, bool hourly,
                                           Warnings* warnings = nullptr);

}  // namespace patchcast
