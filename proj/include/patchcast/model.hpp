#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "patchcast/patching.hpp"
#include "patchcast/tensor.hpp"

namespace patchcast {

/// Full architecture hyperparameter record. `scales` carries per-scale
/// window/patch/stride geometry; the rest sizes the shared machinery.
struct ModelConfig {
  std::vector<ScaleSpec> scales;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t ff_width = 128;
  double dropout = 0.1;
  std::size_t lookback = 336;
  std::size_t horizon = 96;
  std::size_t n_targets = 1;
  std::size_t n_futures = 0;
  double lambda = 0.5;
  double var_floor = 1e-6;

  void validate() const;  // throws ParameterError with the violated rule
  std::size_t scale_len(std::size_t s) const;    // L_s
  std::size_t n_patches(std::size_t s) const;    // N_s
  bool has_future_path() const { return n_futures > 0; }
};

struct EncoderLayerParams {
  Tensor wq, wk, wv, wo;              // [d, d]
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;  // [d]
  Tensor ff_w1, ff_b1;                // [d, ff], [ff]
  Tensor ff_w2, ff_b2;                // [ff, d], [d]
};

struct ScaleBranchParams {
  Tensor patch_w, patch_b;  // [P_s, d], [d]; channels pass one at a time
  Tensor pos;               // [N_s, d] learned positions
  std::vector<EncoderLayerParams> layers;
  Tensor lnf_g, lnf_b;      // [d]
  Tensor hor_w, hor_b;      // [N_s*d, H*d], [H*d]
};

struct FusionParams {
  Tensor w1, b1;            // [(S + has_future)*d, d], [d]
  Tensor mean_w, mean_b;    // [d, 1], [1]
  Tensor var_w, var_b;      // [d, 1], [1]
};

struct ModelParameters {
  std::vector<ScaleBranchParams> scales;
  Tensor future_w, future_b;  // [E, d], [d]; undefined when E == 0
  FusionParams fusion;

  /// Stable name -> tensor ordering; handles share storage with the model.
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> all() const;
  void set_requires_grad(bool on);
  ModelParameters clone() const;
};

struct GaussianForecast {
  Tensor mean;      // [H, D]
  Tensor variance;  // [H, D], every entry >= var_floor
};

std::size_t parameter_count(const ModelConfig& config);

ModelParameters init_model(const ModelConfig& config, std::uint64_t seed);

struct ForwardOptions {
  RunMode mode = RunMode::eval;
  Rng* rng = nullptr;   // required for train mode with dropout > 0
  Tape* tape = nullptr;
  int zero_scale = -1;  // replace this scale's features with zeros (-1: off)
};

/// One channel through one scale branch: patchify, embed, encode, map the
/// flattened tokens to H steps of width d_model.
Tensor encode_scale(const Tensor& x_scaled, const ScaleBranchParams& branch,
                    const ModelConfig& config, std::size_t scale_index,
                    const ForwardOptions& opt);

/// Per-step affine map of the future-known rows into model space.
Tensor project_future(const Tensor& z, const ModelParameters& params,
                      Tape* tape = nullptr);

/// Concatenate per-scale features (and z_embed when present) per horizon
/// step, run the fusion perceptron, and emit one channel's mean/variance.
GaussianForecast fuse_and_head(const std::vector<Tensor>& per_scale,
                               const Tensor& z_embed, const FusionParams& fusion,
                               const ModelConfig& config,
                               const ForwardOptions& opt);

/// Full network: channel-independent backbone, shared future pathway.
/// x is [L, D] and z [H, E] (undefined when E == 0); both already
/// normalized. Output stays in normalized units.
GaussianForecast forward(const Tensor& x, const Tensor& z,
                         const ModelParameters& params, const ModelConfig& config,
                         const ForwardOptions& opt);

}  // namespace patchcast
