#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "patchcast/data.hpp"
#include "patchcast/model.hpp"

namespace patchcast {

Tensor mse_loss(const Tensor& y, const Tensor& y_hat, Tape* tape = nullptr);

/// Per entry log(var)/2 + err^2/(2 var), averaged; the constant half-log-2pi
/// term is omitted so reported values match the model's training objective.
Tensor nll_loss(const Tensor& y, const Tensor& y_hat, const Tensor& var_hat,
                Tape* tape = nullptr);

Tensor combined_loss(const Tensor& y, const GaussianForecast& forecast,
                     double lambda, Tape* tape = nullptr);

/// Adaptive-moment optimizer state; slot i belongs to the i-th named
/// parameter it was initialized with.
struct AdamState {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> m, v;

  void init(const std::vector<std::pair<std::string, Tensor>>& params);
};

/// Bias-corrected moment update over every requires_grad parameter;
/// gradients are cleared afterwards. Throws TrainingError on a non-finite
/// gradient, naming the parameter.
void optimizer_step(const std::vector<std::pair<std::string, Tensor>>& params,
                    AdamState& state);

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  std::size_t patience = 5;
  std::uint64_t seed = 0;
  bool freeze_encoder = false;
};

struct EpochStats {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;  // index into epochs
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool early_stopped = false;
};

/// One training corpus entry: window samples plus the index ranges to use
/// and its mixing weight.
struct TrainDataset {
  const std::vector<WindowSample>* samples = nullptr;
  IndexRange train, val;
  double weight = 1.0;
};

/// Mini-batch loop shared by train, pretrain and finetune. Each batch picks
/// a dataset (proportional to weight; the draw is skipped entirely for a
/// single dataset), forms a shuffled batch, and applies the weighted
/// combined loss. Validation weights each dataset the same way. Early
/// stopping restores the best-validation parameters into `params`.
TrainReport run_training(ModelParameters& params, const ModelConfig& config,
                         const std::vector<TrainDataset>& datasets,
                         const TrainConfig& tc);

TrainReport train(ModelParameters& params, const ModelConfig& config,
                  const std::vector<WindowSample>& samples,
                  const DatasetSplit& split, const TrainConfig& tc);

struct CorpusEntry {
  const std::vector<WindowSample>* samples = nullptr;
  DatasetSplit split;
  double weight = 1.0;
};

/// Weighted multi-dataset training; the model config must have no future
/// pathway and every dataset must match its channel count.
TrainReport pretrain(ModelParameters& params, const ModelConfig& config,
                     const std::vector<CorpusEntry>& corpus, const TrainConfig& tc);

/// Grows a pathless pretrained model to `new_config` (which adds future
/// channels): fresh future projection, zero-extended fusion rows, so the
/// extended model computes exactly the same function at first but can learn
/// to use z. Any other architecture difference is a LoadError.
ModelParameters extend_future_pathway(const ModelParameters& pretrained,
                                      const ModelConfig& old_config,
                                      const ModelConfig& new_config,
                                      std::uint64_t seed);

TrainReport finetune(ModelParameters& params, const ModelConfig& config,
                     const std::vector<WindowSample>& samples,
                     const DatasetSplit& split, const TrainConfig& tc);

/// Weighted validation-style loss of the current parameters (eval mode).
double evaluate_loss(const ModelParameters& params, const ModelConfig& config,
                     const std::vector<TrainDataset>& datasets);

}  // namespace patchcast
