#include "patchcast/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace patchcast {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

bool encoder_parameter(const std::string& name) {
  return name.rfind("scale", 0) == 0 && name.find(".hor_") == std::string::npos;
}

}  // namespace

Tensor mse_loss(const Tensor& y, const Tensor& y_hat, Tape* tape) {
  if (y.shape() != y_hat.shape()) {
    throw DimensionError("mse_loss: shapes " + shape_str(y.shape()) + " and " +
                         shape_str(y_hat.shape()) + " differ");
  }
  Tensor err = sub(y, y_hat, tape);
  return mean(mul(err, err, tape), tape);
}

Tensor nll_loss(const Tensor& y, const Tensor& y_hat, const Tensor& var_hat,
                Tape* tape) {
  if (y.shape() != y_hat.shape() || y.shape() != var_hat.shape()) {
    throw DimensionError("nll_loss: shapes " + shape_str(y.shape()) + ", " +
                         shape_str(y_hat.shape()) + " and " +
                         shape_str(var_hat.shape()) + " differ");
  }
  Tensor err = sub(y, y_hat, tape);
  Tensor fit = div(mul(err, err, tape), scalar_mul(var_hat, 2.0, tape), tape);
  Tensor spread = scalar_mul(log(var_hat, tape), 0.5, tape);
  return mean(add(spread, fit, tape), tape);
}

Tensor combined_loss(const Tensor& y, const GaussianForecast& forecast,
                     double lambda, Tape* tape) {
  if (lambda < 0.0) throw ParameterError("combined_loss: lambda must be non-negative");
  Tensor point = mse_loss(y, forecast.mean, tape);
  if (lambda == 0.0) return point;
  Tensor prob = nll_loss(y, forecast.mean, forecast.variance, tape);
  return add(point, scalar_mul(prob, lambda, tape), tape);
}

void AdamState::init(const std::vector<std::pair<std::string, Tensor>>& params) {
  step = 0;
  m.assign(params.size(), {});
  v.assign(params.size(), {});
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i].assign(params[i].second.numel(), 0.0);
    v[i].assign(params[i].second.numel(), 0.0);
  }
}

void optimizer_step(const std::vector<std::pair<std::string, Tensor>>& params,
                    AdamState& state) {
  if (state.m.size() != params.size()) {
    throw ParameterError("optimizer_step: state tracks " +
                         std::to_string(state.m.size()) + " parameters, got " +
                         std::to_string(params.size()));
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].second;
    if (!t.requires_grad()) continue;
    std::vector<double>& g = t.grad();
    std::vector<double>& mi = state.m[i];
    std::vector<double>& vi = state.v[i];
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (!std::isfinite(g[j])) {
        throw TrainingError("non-finite gradient in parameter '" +
                            params[i].first + "'");
      }
      mi[j] = state.beta1 * mi[j] + (1.0 - state.beta1) * g[j];
      vi[j] = state.beta2 * vi[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double mhat = mi[j] / bc1;
      const double vhat = vi[j] / bc2;
      t[j] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.eps);
    }
    t.zero_grad();
  }
}

namespace {

// Endless shuffled pass over one dataset's training indices.
class SampleQueue {
 public:
  SampleQueue(IndexRange range, Rng& rng) : rng_(rng) {
    order_.resize(range.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = range.begin + i;
    shuffle(order_, rng_);
  }

  std::size_t next() {
    if (pos_ == order_.size()) {
      shuffle(order_, rng_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  Rng& rng_;
};

std::size_t pick_dataset(const std::vector<TrainDataset>& datasets,
                         double total_weight, Rng& rng) {
  const double u = rng.uniform() * total_weight;
  double acc = 0.0;
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    acc += datasets[i].weight;
    if (u < acc) return i;
  }
  return datasets.size() - 1;
}

}  // namespace

double evaluate_loss(const ModelParameters& params, const ModelConfig& config,
                     const std::vector<TrainDataset>& datasets) {
  double total = 0.0;
  for (const TrainDataset& ds : datasets) {
    if (ds.val.empty() || ds.weight == 0.0) continue;
    double sum = 0.0;
    for (std::size_t i = ds.val.begin; i < ds.val.end; ++i) {
      const WindowSample& s = (*ds.samples)[i];
      GaussianForecast f = forward(s.x, s.z, params, config, {});
      sum += combined_loss(s.y, f, config.lambda).value();
    }
    total += ds.weight * (sum / static_cast<double>(ds.val.size()));
  }
  return total;
}

TrainReport run_training(ModelParameters& params, const ModelConfig& config,
                         const std::vector<TrainDataset>& datasets,
                         const TrainConfig& tc) {
  config.validate();
  if (datasets.empty()) throw ParameterError("run_training: no datasets");
  if (tc.batch_size == 0) {
    throw ParameterError("run_training: batch size must be positive");
  }
  double total_weight = 0.0;
  std::size_t total_train = 0;
  for (const TrainDataset& ds : datasets) {
    if (ds.weight < 0.0) throw ParameterError("run_training: negative dataset weight");
    if (ds.samples == nullptr) throw ParameterError("run_training: dataset without samples");
    if (ds.weight > 0.0 && (ds.train.empty() || ds.val.empty())) {
      throw ParameterError("run_training: weighted dataset with empty train or "
                           "validation range");
    }
    total_weight += ds.weight;
    if (ds.weight > 0.0) total_train += ds.train.size();
  }
  if (total_weight <= 0.0) {
    throw ParameterError("run_training: dataset weights sum to zero");
  }

  params.set_requires_grad(true);
  auto named = params.named();
  if (tc.freeze_encoder) {
    for (auto& [name, t] : named) {
      if (encoder_parameter(name)) t.set_requires_grad(false);
    }
  }

  AdamState adam;
  adam.learning_rate = tc.learning_rate;
  adam.init(named);

  Rng shuffle_rng(tc.seed);
  Rng select_rng(tc.seed + 1);
  Rng dropout_rng(tc.seed + 2);

  std::vector<SampleQueue> queues;
  queues.reserve(datasets.size());
  for (const TrainDataset& ds : datasets) {
    queues.emplace_back(ds.weight > 0.0 ? ds.train : IndexRange{0, 0}, shuffle_rng);
  }

  const std::size_t batches_per_epoch =
      (total_train + tc.batch_size - 1) / tc.batch_size;

  TrainReport report;
  ModelParameters best;
  std::size_t bad_epochs = 0;
  Tape tape;

  for (std::size_t epoch = 0; epoch < tc.max_epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    double epoch_loss = 0.0;

    for (std::size_t batch = 0; batch < batches_per_epoch; ++batch) {
      const std::size_t d = datasets.size() == 1
                                ? 0
                                : pick_dataset(datasets, total_weight, select_rng);
      const TrainDataset& ds = datasets[d];

      Tensor batch_sum = Tensor::scalar(0.0);
      for (std::size_t b = 0; b < tc.batch_size; ++b) {
        const WindowSample& s = (*ds.samples)[queues[d].next()];
        ForwardOptions opt;
        opt.mode = RunMode::train;
        opt.rng = &dropout_rng;
        opt.tape = &tape;
        GaussianForecast f = forward(s.x, s.z, params, config, opt);
        batch_sum = add(batch_sum, combined_loss(s.y, f, config.lambda, &tape), &tape);
      }
      Tensor batch_loss = scalar_mul(
          batch_sum, ds.weight / static_cast<double>(tc.batch_size), &tape);

      const double value = batch_loss.value();
      if (!std::isfinite(value)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1) +
                            ", batch " + std::to_string(batch + 1));
      }
      epoch_loss += value;
      tape.backward(batch_loss);
      optimizer_step(named, adam);
      tape.clear();
    }

    EpochStats stats;
    stats.train_loss = epoch_loss / static_cast<double>(batches_per_epoch);
    stats.val_loss = evaluate_loss(params, config, datasets);
    stats.seconds = seconds_since(epoch_start);
    report.epochs.push_back(stats);

    if (stats.val_loss < report.best_val_loss) {
      report.best_val_loss = stats.val_loss;
      report.best_epoch = epoch;
      best = params.clone();
      bad_epochs = 0;
    } else {
      bad_epochs += 1;
      if (bad_epochs > tc.patience) {
        report.early_stopped = true;
        break;
      }
    }
  }

  if (!best.scales.empty() || best.fusion.w1.defined()) {
    auto best_named = best.named();
    for (std::size_t i = 0; i < named.size(); ++i) {
      named[i].second.values() = best_named[i].second.values();
    }
  }
  if (tc.freeze_encoder) params.set_requires_grad(true);
  return report;
}

TrainReport train(ModelParameters& params, const ModelConfig& config,
                  const std::vector<WindowSample>& samples,
                  const DatasetSplit& split, const TrainConfig& tc) {
  TrainDataset ds;
  ds.samples = &samples;
  ds.train = split.train;
  ds.val = split.val;
  ds.weight = 1.0;
  return run_training(params, config, {ds}, tc);
}

TrainReport pretrain(ModelParameters& params, const ModelConfig& config,
                     const std::vector<CorpusEntry>& corpus, const TrainConfig& tc) {
  if (config.has_future_path()) {
    throw ConfigError("pretrain: the future pathway is disabled during "
                      "pretraining; use a config without future channels");
  }
  if (corpus.empty()) throw ParameterError("pretrain: empty corpus");
  std::vector<TrainDataset> datasets;
  datasets.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const CorpusEntry& entry = corpus[i];
    if (entry.samples == nullptr || entry.samples->empty()) {
      throw ParameterError("pretrain: corpus dataset " + std::to_string(i) +
                           " has no samples");
    }
    const Tensor& x = entry.samples->front().x;
    if (x.cols() != config.n_targets) {
      throw ConfigError("pretrain: corpus dataset " + std::to_string(i) + " has " +
                        std::to_string(x.cols()) + " target channels, model expects " +
                        std::to_string(config.n_targets));
    }
    TrainDataset ds;
    ds.samples = entry.samples;
    ds.train = entry.split.train;
    ds.val = entry.split.val;
    ds.weight = entry.weight;
    datasets.push_back(ds);
  }
  return run_training(params, config, datasets, tc);
}

ModelParameters extend_future_pathway(const ModelParameters& pretrained,
                                      const ModelConfig& old_config,
                                      const ModelConfig& new_config,
                                      std::uint64_t seed) {
  if (old_config.has_future_path()) {
    throw LoadError("extend_future_pathway: checkpoint already has a future pathway");
  }
  if (!new_config.has_future_path()) {
    throw LoadError("extend_future_pathway: target config has no future channels");
  }
  ModelConfig probe = new_config;
  probe.n_futures = 0;
  const bool same = probe.scales == old_config.scales &&
                    probe.d_model == old_config.d_model &&
                    probe.n_heads == old_config.n_heads &&
                    probe.n_layers == old_config.n_layers &&
                    probe.ff_width == old_config.ff_width &&
                    probe.lookback == old_config.lookback &&
                    probe.horizon == old_config.horizon &&
                    probe.n_targets == old_config.n_targets;
  if (!same) {
    throw LoadError("extend_future_pathway: checkpoint architecture differs "
                    "beyond the future pathway");
  }

  ModelParameters out = pretrained.clone();
  Rng rng(seed);
  const std::size_t d = new_config.d_model, e = new_config.n_futures;
  const double bound = 1.0 / std::sqrt(static_cast<double>(e));
  out.future_w = Tensor({e, d});
  for (auto& v : out.future_w.values()) v = rng.uniform(-bound, bound);
  out.future_b = Tensor({d});

  const std::size_t s_rows = new_config.scales.size() * d;
  Tensor extended({s_rows + d, d});
  for (std::size_t i = 0; i < s_rows * d; ++i) extended[i] = out.fusion.w1[i];
  // the z_embed rows start at zero: the extension preserves the pretrained
  // function while leaving a live gradient path into the new weights
  out.fusion.w1 = extended;
  return out;
}

TrainReport finetune(ModelParameters& params, const ModelConfig& config,
                     const std::vector<WindowSample>& samples,
                     const DatasetSplit& split, const TrainConfig& tc) {
  return train(params, config, samples, split, tc);
}

}  // namespace patchcast
