#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "patchcast/data.hpp"
#include "patchcast/model.hpp"

namespace patchcast {

// Monte Carlo dropout forecast: M stochastic passes combined by the
// law-of-total-variance estimator. `variance` = mean aleatoric + population
// variance of the pass means, so it never falls below the mean aleatoric term.
struct MCForecast {
  std::vector<Tensor> sample_means;      // M tensors, each [H, D]
  std::vector<Tensor> sample_variances;  // M tensors, each [H, D]
  Tensor mean;                           // [H, D]
  Tensor variance;                       // [H, D]
  std::size_t n_samples = 0;
};

struct PredictionInterval {
  Tensor lower;  // [H, D]
  Tensor upper;  // [H, D]
  double level = 0.95;
};

struct PointMetrics {
  double mse = 0.0;
  double mae = 0.0;
  double rse = 0.0;
};

struct MetricReport {
  double mse = 0.0;
  double mae = 0.0;
  double rse = 0.0;
  double crps = 0.0;
  double pi_coverage = 0.0;
  std::size_t horizon = 0;
  std::string dataset;
  bool normalized_units = true;
};

// Combines finished stochastic passes; exposed separately so hand-built pass
// sets can exercise the estimator directly.
MCForecast combine_mc(const std::vector<GaussianForecast>& passes);

// Runs M dropout-active passes; pass i draws its masks from Rng(seed + i).
// Warns when the dropout rate is zero: passes coincide and the epistemic
// term degenerates to zero.
MCForecast mc_forecast(const Tensor& x, const Tensor& z,
                       const ModelParameters& params, const ModelConfig& config,
                       std::size_t n_samples, std::uint64_t seed,
                       Warnings* warnings = nullptr);

constexpr std::size_t kDefaultMcSamples = 50;

// Standard-normal helpers. The CDF goes through std::erf (correctly rounded
// by the C library, far inside the 1e-7 budget); the quantile is Acklam's
// rational approximation polished with one Halley step of the erf-based CDF.
double normal_pdf(double z);
double normal_cdf(double z);
double normal_quantile(double p);

// Central Gaussian interval: mean +- z * sqrt(variance) at the two-sided
// quantile for `level`.
PredictionInterval prediction_interval(const Tensor& mean, const Tensor& variance,
                                       double level);

// Alternative interval: quantiles of the equal-weight Gaussian mixture over
// the MC passes, found by bisection on the mixture CDF.
PredictionInterval mixture_interval(const MCForecast& mc, double level);

PointMetrics point_metrics(const Tensor& y, const Tensor& y_hat);

// Closed-form CRPS of a Gaussian predictive distribution, averaged over
// entries: sigma * [z(2*Phi(z) - 1) + 2*phi(z) - 1/sqrt(pi)].
double crps_gaussian(const Tensor& y, const Tensor& mean, const Tensor& variance);

// Closed-form CRPS of the equal-weight Gaussian mixture over MC passes:
//   sum_i w A(y - m_i, v_i) - 0.5 * sum_ij w^2 A(m_i - m_j, v_i + v_j)
// with A(u, v) = u * (2*Phi(u/sqrt(v)) - 1) + 2 * sqrt(v) * phi(u/sqrt(v)).
double crps_mixture(const Tensor& y, const MCForecast& mc);

// Fraction of entries inside the closed interval [lower, upper].
double pi_coverage(const Tensor& y, const PredictionInterval& interval);

MetricReport evaluate_metrics(const Tensor& y, const Tensor& mean,
                              const Tensor& variance, double level,
                              std::size_t horizon, const std::string& dataset,
                              bool normalized_units);

// Leave-one-scale-out ablation: importance of scale s at horizon step h is
// max(0, MSE with s zeroed at h - baseline MSE at h), normalized over scales.
// Columns whose deltas are all zero stay all-zero.
struct ScaleImportance {
  std::vector<std::vector<double>> per_horizon;  // [S][H]
  std::vector<double> overall;                   // [S]
};

ScaleImportance scale_importance(const ModelParameters& params,
                                 const ModelConfig& config,
                                 const std::vector<WindowSample>& samples,
                                 const IndexRange& range);

}  // namespace patchcast
