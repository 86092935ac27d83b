#include "patchcast/uncertainty.hpp"

#include <algorithm>
#include <cmath>

#include "patchcast/errors.hpp"
#include "patchcast/rng.hpp"

namespace patchcast {

namespace {

constexpr double kInvSqrtPi = 0.5641895835477563;
constexpr double kInvSqrt2Pi = 0.3989422804014327;
constexpr double kSqrt2 = 1.4142135623730951;

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": tensors must share a shape");
  }
}

}  // namespace

MCForecast combine_mc(const std::vector<GaussianForecast>& passes) {
  if (passes.empty()) throw ParameterError("combine_mc: no passes");
  const auto& shape = passes[0].mean.shape();
  const std::size_t n = passes[0].mean.numel();
  const double m = static_cast<double>(passes.size());

  MCForecast mc;
  mc.n_samples = passes.size();
  mc.sample_means.reserve(passes.size());
  mc.sample_variances.reserve(passes.size());
  for (const GaussianForecast& f : passes) {
    if (f.mean.shape() != shape || f.variance.shape() != shape) {
      throw DimensionError("combine_mc: passes must share a shape");
    }
    mc.sample_means.push_back(f.mean);
    mc.sample_variances.push_back(f.variance);
  }

  mc.mean = Tensor(shape);
  mc.variance = Tensor(shape);
  for (std::size_t i = 0; i < n; ++i) {
    double mean_sum = 0.0;
    for (const GaussianForecast& f : passes) mean_sum += f.mean[i];
    const double combined_mean = mean_sum / m;

    double aleatoric = 0.0;
    double epistemic = 0.0;
    for (const GaussianForecast& f : passes) {
      aleatoric += f.variance[i];
      const double d = f.mean[i] - combined_mean;
      epistemic += d * d;
    }
    mc.mean[i] = combined_mean;
    mc.variance[i] = aleatoric / m + epistemic / m;
  }
  return mc;
}

MCForecast mc_forecast(const Tensor& x, const Tensor& z,
                       const ModelParameters& params, const ModelConfig& config,
                       std::size_t n_samples, std::uint64_t seed,
                       Warnings* warnings) {
  if (n_samples < 2) {
    throw ParameterError("mc_forecast: at least 2 passes are required");
  }
  if (config.dropout == 0.0 && warnings != nullptr) {
    warnings->push_back(
        "mc_forecast: dropout rate is 0, all passes coincide and the "
        "epistemic variance term degenerates to zero");
  }
  std::vector<GaussianForecast> passes;
  passes.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    Rng pass_rng(seed + i);
    ForwardOptions opt;
    opt.mode = RunMode::train;
    opt.rng = &pass_rng;
    passes.push_back(forward(x, z, params, config, opt));
  }
  return combine_mc(passes);
}

double normal_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

double normal_cdf(double z) { return 0.5 * std::erfc(-z / kSqrt2); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw ParameterError("normal_quantile: p must lie strictly in (0, 1)");
  }
  // Acklam's rational approximation (|error| < 1.15e-9), then one Halley step.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = normal_cdf(x) - p;
  const double u = e / normal_pdf(x);
  return x - u / (1.0 + 0.5 * x * u);
}

PredictionInterval prediction_interval(const Tensor& mean, const Tensor& variance,
                                       double level) {
  if (!(level > 0.0 && level < 1.0)) {
    throw ParameterError("prediction_interval: level must lie in (0, 1)");
  }
  check_same_shape(mean, variance, "prediction_interval");
  const double zq = normal_quantile(0.5 * (1.0 + level));
  PredictionInterval pi;
  pi.level = level;
  pi.lower = Tensor(mean.shape());
  pi.upper = Tensor(mean.shape());
  for (std::size_t i = 0; i < mean.numel(); ++i) {
    if (variance[i] < 0.0) {
      throw DomainError("prediction_interval: negative variance");
    }
    const double half = zq * std::sqrt(variance[i]);
    pi.lower[i] = mean[i] - half;
    pi.upper[i] = mean[i] + half;
  }
  return pi;
}

namespace {

double mixture_cdf(const MCForecast& mc, std::size_t i, double x) {
  double acc = 0.0;
  for (std::size_t s = 0; s < mc.n_samples; ++s) {
    acc += normal_cdf((x - mc.sample_means[s][i]) /
                      std::sqrt(mc.sample_variances[s][i]));
  }
  return acc / static_cast<double>(mc.n_samples);
}

double mixture_quantile(const MCForecast& mc, std::size_t i, double p) {
  double lo = mc.sample_means[0][i];
  double hi = lo;
  double max_sd = 0.0;
  for (std::size_t s = 0; s < mc.n_samples; ++s) {
    lo = std::min(lo, mc.sample_means[s][i]);
    hi = std::max(hi, mc.sample_means[s][i]);
    max_sd = std::max(max_sd, std::sqrt(mc.sample_variances[s][i]));
  }
  lo -= 40.0 * max_sd;
  hi += 40.0 * max_sd;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (mixture_cdf(mc, i, mid) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace

PredictionInterval mixture_interval(const MCForecast& mc, double level) {
  if (!(level > 0.0 && level < 1.0)) {
    throw ParameterError("mixture_interval: level must lie in (0, 1)");
  }
  if (mc.n_samples == 0) throw ParameterError("mixture_interval: empty forecast");
  for (std::size_t s = 0; s < mc.n_samples; ++s) {
    for (std::size_t i = 0; i < mc.sample_variances[s].numel(); ++i) {
      if (!(mc.sample_variances[s][i] > 0.0)) {
        throw DomainError("mixture_interval: non-positive sample variance");
      }
    }
  }
  const double tail = 0.5 * (1.0 - level);
  PredictionInterval pi;
  pi.level = level;
  pi.lower = Tensor(mc.mean.shape());
  pi.upper = Tensor(mc.mean.shape());
  for (std::size_t i = 0; i < mc.mean.numel(); ++i) {
    pi.lower[i] = mixture_quantile(mc, i, tail);
    pi.upper[i] = mixture_quantile(mc, i, 1.0 - tail);
  }
  return pi;
}

PointMetrics point_metrics(const Tensor& y, const Tensor& y_hat) {
  check_same_shape(y, y_hat, "point_metrics");
  const std::size_t n = y.numel();
  if (n == 0) throw ParameterError("point_metrics: empty tensors");

  double sq = 0.0, abs_err = 0.0, y_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = y[i] - y_hat[i];
    sq += e * e;
    abs_err += std::abs(e);
    y_sum += y[i];
  }
  const double y_mean = y_sum / static_cast<double>(n);
  double y_var_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = y[i] - y_mean;
    y_var_sum += d * d;
  }
  if (y_var_sum == 0.0) {
    throw DomainError("point_metrics: y is constant, RSE is undefined");
  }
  PointMetrics m;
  m.mse = sq / static_cast<double>(n);
  m.mae = abs_err / static_cast<double>(n);
  m.rse = std::sqrt(sq / y_var_sum);
  return m;
}

double crps_gaussian(const Tensor& y, const Tensor& mean, const Tensor& variance) {
  check_same_shape(y, mean, "crps_gaussian");
  check_same_shape(y, variance, "crps_gaussian");
  const std::size_t n = y.numel();
  if (n == 0) throw ParameterError("crps_gaussian: empty tensors");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(variance[i] > 0.0)) {
      throw DomainError("crps_gaussian: variance must be positive");
    }
    const double sd = std::sqrt(variance[i]);
    const double z = (y[i] - mean[i]) / sd;
    acc += sd * (z * (2.0 * normal_cdf(z) - 1.0) + 2.0 * normal_pdf(z) - kInvSqrtPi);
  }
  return acc / static_cast<double>(n);
}

namespace {

// E|W| for W ~ N(u, v), the building block of the mixture CRPS identity.
double abs_normal_mean(double u, double v) {
  const double sd = std::sqrt(v);
  const double z = u / sd;
  return u * (2.0 * normal_cdf(z) - 1.0) + 2.0 * sd * normal_pdf(z);
}

}  // namespace

double crps_mixture(const Tensor& y, const MCForecast& mc) {
  check_same_shape(y, mc.mean, "crps_mixture");
  if (mc.n_samples == 0) throw ParameterError("crps_mixture: empty forecast");
  const std::size_t n = y.numel();
  if (n == 0) throw ParameterError("crps_mixture: empty tensors");
  const double m = static_cast<double>(mc.n_samples);

  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double first = 0.0;
    for (std::size_t s = 0; s < mc.n_samples; ++s) {
      const double v = mc.sample_variances[s][i];
      if (!(v > 0.0)) {
        throw DomainError("crps_mixture: sample variance must be positive");
      }
      first += abs_normal_mean(y[i] - mc.sample_means[s][i], v);
    }
    double second = 0.0;
    for (std::size_t s = 0; s < mc.n_samples; ++s) {
      for (std::size_t t = 0; t < mc.n_samples; ++t) {
        second += abs_normal_mean(
            mc.sample_means[s][i] - mc.sample_means[t][i],
            mc.sample_variances[s][i] + mc.sample_variances[t][i]);
      }
    }
    acc += first / m - 0.5 * second / (m * m);
  }
  return acc / static_cast<double>(n);
}

double pi_coverage(const Tensor& y, const PredictionInterval& interval) {
  check_same_shape(y, interval.lower, "pi_coverage");
  check_same_shape(y, interval.upper, "pi_coverage");
  const std::size_t n = y.numel();
  if (n == 0) throw ParameterError("pi_coverage: empty tensors");
  std::size_t inside = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (interval.lower[i] <= y[i] && y[i] <= interval.upper[i]) ++inside;
  }
  return static_cast<double>(inside) / static_cast<double>(n);
}

MetricReport evaluate_metrics(const Tensor& y, const Tensor& mean,
                              const Tensor& variance, double level,
                              std::size_t horizon, const std::string& dataset,
                              bool normalized_units) {
  const PointMetrics pm = point_metrics(y, mean);
  MetricReport report;
  report.mse = pm.mse;
  report.mae = pm.mae;
  report.rse = pm.rse;
  report.crps = crps_gaussian(y, mean, variance);
  report.pi_coverage = pi_coverage(y, prediction_interval(mean, variance, level));
  report.horizon = horizon;
  report.dataset = dataset;
  report.normalized_units = normalized_units;
  return report;
}

ScaleImportance scale_importance(const ModelParameters& params,
                                 const ModelConfig& config,
                                 const std::vector<WindowSample>& samples,
                                 const IndexRange& range) {
  const std::size_t n_scales = config.scales.size();
  if (n_scales < 2) {
    throw ParameterError("scale_importance: at least 2 scales are required");
  }
  if (range.empty() || range.end > samples.size()) {
    throw ParameterError("scale_importance: empty or out-of-range window set");
  }
  const std::size_t h_steps = config.horizon;
  const double denom =
      static_cast<double>(range.size()) * static_cast<double>(config.n_targets);

  auto horizon_mse = [&](int zero_scale) {
    std::vector<double> acc(h_steps, 0.0);
    for (std::size_t i = range.begin; i < range.end; ++i) {
      const WindowSample& s = samples[i];
      ForwardOptions opt;
      opt.zero_scale = zero_scale;
      GaussianForecast f = forward(s.x, s.z, params, config, opt);
      for (std::size_t h = 0; h < h_steps; ++h) {
        for (std::size_t d = 0; d < config.n_targets; ++d) {
          const double e = s.y.at(h, d) - f.mean.at(h, d);
          acc[h] += e * e;
        }
      }
    }
    for (double& v : acc) v /= denom;
    return acc;
  };

  const std::vector<double> base = horizon_mse(-1);
  ScaleImportance imp;
  imp.per_horizon.assign(n_scales, std::vector<double>(h_steps, 0.0));
  imp.overall.assign(n_scales, 0.0);

  double base_total = 0.0;
  for (double v : base) base_total += v;
  for (std::size_t s = 0; s < n_scales; ++s) {
    const std::vector<double> ablated = horizon_mse(static_cast<int>(s));
    double ablated_total = 0.0;
    for (std::size_t h = 0; h < h_steps; ++h) {
      imp.per_horizon[s][h] = std::max(0.0, ablated[h] - base[h]);
      ablated_total += ablated[h];
    }
    imp.overall[s] = std::max(0.0, ablated_total - base_total);
  }

  for (std::size_t h = 0; h < h_steps; ++h) {
    double col = 0.0;
    for (std::size_t s = 0; s < n_scales; ++s) col += imp.per_horizon[s][h];
    if (col > 0.0) {
      for (std::size_t s = 0; s < n_scales; ++s) imp.per_horizon[s][h] /= col;
    }
  }
  double total = 0.0;
  for (double v : imp.overall) total += v;
  if (total > 0.0) {
    for (double& v : imp.overall) v /= total;
  }
  return imp;
}

}  // namespace patchcast
