#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "patchcast/patching.hpp"
#include "patchcast/tensor.hpp"

namespace patchcast {

enum class ColumnRole { target, future_known, ignore };

/// Column-role assignment for CSV ingestion. Columns named in `roles` get
/// that role; every other value column gets `default_role`. The first
/// column is always the timestamp.
struct CsvSchema {
  std::map<std::string, ColumnRole> roles;
  ColumnRole default_role = ColumnRole::target;
};

/// Fixed-step multivariate series. `targets` is [T, D]; `futures` is
/// [T, E] and stays undefined when the table has no future-known channels.
struct TimeSeriesTable {
  std::vector<std::int64_t> timestamps;  // epoch seconds, strictly increasing
  std::int64_t step = 0;                 // constant spacing, seconds
  Tensor targets;
  Tensor futures;
  std::vector<std::string> target_names;
  std::vector<std::string> future_names;

  std::size_t rows() const { return timestamps.size(); }
  std::size_t n_targets() const { return target_names.size(); }
  std::size_t n_futures() const { return future_names.size(); }
  bool hourly() const { return step == 3600; }
};

struct ChannelStats {
  double mean = 0.0;
  double std = 1.0;
};

/// Per-channel z-score statistics fit on the training rows only.
struct NormalizationStats {
  std::vector<ChannelStats> target;
  std::vector<ChannelStats> future;
};

/// One (lookback, future-knowns, target) sample in normalized units.
/// `instance` holds the per-channel mean/std removed from the lookback
/// (identity when instance normalization is off); y shares x's instance
/// statistics so forecasts denormalize with the same affine maps.
struct WindowSample {
  Tensor x;  // [L, D]
  Tensor z;  // [H, E]; undefined when E == 0
  Tensor y;  // [H, D]
  std::vector<ChannelStats> instance;
};

struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  std::size_t size() const { return end - begin; }
  bool empty() const { return end <= begin; }
};

/// Chronological window ranges, train then validation then test.
struct DatasetSplit {
  IndexRange train, val, test;
};

TimeSeriesTable load_csv(const std::string& path, const CsvSchema& schema);
void write_csv(const TimeSeriesTable& table, const std::string& path);

/// Epoch seconds for "YYYY-MM-DD[ HH:MM[:SS]]" (space or 'T' separator).
std::int64_t parse_timestamp(const std::string& text);
std::string format_timestamp(std::int64_t epoch_seconds);

NormalizationStats fit_normalizer(const TimeSeriesTable& table, IndexRange train_rows);

std::vector<WindowSample> make_windows(const TimeSeriesTable& table,
                                       const NormalizationStats& stats,
                                       std::size_t lookback, std::size_t horizon,
                                       std::size_t stride, bool instance_norm);

/// Normalizes one raw lookback block ([L, D], original units) exactly like
/// make_windows: global z-score, then optional instance normalization whose
/// removed statistics are returned through `instance`.
Tensor normalize_lookback(const Tensor& raw, const NormalizationStats& stats,
                          bool instance_norm, std::vector<ChannelStats>& instance);

std::size_t window_count(std::size_t rows, std::size_t lookback,
                         std::size_t horizon, std::size_t stride);

DatasetSplit chronological_split(std::size_t n_windows, double train_ratio,
                                 double val_ratio, double test_ratio);

/// Maps a normalized forecast back to original units: mean through the
/// instance then global inverse affine maps, variance through the product
/// of squared std factors.
void denormalize_forecast(Tensor& mean, Tensor& variance,
                          const NormalizationStats& stats,
                          const std::vector<ChannelStats>& instance);

struct SynthConfig {
  double daily_amp = 1.0;
  double weekly_amp = 0.5;
  double driver_coef = 0.5;
  double noise_sd = 0.1;
  std::size_t n_targets = 1;
};

/// Hourly synthetic series: per target channel, daily + weekly sinusoids
/// plus a shared AR(1) driver and Gaussian noise. The driver is emitted as
/// a future-known channel. Deterministic given the seed.
TimeSeriesTable generate_synthetic(std::uint64_t seed, std::size_t rows,
                                   const SynthConfig& config,
                                   Warnings* warnings = nullptr);

}  // namespace patchcast
