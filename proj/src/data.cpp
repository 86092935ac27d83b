#include "patchcast/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace patchcast {

namespace {

constexpr double kStdFloor = 1e-8;
constexpr double kTwoPi = 6.283185307179586476925;

// Days since 1970-01-01 for a civil date (Gregorian, proleptic).
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp + (mp < 10 ? 3 : -9);
  y += m <= 2;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

std::string trimmed(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_cell(const std::string& raw, std::size_t row, const std::string& col) {
  const std::string text = trimmed(raw);
  if (text.empty()) {
    throw LoadError("row " + std::to_string(row) + ", column '" + col +
                    "': missing value");
  }
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw LoadError("row " + std::to_string(row) + ", column '" + col +
                    "': cannot parse '" + text + "'");
  }
  if (used != text.size()) {
    throw LoadError("row " + std::to_string(row) + ", column '" + col +
                    "': cannot parse '" + text + "'");
  }
  if (!std::isfinite(v)) {
    throw LoadError("row " + std::to_string(row) + ", column '" + col +
                    "': non-finite value '" + text + "'");
  }
  return v;
}

ChannelStats column_stats(const Tensor& m, std::size_t col, IndexRange rows) {
  const std::size_t d = m.cols();
  double mean = 0.0;
  for (std::size_t i = rows.begin; i < rows.end; ++i) mean += m[i * d + col];
  mean /= static_cast<double>(rows.size());
  double var = 0.0;
  for (std::size_t i = rows.begin; i < rows.end; ++i) {
    const double c = m[i * d + col] - mean;
    var += c * c;
  }
  var /= static_cast<double>(rows.size());
  return {mean, std::max(std::sqrt(var), kStdFloor)};
}

}  // namespace

std::int64_t parse_timestamp(const std::string& text) {
  const std::string t = trimmed(text);
  if (t.empty()) throw LoadError("missing timestamp");
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char sep = 0;
  int n = 0;
  int got = std::sscanf(t.c_str(), "%d-%d-%d%c%d:%d:%d%n", &y, &mo, &d, &sep,
                        &h, &mi, &s, &n);
  if (got >= 6 && (sep == ' ' || sep == 'T')) {
    if (got == 6) {  // seconds omitted
      s = 0;
      std::sscanf(t.c_str(), "%d-%d-%d%c%d:%d%n", &y, &mo, &d, &sep, &h, &mi, &n);
    }
  } else {
    got = std::sscanf(t.c_str(), "%d-%d-%d%n", &y, &mo, &d, &n);
    if (got != 3) throw LoadError("cannot parse timestamp '" + t + "'");
    h = mi = s = 0;
  }
  if (static_cast<std::size_t>(n) != t.size() || mo < 1 || mo > 12 || d < 1 ||
      d > 31 || h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 || s > 60) {
    throw LoadError("cannot parse timestamp '" + t + "'");
  }
  return days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d)) *
             86400 +
         h * 3600 + mi * 60 + s;
}

std::string format_timestamp(std::int64_t epoch_seconds) {
  std::int64_t days = epoch_seconds / 86400;
  std::int64_t rem = epoch_seconds % 86400;
  if (rem < 0) {
    rem += 86400;
    days -= 1;
  }
  std::int64_t y;
  unsigned mo, d;
  civil_from_days(days, y, mo, d);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04lld-%02u-%02u %02lld:%02lld:%02lld",
                static_cast<long long>(y), mo, d,
                static_cast<long long>(rem / 3600),
                static_cast<long long>((rem / 60) % 60),
                static_cast<long long>(rem % 60));
  return buf;
}

TimeSeriesTable load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw LoadError("'" + path + "' is empty");
  const std::vector<std::string> header = split_line(line);
  if (header.size() < 2) {
    throw LoadError("'" + path + "' header needs a timestamp column and at "
                    "least one value column");
  }

  std::vector<std::string> names(header.size());
  std::vector<ColumnRole> roles(header.size(), ColumnRole::ignore);
  std::vector<std::size_t> target_cols, future_cols;
  for (std::size_t c = 1; c < header.size(); ++c) {
    names[c] = trimmed(header[c]);
    auto it = schema.roles.find(names[c]);
    roles[c] = it == schema.roles.end() ? schema.default_role : it->second;
    if (roles[c] == ColumnRole::target) target_cols.push_back(c);
    if (roles[c] == ColumnRole::future_known) future_cols.push_back(c);
  }
  if (target_cols.empty()) {
    throw LoadError("'" + path + "': schema assigns no target columns");
  }
  for (const auto& [name, role] : schema.roles) {
    (void)role;
    if (std::find(names.begin() + 1, names.end(), name) == names.end()) {
      throw LoadError("'" + path + "': schema names unknown column '" + name + "'");
    }
  }

  TimeSeriesTable table;
  std::vector<double> tvals, fvals;
  std::size_t row = 2;  // 1-based file lines; the header is line 1
  while (std::getline(in, line)) {
    if (trimmed(line).empty()) {
      ++row;
      continue;
    }
    const std::vector<std::string> fields = split_line(line);
    if (fields.size() != header.size()) {
      throw LoadError("row " + std::to_string(row) + ": expected " +
                      std::to_string(header.size()) + " fields, got " +
                      std::to_string(fields.size()));
    }
    std::int64_t ts;
    try {
      ts = parse_timestamp(fields[0]);
    } catch (const LoadError& e) {
      throw LoadError("row " + std::to_string(row) + ": " + e.what());
    }
    table.timestamps.push_back(ts);
    for (std::size_t c : target_cols) tvals.push_back(parse_cell(fields[c], row, names[c]));
    for (std::size_t c : future_cols) fvals.push_back(parse_cell(fields[c], row, names[c]));
    ++row;
  }
  const std::size_t n = table.timestamps.size();
  if (n < 2) throw LoadError("'" + path + "' needs at least 2 data rows");

  table.step = table.timestamps[1] - table.timestamps[0];
  if (table.step <= 0) {
    throw LoadError("row 3: timestamps must be strictly increasing");
  }
  for (std::size_t i = 2; i < n; ++i) {
    const std::int64_t gap = table.timestamps[i] - table.timestamps[i - 1];
    if (gap != table.step) {
      throw LoadError("row " + std::to_string(i + 2) + ": timestamp spacing " +
                      std::to_string(gap) + "s differs from step " +
                      std::to_string(table.step) + "s");
    }
  }

  for (std::size_t c : target_cols) table.target_names.push_back(names[c]);
  for (std::size_t c : future_cols) table.future_names.push_back(names[c]);
  table.targets = Tensor::from_values({n, target_cols.size()}, std::move(tvals));
  if (!future_cols.empty()) {
    table.futures = Tensor::from_values({n, future_cols.size()}, std::move(fvals));
  }
  return table;
}

void write_csv(const TimeSeriesTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "timestamp";
  for (const auto& name : table.target_names) out << ',' << name;
  for (const auto& name : table.future_names) out << ',' << name;
  out << '\n';
  char buf[40];
  const std::size_t d = table.n_targets(), e = table.n_futures();
  for (std::size_t i = 0; i < table.rows(); ++i) {
    out << format_timestamp(table.timestamps[i]);
    for (std::size_t j = 0; j < d; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", table.targets[i * d + j]);
      out << ',' << buf;
    }
    for (std::size_t j = 0; j < e; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", table.futures[i * e + j]);
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

NormalizationStats fit_normalizer(const TimeSeriesTable& table, IndexRange train_rows) {
  if (train_rows.empty() || train_rows.end > table.rows()) {
    throw ParameterError("fit_normalizer: invalid training range [" +
                         std::to_string(train_rows.begin) + ", " +
                         std::to_string(train_rows.end) + ") over " +
                         std::to_string(table.rows()) + " rows");
  }
  NormalizationStats stats;
  for (std::size_t j = 0; j < table.n_targets(); ++j) {
    stats.target.push_back(column_stats(table.targets, j, train_rows));
  }
  for (std::size_t j = 0; j < table.n_futures(); ++j) {
    stats.future.push_back(column_stats(table.futures, j, train_rows));
  }
  return stats;
}

std::size_t window_count(std::size_t rows, std::size_t lookback,
                         std::size_t horizon, std::size_t stride) {
  if (rows < lookback + horizon) return 0;
  return (rows - lookback - horizon) / stride + 1;
}

std::vector<WindowSample> make_windows(const TimeSeriesTable& table,
                                       const NormalizationStats& stats,
                                       std::size_t lookback, std::size_t horizon,
                                       std::size_t stride, bool instance_norm) {
  if (lookback == 0 || horizon == 0 || stride == 0) {
    throw ParameterError("make_windows: lookback, horizon and stride must be positive");
  }
  const std::size_t rows = table.rows(), d = table.n_targets(), e = table.n_futures();
  if (rows < lookback + horizon) {
    throw ParameterError("make_windows: table has " + std::to_string(rows) +
                         " rows but lookback + horizon needs " +
                         std::to_string(lookback + horizon));
  }
  if (stats.target.size() != d || stats.future.size() != e) {
    throw ParameterError("make_windows: normalization stats cover " +
                         std::to_string(stats.target.size()) + "/" +
                         std::to_string(stats.future.size()) +
                         " channels, table has " + std::to_string(d) + "/" +
                         std::to_string(e));
  }

  const std::size_t count = window_count(rows, lookback, horizon, stride);
  std::vector<WindowSample> samples;
  samples.reserve(count);
  Tensor raw{{lookback, d}};
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t start = k * stride;
    WindowSample s;
    s.y = Tensor({horizon, d});
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t i = 0; i < lookback; ++i) {
        raw.at(i, j) = table.targets[(start + i) * d + j];
      }
    }
    s.x = normalize_lookback(raw, stats, instance_norm, s.instance);

    for (std::size_t j = 0; j < d; ++j) {
      const ChannelStats& g = stats.target[j];
      const ChannelStats& inst = s.instance[j];
      for (std::size_t i = 0; i < horizon; ++i) {
        const double v =
            (table.targets[(start + lookback + i) * d + j] - g.mean) / g.std;
        s.y.at(i, j) = (v - inst.mean) / inst.std;
      }
    }
    if (e > 0) {
      s.z = Tensor({horizon, e});
      for (std::size_t j = 0; j < e; ++j) {
        const ChannelStats& g = stats.future[j];
        for (std::size_t i = 0; i < horizon; ++i) {
          s.z.at(i, j) =
              (table.futures[(start + lookback + i) * e + j] - g.mean) / g.std;
        }
      }
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

Tensor normalize_lookback(const Tensor& raw, const NormalizationStats& stats,
                          bool instance_norm, std::vector<ChannelStats>& instance) {
  if (raw.ndim() != 2) {
    throw DimensionError("normalize_lookback: lookback block must be [L, D]");
  }
  const std::size_t lookback = raw.rows(), d = raw.cols();
  if (stats.target.size() != d) {
    throw ParameterError("normalize_lookback: stats cover " +
                         std::to_string(stats.target.size()) +
                         " channels, block has " + std::to_string(d));
  }
  Tensor x{{lookback, d}};
  instance.assign(d, ChannelStats{});
  for (std::size_t j = 0; j < d; ++j) {
    const ChannelStats& g = stats.target[j];
    double mean = 0.0;
    for (std::size_t i = 0; i < lookback; ++i) {
      const double v = (raw.at(i, j) - g.mean) / g.std;
      x.at(i, j) = v;
      mean += v;
    }
    if (instance_norm) {
      mean /= static_cast<double>(lookback);
      double var = 0.0;
      for (std::size_t i = 0; i < lookback; ++i) {
        const double c = x.at(i, j) - mean;
        var += c * c;
      }
      var /= static_cast<double>(lookback);
      instance[j] = {mean, std::max(std::sqrt(var), kStdFloor)};
    }
    const ChannelStats& inst = instance[j];
    for (std::size_t i = 0; i < lookback; ++i) {
      x.at(i, j) = (x.at(i, j) - inst.mean) / inst.std;
    }
  }
  return x;
}

DatasetSplit chronological_split(std::size_t n_windows, double train_ratio,
                                 double val_ratio, double test_ratio) {
  if (train_ratio <= 0.0 || val_ratio <= 0.0 || test_ratio <= 0.0) {
    throw ParameterError("chronological_split: ratios must be positive");
  }
  if (std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9) {
    throw ParameterError("chronological_split: ratios must sum to 1");
  }
  const std::size_t n_train = static_cast<std::size_t>(
      std::floor(static_cast<double>(n_windows) * train_ratio + 1e-9));
  const std::size_t n_val = static_cast<std::size_t>(
      std::floor(static_cast<double>(n_windows) * val_ratio + 1e-9));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n_windows) {
    throw ParameterError("chronological_split: " + std::to_string(n_windows) +
                         " windows leave an empty split at ratios " +
                         std::to_string(train_ratio) + "/" +
                         std::to_string(val_ratio) + "/" +
                         std::to_string(test_ratio));
  }
  DatasetSplit split;
  split.train = {0, n_train};
  split.val = {n_train, n_train + n_val};
  split.test = {n_train + n_val, n_windows};
  return split;
}

void denormalize_forecast(Tensor& mean, Tensor& variance,
                          const NormalizationStats& stats,
                          const std::vector<ChannelStats>& instance) {
  const std::size_t d = mean.cols();
  if (variance.shape() != mean.shape() || stats.target.size() != d ||
      instance.size() != d) {
    throw DimensionError("denormalize_forecast: inconsistent shapes");
  }
  for (std::size_t i = 0; i < mean.rows(); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const ChannelStats& g = stats.target[j];
      const ChannelStats& inst = instance[j];
      const double scale = inst.std * g.std;
      mean.at(i, j) = (mean.at(i, j) * inst.std + inst.mean) * g.std + g.mean;
      variance.at(i, j) *= scale * scale;
    }
  }
}

TimeSeriesTable generate_synthetic(std::uint64_t seed, std::size_t rows,
                                   const SynthConfig& config,
                                   Warnings* warnings) {
  if (rows < 1 || config.n_targets < 1) {
    throw ParameterError("generate_synthetic: need at least 1 row and 1 target");
  }
  if (rows < 2 * 168 && warnings) {
    warnings->push_back("synthetic series of " + std::to_string(rows) +
                        " rows is shorter than two weekly periods (336); the "
                        "weekly component is still applied");
  }

  Rng rng(seed);
  const double phi = 0.97;
  const double innovation = std::sqrt(1.0 - phi * phi);
  std::vector<double> driver(rows);
  driver[0] = rng.normal();
  for (std::size_t t = 1; t < rows; ++t) {
    driver[t] = phi * driver[t - 1] + innovation * rng.normal();
  }

  const std::size_t d = config.n_targets;
  TimeSeriesTable table;
  table.timestamps.resize(rows);
  table.step = 3600;
  const std::int64_t start = 1609459200;  // 2021-01-01 00:00 UTC
  std::vector<double> tvals(rows * d);
  for (std::size_t t = 0; t < rows; ++t) {
    table.timestamps[t] = start + static_cast<std::int64_t>(t) * 3600;
    for (std::size_t j = 0; j < d; ++j) {
      // (t + phase) reduced mod the period keeps the sinusoids bitwise
      // periodic regardless of series length
      const std::size_t shifted = t + 5 * j;
      const double daily = config.daily_amp *
                           std::sin(kTwoPi * static_cast<double>(shifted % 24) / 24.0);
      const double weekly = config.weekly_amp *
                            std::sin(kTwoPi * static_cast<double>(shifted % 168) / 168.0);
      double v = daily + weekly + config.driver_coef * driver[t];
      if (config.noise_sd > 0.0) v += config.noise_sd * rng.normal();
      tvals[t * d + j] = v;
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    table.target_names.push_back(d == 1 ? "load" : "load_" + std::to_string(j + 1));
  }
  table.targets = Tensor::from_values({rows, d}, std::move(tvals));
  table.future_names.push_back("driver");
  table.futures = Tensor::from_values({rows, 1}, std::move(driver));
  return table;
}

}  // namespace patchcast
