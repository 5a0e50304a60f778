#include "sst/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>

namespace sst::data {
namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

// "YYYY-MM-DD[ HH:MM[:SS]]" -> seconds since epoch.
std::optional<std::int64_t> parse_timestamp(const std::string& s) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  const int n = std::sscanf(s.c_str(), "%d-%d-%d %d:%d:%d", &y, &mo, &d, &h, &mi, &sec);
  if (n < 3 || mo < 1 || mo > 12 || d < 1 || d > 31) return std::nullopt;
  return days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d)) * 86400 + h * 3600 +
         mi * 60 + sec;
}

std::string format_hour(std::int64_t hours) {
  // civil_from_days (Howard Hinnant)
  std::int64_t z = hours / 24 + 719468 + days_from_civil(2000, 1, 1);
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400 + (m <= 2);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04lld-%02u-%02u %02lld:00:00", static_cast<long long>(y), m, d,
                static_cast<long long>(hours % 24));
  return buf;
}

}  // namespace

Dataset Dataset::rows(std::size_t begin, std::size_t end) const {
  if (begin > end || end > length()) throw DimensionError("row range out of bounds");
  Dataset out;
  out.name = name;
  out.variate_names = variate_names;
  out.frequency = frequency;
  const std::size_t m = variates();
  const auto src = values.data();
  out.values = Tensor({end - begin, m},
                      std::vector<double>(src.begin() + static_cast<std::ptrdiff_t>(begin * m),
                                          src.begin() + static_cast<std::ptrdiff_t>(end * m)));
  if (!timestamps.empty()) {
    out.timestamps.assign(timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                          timestamps.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

Dataset parse_csv(std::istream& in, const std::string& name) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(name + ": empty file");
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_commas(line);
  if (header.size() < 2) throw DataError(name + ": need a timestamp column and at least one variate");
  const std::size_t m = header.size() - 1;

  Dataset ds;
  ds.name = name;
  ds.variate_names.assign(header.begin() + 1, header.end());
  std::vector<double> values;
  std::optional<std::int64_t> prev_time;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    ++row;
    const auto cells = split_commas(line);
    if (cells.size() != header.size()) {
      throw DataError(name + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                      " columns, expected " + std::to_string(header.size()));
    }
    const auto t = parse_timestamp(cells[0]);
    if (!ds.timestamps.empty()) {
      const bool ordered = (t && prev_time) ? *t > *prev_time : cells[0] > ds.timestamps.back();
      if (!ordered) {
        throw DataError(name + ": timestamps not strictly increasing at row " + std::to_string(row));
      }
    }
    prev_time = t;
    ds.timestamps.push_back(cells[0]);
    for (std::size_t c = 1; c < cells.size(); ++c) {
      const std::string& cell = cells[c];
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
        throw DataError(name + ": cannot parse '" + cell + "' at row " + std::to_string(row) + ", column " +
                        std::to_string(c + 1));
      }
      values.push_back(v);
    }
  }
  if (row == 0) throw DataError(name + ": no data rows");
  ds.values = Tensor({row, m}, std::move(values));
  ds.frequency = "unknown";
  if (ds.timestamps.size() >= 2) {
    const auto a = parse_timestamp(ds.timestamps[0]);
    const auto b = parse_timestamp(ds.timestamps[1]);
    if (a && b) ds.frequency = std::to_string((*b - *a) / 60) + "min";
  }
  return ds;
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path.string());
  return parse_csv(f, path.stem().string());
}

void write_csv(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << "date";
  for (const auto& n : ds.variate_names) f << ',' << n;
  f << '\n';
  const std::size_t m = ds.variates();
  const auto v = ds.values.data();
  char buf[32];
  for (std::size_t t = 0; t < ds.length(); ++t) {
    f << (t < ds.timestamps.size() ? ds.timestamps[t] : std::to_string(t));
    for (std::size_t j = 0; j < m; ++j) {
      const auto res = std::to_chars(buf, buf + sizeof buf, v[t * m + j]);
      f << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    f << '\n';
  }
}

SplitScheme SplitScheme::infer(const Dataset& ds) {
  if (ds.name.rfind("ETT", 0) != 0) return ratio();
  std::size_t per_hour = 1;
  if (ds.frequency.size() > 3 && ds.frequency.ends_with("min")) {
    const int minutes = std::stoi(ds.frequency);
    if (minutes > 0 && 60 % minutes == 0) per_hour = static_cast<std::size_t>(60 / minutes);
  }
  return ett_calendar(per_hour);
}

DatasetSplit split_dataset(const Dataset& ds, SplitScheme scheme, std::size_t lookback,
                           std::size_t horizon) {
  const std::size_t n = ds.length();
  DatasetSplit out;
  if (scheme.kind == SplitScheme::Kind::Ratio) {
    const std::size_t train = static_cast<std::size_t>(std::floor(0.7 * static_cast<double>(n)));
    const std::size_t test = static_cast<std::size_t>(std::floor(0.2 * static_cast<double>(n)));
    out.train_range = {0, train};
    out.val_range = {train, n - test};
    out.test_range = {n - test, n};
  } else {
    const std::size_t month = 30 * 24 * scheme.steps_per_hour;
    if (n < 20 * month) {
      throw InsufficientDataError(ds.name + ": calendar split needs " + std::to_string(20 * month) +
                                  " rows, have " + std::to_string(n));
    }
    out.train_range = {0, 12 * month};
    out.val_range = {12 * month, 16 * month};
    out.test_range = {16 * month, 20 * month};
  }
  out.val_context = std::min(lookback, out.val_range.begin);
  out.test_context = std::min(lookback, out.test_range.begin);
  out.train = ds.rows(out.train_range.begin, out.train_range.end);
  out.val = ds.rows(out.val_range.begin - out.val_context, out.val_range.end);
  out.test = ds.rows(out.test_range.begin - out.test_context, out.test_range.end);
  const std::pair<const char*, const Dataset*> parts[] = {
      {"train", &out.train}, {"val", &out.val}, {"test", &out.test}};
  for (const auto& [label, part] : parts) {
    if (part->length() < lookback + horizon) {
      throw InsufficientDataError(ds.name + ": " + label + " split has " + std::to_string(part->length()) +
                                  " rows, needs " + std::to_string(lookback + horizon));
    }
  }
  return out;
}

std::vector<std::size_t> window_origins(std::size_t length, std::size_t lookback, std::size_t horizon,
                                        std::size_t stride) {
  if (lookback == 0 || horizon == 0 || stride == 0) {
    throw ParameterError("lookback, horizon and stride must be >= 1");
  }
  if (length < lookback + horizon) {
    throw InsufficientDataError("series of length " + std::to_string(length) + " cannot hold a window of " +
                                std::to_string(lookback + horizon));
  }
  std::vector<std::size_t> out;
  for (std::size_t o = 0; o + lookback + horizon <= length; o += stride) out.push_back(o);
  return out;
}

SeriesWindow window_at(const Dataset& ds, std::size_t origin, std::size_t lookback, std::size_t horizon) {
  const std::size_t m = ds.variates();
  if (origin + lookback + horizon > ds.length()) throw DimensionError("window exceeds dataset");
  const auto v = ds.values.data();
  const auto base = v.begin() + static_cast<std::ptrdiff_t>(origin * m);
  SeriesWindow w;
  w.origin = origin;
  w.lookback = Tensor({lookback, m}, std::vector<double>(base, base + static_cast<std::ptrdiff_t>(lookback * m)));
  w.target = Tensor({horizon, m}, std::vector<double>(base + static_cast<std::ptrdiff_t>(lookback * m),
                                                      base + static_cast<std::ptrdiff_t>((lookback + horizon) * m)));
  return w;
}

std::vector<SeriesWindow> make_windows(const Dataset& ds, std::size_t lookback, std::size_t horizon,
                                       std::size_t stride) {
  std::vector<SeriesWindow> out;
  for (auto o : window_origins(ds.length(), lookback, horizon, stride)) {
    out.push_back(window_at(ds, o, lookback, horizon));
  }
  return out;
}

NormStats compute_stats(const Tensor& block, double epsilon) {
  if (block.rank() != 2 || block.dim(0) == 0) throw DimensionError("stats need a non-empty [rows, M] block");
  const std::size_t rows = block.dim(0), m = block.dim(1);
  const auto v = block.data();
  NormStats s;
  s.epsilon = epsilon;
  s.mean.assign(m, 0.0);
  s.std.assign(m, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < m; ++j) s.mean[j] += v[r * m + j];
  }
  for (auto& mu : s.mean) mu /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < m; ++j) {
      const double d = v[r * m + j] - s.mean[j];
      s.std[j] += d * d;
    }
  }
  for (auto& sd : s.std) sd = std::sqrt(sd / static_cast<double>(rows));
  return s;
}

Tensor apply_norm(const Tensor& block, const NormStats& stats) {
  if (block.rank() != 2 || block.dim(1) != stats.mean.size()) {
    throw DimensionError("block " + shape_str(block.shape()) + " does not match stats over " +
                         std::to_string(stats.mean.size()) + " variates");
  }
  const std::size_t m = block.dim(1);
  Tensor out(block.shape());
  const auto src = block.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const std::size_t j = i % m;
    dst[i] = (src[i] - stats.mean[j]) / stats.scale(j);
  }
  return out;
}

Tensor revin_denormalize(const Tensor& block, const NormStats& stats) {
  if (block.rank() != 2 || block.dim(1) != stats.mean.size()) {
    throw DimensionError("forecast " + shape_str(block.shape()) + " does not match stats over " +
                         std::to_string(stats.mean.size()) + " variates");
  }
  const std::size_t m = block.dim(1);
  Tensor out(block.shape());
  const auto src = block.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const std::size_t j = i % m;
    dst[i] = src[i] * stats.scale(j) + stats.mean[j];
  }
  return out;
}

std::pair<SeriesWindow, NormStats> revin_normalize(const SeriesWindow& w, double epsilon) {
  NormStats stats = compute_stats(w.lookback, epsilon);
  SeriesWindow out{apply_norm(w.lookback, stats), w.target, w.origin};
  return {std::move(out), std::move(stats)};
}

Decomposition moving_average_decompose(std::span<const double> x, std::size_t k) {
  if (k % 2 == 0 || k == 0) throw ParameterError("decomposition window must be odd, got " + std::to_string(k));
  if (k > x.size()) {
    throw ParameterError("decomposition window " + std::to_string(k) + " exceeds series length " +
                         std::to_string(x.size()));
  }
  const std::size_t n = x.size();
  const std::size_t half = k / 2;
  // prefix sums keep this O(T)
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i];
  Decomposition d;
  d.trend.resize(n);
  d.residual.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t lo = t >= half ? t - half : 0;
    const std::size_t hi = std::min(n, t + half + 1);
    double s = 0.0;
    if (hi - lo <= 8) {
      for (std::size_t i = lo; i < hi; ++i) s += x[i];
    } else {
      s = prefix[hi] - prefix[lo];
    }
    d.trend[t] = s / static_cast<double>(hi - lo);
    d.residual[t] = x[t] - d.trend[t];
  }
  return d;
}

namespace {
void check_same(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("metric shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  if (a.size() == 0) throw DimensionError("metric over empty tensors");
}
}  // namespace

double metric_mse(const Tensor& pred, const Tensor& truth) {
  check_same(pred, truth);
  double s = 0.0;
  const auto p = pred.data();
  const auto t = truth.data();
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
  return s / static_cast<double>(p.size());
}

double metric_mae(const Tensor& pred, const Tensor& truth) {
  check_same(pred, truth);
  double s = 0.0;
  const auto p = pred.data();
  const auto t = truth.data();
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - t[i]);
  return s / static_cast<double>(p.size());
}

SyntheticSpec SyntheticSpec::from_map(const std::map<std::string, std::string>& kv) {
  SyntheticSpec s;
  for (const auto& [key, raw] : kv) {
    try {
      if (key == "length") {
        const long long v = std::stoll(raw);
        if (v <= 0) throw ParameterError("synthetic length must be positive");
        s.length = static_cast<std::size_t>(v);
      } else if (key == "trend_slope") {
        s.trend_slope = std::stod(raw);
      } else if (key == "period") {
        s.period = std::stod(raw);
      } else if (key == "amplitude") {
        s.amplitude = std::stod(raw);
      } else if (key == "spike_rate") {
        s.spike_rate = std::stod(raw);
      } else if (key == "spike_mag") {
        s.spike_mag = std::stod(raw);
      } else if (key == "noise_sigma") {
        s.noise_sigma = std::stod(raw);
      } else if (key == "seed") {
        s.seed = std::stoull(raw);
      } else if (key == "variates") {
        s.variates = std::stoul(raw);
      } else {
        throw ConfigError("unknown synthetic key '" + key + "'");
      }
    } catch (const std::invalid_argument&) {
      throw ConfigError("bad value '" + raw + "' for synthetic key '" + key + "'");
    } catch (const std::out_of_range&) {
      throw ConfigError("value out of range for synthetic key '" + key + "'");
    }
  }
  return s;
}

SyntheticSpec SyntheticSpec::parse(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key = value, got '" + line + "'");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return from_map(kv);
}

SyntheticSeries synth_generate(const SyntheticSpec& spec) {
  if (spec.length == 0) throw ParameterError("synthetic length must be positive");
  if (spec.variates == 0) throw ParameterError("synthetic variates must be positive");
  if (!(spec.period > 0.0)) throw ParameterError("synthetic period must be positive");
  if (spec.spike_rate < 0.0 || spec.spike_rate > 1.0) throw ParameterError("spike_rate must lie in [0, 1]");
  const std::size_t n = spec.length, m = spec.variates;
  std::mt19937_64 gen(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SyntheticSeries out;
  out.trend = Tensor({n, m});
  out.seasonal = Tensor({n, m});
  out.noise = Tensor({n, m});
  out.spikes = Tensor({n, m});
  Tensor values({n, m});
  const double two_pi = 2.0 * std::acos(-1.0);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t i = t * m + j;
      // Variates share the trend and differ by a seasonal phase shift.
      const double phase = two_pi * static_cast<double>(j) / static_cast<double>(m);
      const double trend = spec.trend_slope * static_cast<double>(t);
      const double seasonal =
          spec.amplitude * std::sin(two_pi * static_cast<double>(t) / spec.period + phase);
      const double noise = spec.noise_sigma > 0.0 ? spec.noise_sigma * gauss(gen) : 0.0;
      const double spike = (spec.spike_rate > 0.0 && unit(gen) < spec.spike_rate) ? spec.spike_mag : 0.0;
      out.trend.data()[i] = trend;
      out.seasonal.data()[i] = seasonal;
      out.noise.data()[i] = noise;
      out.spikes.data()[i] = spike;
      values.data()[i] = ((trend + seasonal) + noise) + spike;
    }
  }
  out.dataset.name = "synthetic";
  out.dataset.values = values;
  out.dataset.frequency = "60min";
  for (std::size_t j = 0; j < m; ++j) out.dataset.variate_names.push_back("v" + std::to_string(j));
  for (std::size_t t = 0; t < n; ++t) out.dataset.timestamps.push_back(format_hour(static_cast<std::int64_t>(t)));
  return out;
}

}  // namespace sst::data
