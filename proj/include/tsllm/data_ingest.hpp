#pragma once

// Household load ingestion: wide daily CSV rows -> per-instant channel series,
// gap repair, chronological splits and fixed-size (input, target) windows.

#include "tsllm/core.hpp"
#include "tsllm/tensor_file.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace tsllm {

using Instant = std::chrono::sys_seconds;
inline constexpr std::chrono::minutes kStep{30};
inline constexpr int kReadingsPerDay = 48;

inline constexpr Scalar kMissing = std::numeric_limits<Scalar>::quiet_NaN();

inline bool is_missing(Scalar v) { return std::isnan(v); }

struct HouseholdSeries {
  int household_id = 0;
  std::vector<Instant> timestamps;
  std::vector<Scalar> hp;  // high-power appliances
  std::vector<Scalar> ap;  // other appliances
  std::vector<Scalar> sp;  // solar generation

  std::size_t size() const { return timestamps.size(); }

  std::vector<Scalar>& channel(Channel c) {
    switch (c) {
      case Channel::Solar: return sp;
      case Channel::HighPower: return hp;
      default: return ap;
    }
  }
  const std::vector<Scalar>& channel(Channel c) const {
    return const_cast<HouseholdSeries*>(this)->channel(c);
  }

  /// Contiguous sub-series [begin, begin + count).
  HouseholdSeries slice(std::size_t begin, std::size_t count) const {
    HouseholdSeries out;
    out.household_id = household_id;
    auto cut = [&](const auto& v) {
      return std::vector<typename std::decay_t<decltype(v)>::value_type>(v.begin() + begin, v.begin() + begin + count);
    };
    out.timestamps = cut(timestamps);
    out.hp = cut(hp);
    out.ap = cut(ap);
    out.sp = cut(sp);
    return out;
  }
};

/// One sample. Columns are ordered (sp, hp, ap).
struct WindowPair {
  Matrix input;   // input_len x 3
  Matrix target;  // horizon x 3
  int household_id = 0;
  Instant t0{};
};

struct SplitSpec {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;

  void validate() const {
    if (train <= 0 || val <= 0 || test <= 0) throw ConfigError("split ratios must be positive");
    if (std::abs(train + val + test - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  }
};

struct SeriesSplit {
  HouseholdSeries train;
  HouseholdSeries val;
  HouseholdSeries test;
};

using ChannelMap = std::map<std::string, Channel>;

inline ChannelMap default_channel_map() {
  return {{"GG", Channel::Solar}, {"CL", Channel::HighPower}, {"GC", Channel::Appliance}};
}

struct ParseResult {
  std::vector<HouseholdSeries> households;  // ascending household id
  std::size_t unknown_category_rows = 0;
  std::vector<int> incomplete;  // households excluded for a missing category
  std::vector<std::string> warnings;
};

namespace detail {

inline std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

inline std::optional<long> parse_int(std::string_view s) {
  long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

/// Accepts d/m/yyyy (day first) and yyyy-mm-dd.
inline std::optional<std::chrono::sys_days> parse_date(std::string_view s) {
  using namespace std::chrono;
  int y = 0;
  unsigned m = 0;
  unsigned d = 0;
  auto parts = [&](char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
      if (i == s.size() || s[i] == sep) {
        out.push_back(s.substr(start, i - start));
        start = i + 1;
      }
    }
    return out;
  };
  if (s.find('/') != std::string_view::npos) {
    auto p = parts('/');
    if (p.size() != 3) return std::nullopt;
    auto dd = parse_int(p[0]), mm = parse_int(p[1]), yy = parse_int(p[2]);
    if (!dd || !mm || !yy) return std::nullopt;
    d = static_cast<unsigned>(*dd);
    m = static_cast<unsigned>(*mm);
    y = static_cast<int>(*yy);
    if (y < 100) y += 2000;
  } else {
    auto p = parts('-');
    if (p.size() != 3) return std::nullopt;
    auto yy = parse_int(p[0]), mm = parse_int(p[1]), dd = parse_int(p[2]);
    if (!dd || !mm || !yy) return std::nullopt;
    d = static_cast<unsigned>(*dd);
    m = static_cast<unsigned>(*mm);
    y = static_cast<int>(*yy);
  }
  year_month_day ymd{year{y}, month{m}, day{d}};
  if (!ymd.ok()) return std::nullopt;
  return sys_days{ymd};
}

inline std::optional<Scalar> parse_reading(std::string_view s) {
  if (s.empty()) return kMissing;
  const std::string l = lower(s);
  if (l == "nan" || l == "na" || l == "null" || l == "-") return kMissing;
  // std::from_chars for double is available in libstdc++ 11.
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace detail

/// Parses the wide daily layout: one row = (customer, category, date, 48 readings),
/// optionally with extra columns located by header name. Unknown categories are
/// skipped and counted; households missing a mapped category are excluded.
inline ParseResult parse_load_csv(std::istream& in, const ChannelMap& channel_map = default_channel_map()) {
  for (Channel c : {Channel::Solar, Channel::HighPower, Channel::Appliance}) {
    bool covered = std::any_of(channel_map.begin(), channel_map.end(), [c](const auto& kv) { return kv.second == c; });
    if (!covered) throw ConfigError(std::string("channel map does not cover ") + channel_name(static_cast<int>(c)));
  }

  ParseResult result;
  using DayBlock = std::array<Scalar, kReadingsPerDay>;
  // household -> channel -> day -> readings
  std::map<int, std::array<std::map<std::chrono::sys_days, DayBlock>, kChannels>> raw;

  std::string line;
  std::size_t lineno = 0;
  int id_col = 0, cat_col = 1, date_col = 2;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv(line);

    if (!have_header) {
      // Leading title lines are tolerated; the header is the first line wide enough to carry a day.
      if (fields.size() < static_cast<std::size_t>(3 + kReadingsPerDay)) continue;
      have_header = true;
      for (std::size_t i = 0; i < fields.size(); ++i) {
        const auto name = detail::lower(fields[i]);
        if (name == "customer" || name == "customer id" || name == "customer_id") id_col = static_cast<int>(i);
        if (name == "consumption category" || name == "category") cat_col = static_cast<int>(i);
        if (name == "date") date_col = static_cast<int>(i);
      }
      continue;
    }

    if (fields.size() < static_cast<std::size_t>(date_col + 1 + kReadingsPerDay)) {
      throw ParseError("expected " + std::to_string(date_col + 1 + kReadingsPerDay) + " fields, got " +
                           std::to_string(fields.size()),
                       lineno);
    }
    auto id = detail::parse_int(fields[id_col]);
    if (!id) throw ParseError("invalid customer id '" + std::string(fields[id_col]) + "'", lineno);
    auto date = detail::parse_date(fields[date_col]);
    if (!date) throw ParseError("invalid date '" + std::string(fields[date_col]) + "'", lineno);

    DayBlock block;
    for (int k = 0; k < kReadingsPerDay; ++k) {
      auto v = detail::parse_reading(fields[date_col + 1 + k]);
      if (!v) throw ParseError("invalid reading '" + std::string(fields[date_col + 1 + k]) + "'", lineno);
      block[k] = *v;
    }

    auto cat = channel_map.find(std::string(fields[cat_col]));
    if (cat == channel_map.end()) {
      ++result.unknown_category_rows;
      continue;
    }
    auto& days = raw[static_cast<int>(*id)][static_cast<int>(cat->second)];
    if (days.count(*date)) {
      result.warnings.push_back("line " + std::to_string(lineno) + ": duplicate row for household " +
                                std::to_string(*id) + ", later row kept");
    }
    days[*date] = block;
  }
  if (result.unknown_category_rows > 0) {
    result.warnings.push_back(std::to_string(result.unknown_category_rows) + " rows with unknown category codes skipped");
  }

  for (auto& [id, channels] : raw) {
    bool complete = std::all_of(channels.begin(), channels.end(), [](const auto& d) { return !d.empty(); });
    if (!complete) {
      result.incomplete.push_back(id);
      result.warnings.push_back("household " + std::to_string(id) + " lacks a mapped category; excluded");
      continue;
    }
    std::chrono::sys_days first = channels[0].begin()->first;
    std::chrono::sys_days last = channels[0].rbegin()->first;
    for (const auto& ch : channels) {
      first = std::min(first, ch.begin()->first);
      last = std::max(last, ch.rbegin()->first);
    }
    const auto ndays = static_cast<std::size_t>((last - first).count() + 1);
    HouseholdSeries s;
    s.household_id = id;
    s.timestamps.reserve(ndays * kReadingsPerDay);
    for (std::size_t d = 0; d < ndays; ++d) {
      const auto day = first + std::chrono::days(static_cast<long>(d));
      for (int k = 0; k < kReadingsPerDay; ++k) {
        // Each reading is stamped at the end of its half-hour interval.
        s.timestamps.push_back(std::chrono::time_point_cast<std::chrono::seconds>(day) + kStep * (k + 1));
      }
      for (int c = 0; c < kChannels; ++c) {
        auto& dst = s.channel(static_cast<Channel>(c));
        auto it = channels[c].find(day);
        for (int k = 0; k < kReadingsPerDay; ++k) dst.push_back(it == channels[c].end() ? kMissing : it->second[k]);
      }
    }
    result.households.push_back(std::move(s));
  }
  return result;
}

inline ParseResult parse_load_csv(const std::filesystem::path& path, const ChannelMap& channel_map = default_channel_map()) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return parse_load_csv(in, channel_map);
  } catch (const ParseError& e) {
    throw ParseError(e.detail(), e.line(), path.string());
  }
}

/// Linear interpolation of one sequence; edges replicate the nearest observed value.
inline std::vector<Scalar> interpolate_linear(std::span<const Scalar> xs) {
  std::vector<Scalar> out(xs.begin(), xs.end());
  std::vector<std::size_t> known;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!is_missing(out[i])) known.push_back(i);
  }
  if (known.empty()) throw UnrecoverableChannelError("channel has no observed values");
  for (std::size_t i = 0; i < known.front(); ++i) out[i] = out[known.front()];
  for (std::size_t i = known.back() + 1; i < out.size(); ++i) out[i] = out[known.back()];
  for (std::size_t k = 0; k + 1 < known.size(); ++k) {
    const std::size_t a = known[k], b = known[k + 1];
    for (std::size_t i = a + 1; i < b; ++i) {
      const Scalar t = static_cast<Scalar>(i - a) / static_cast<Scalar>(b - a);
      out[i] = out[a] + t * (out[b] - out[a]);
    }
  }
  return out;
}

/// Restores a regular 30-minute grid (inserting missing rows for skipped
/// instants) and fills every missing reading by linear interpolation.
inline HouseholdSeries interpolate_missing(const HouseholdSeries& series) {
  const std::size_t n = series.size();
  if (series.hp.size() != n || series.ap.size() != n || series.sp.size() != n) {
    throw ShapeError("household " + std::to_string(series.household_id) + ": channel lengths differ from timestamps");
  }
  HouseholdSeries grid;
  grid.household_id = series.household_id;
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) {
      const auto gap = series.timestamps[i] - series.timestamps[i - 1];
      if (gap <= std::chrono::seconds::zero() || gap % kStep != std::chrono::seconds::zero()) {
        throw DataError("household " + std::to_string(series.household_id) +
                        ": timestamps are not on an increasing 30-minute grid");
      }
      for (auto t = series.timestamps[i - 1] + kStep; t < series.timestamps[i]; t += kStep) {
        grid.timestamps.push_back(t);
        grid.hp.push_back(kMissing);
        grid.ap.push_back(kMissing);
        grid.sp.push_back(kMissing);
      }
    }
    grid.timestamps.push_back(series.timestamps[i]);
    grid.hp.push_back(series.hp[i]);
    grid.ap.push_back(series.ap[i]);
    grid.sp.push_back(series.sp[i]);
  }
  for (Channel c : {Channel::Solar, Channel::HighPower, Channel::Appliance}) {
    try {
      grid.channel(c) = interpolate_linear(grid.channel(c));
    } catch (const UnrecoverableChannelError&) {
      throw UnrecoverableChannelError("household " + std::to_string(series.household_id) + ": channel " +
                                      channel_name(static_cast<int>(c)) + " is entirely missing");
    }
  }
  return grid;
}

/// Net consumption hp + ap - sp.
inline std::vector<Scalar> net_energy(std::span<const Scalar> hp, std::span<const Scalar> ap, std::span<const Scalar> sp) {
  if (hp.size() != ap.size() || hp.size() != sp.size()) throw ShapeError("net_energy: channel length mismatch");
  std::vector<Scalar> out(hp.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = hp[i] + ap[i] - sp[i];
  return out;
}

/// Net consumption of a window whose columns are (sp, hp, ap).
inline Vector net_energy(const Matrix& window) {
  if (window.cols() != kChannels) throw ShapeError("net_energy: window must have 3 columns");
  return window.col(1) + window.col(2) - window.col(0);
}

/// Chronological split; train/val lengths are floor(ratio * T), the remainder goes to test.
/// `min_segment` is the shortest partition that still yields one window.
inline SeriesSplit split_series(const HouseholdSeries& series, const SplitSpec& spec, std::size_t min_segment) {
  spec.validate();
  const std::size_t T = series.size();
  const double min_ratio = std::min({spec.train, spec.val, spec.test});
  const auto required = static_cast<std::size_t>(std::ceil(static_cast<double>(min_segment) / min_ratio - 1e-9));
  if (T < required) {
    throw InsufficientDataError("household " + std::to_string(series.household_id) + " has " + std::to_string(T) +
                                    " steps, too short to split",
                                required);
  }
  const auto n_train = static_cast<std::size_t>(std::floor(spec.train * static_cast<double>(T) + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(spec.val * static_cast<double>(T) + 1e-9));
  const std::size_t n_test = T - n_train - n_val;
  if (n_train < min_segment || n_val < min_segment || n_test < min_segment) {
    throw InsufficientDataError("household " + std::to_string(series.household_id) + ": a partition is shorter than one window",
                                required + 1);
  }
  return {series.slice(0, n_train), series.slice(n_train, n_val), series.slice(n_train + n_val, n_test)};
}

inline std::size_t window_count(std::size_t length, std::size_t input_len, std::size_t horizon, std::size_t stride) {
  if (length < input_len + horizon) return 0;
  return (length - input_len - horizon) / stride + 1;
}

/// Sliding (input_len, horizon) windows at `stride`.
inline std::vector<WindowPair> make_windows(const HouseholdSeries& series, std::size_t input_len = 512,
                                            std::size_t horizon = 96, std::size_t stride = 96) {
  if (stride == 0 || input_len == 0 || horizon == 0) throw ConfigError("make_windows: lengths and stride must be positive");
  const std::size_t T = series.size();
  if (T < input_len + horizon) {
    throw InsufficientDataError("household " + std::to_string(series.household_id) + " has " + std::to_string(T) +
                                    " steps, too short for one window",
                                input_len + horizon);
  }
  const std::size_t count = window_count(T, input_len, horizon, stride);
  std::vector<WindowPair> out;
  out.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    const std::size_t s = w * stride;
    WindowPair p;
    p.household_id = series.household_id;
    p.t0 = series.timestamps[s];
    p.input.resize(static_cast<Index>(input_len), kChannels);
    p.target.resize(static_cast<Index>(horizon), kChannels);
    for (int c = 0; c < kChannels; ++c) {
      const auto& ch = series.channel(static_cast<Channel>(c));
      for (std::size_t i = 0; i < input_len; ++i) p.input(static_cast<Index>(i), c) = ch[s + i];
      for (std::size_t i = 0; i < horizon; ++i) p.target(static_cast<Index>(i), c) = ch[s + input_len + i];
    }
    out.push_back(std::move(p));
  }
  return out;
}

/// Persists windows as a tensor file: inputs [N, input_len, 3], targets [N, horizon, 3],
/// household ids and t0 (epoch seconds) as [N]. Values are stored as F64 and round-trip exactly.
inline void save_windows(const std::filesystem::path& path, const std::vector<WindowPair>& windows,
                         const std::map<std::string, std::string>& metadata = {}) {
  if (windows.empty()) throw DataError("save_windows: nothing to save");
  const Index in_len = windows.front().input.rows();
  const Index hz = windows.front().target.rows();
  const auto N = static_cast<Index>(windows.size());
  Matrix inputs(N * in_len, kChannels), targets(N * hz, kChannels), ids(1, N), t0(1, N);
  for (Index i = 0; i < N; ++i) {
    const auto& w = windows[static_cast<std::size_t>(i)];
    if (w.input.rows() != in_len || w.target.rows() != hz) throw ShapeError("save_windows: ragged window shapes");
    inputs.middleRows(i * in_len, in_len) = w.input;
    targets.middleRows(i * hz, hz) = w.target;
    ids(0, i) = w.household_id;
    t0(0, i) = static_cast<Scalar>(w.t0.time_since_epoch().count());
  }
  TensorFile f;
  f.metadata = metadata;
  f.metadata["kind"] = "windows";
  f.tensors["inputs"] = {{N, in_len, kChannels}, inputs};
  f.tensors["targets"] = {{N, hz, kChannels}, targets};
  f.tensors["household_id"] = {{N}, ids};
  f.tensors["t0"] = {{N}, t0};
  write_tensor_file(path, f, Dtype::F64);
}

inline std::vector<WindowPair> load_windows(const std::filesystem::path& path) {
  const TensorFile f = read_tensor_file(path);
  const auto& in = f.at("inputs");
  const auto& tg = f.at("targets");
  const auto& ids = f.at("household_id");
  const auto& t0 = f.at("t0");
  if (in.shape.size() != 3 || tg.shape.size() != 3 || in.shape[0] != tg.shape[0]) {
    throw LoadError(path.string() + ": window tensors have inconsistent shapes");
  }
  const Index N = in.shape[0], in_len = in.shape[1], hz = tg.shape[1];
  if (ids.data.size() != N || t0.data.size() != N) throw LoadError(path.string() + ": metadata length mismatch");
  std::vector<WindowPair> out(static_cast<std::size_t>(N));
  for (Index i = 0; i < N; ++i) {
    auto& w = out[static_cast<std::size_t>(i)];
    w.input = in.data.middleRows(i * in_len, in_len);
    w.target = tg.data.middleRows(i * hz, hz);
    w.household_id = static_cast<int>(ids.data(0, i));
    w.t0 = Instant{std::chrono::seconds{static_cast<long long>(t0.data(0, i))}};
  }
  return out;
}

}  // namespace tsllm
