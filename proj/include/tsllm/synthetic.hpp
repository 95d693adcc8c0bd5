#pragma once

// Seeded synthetic households in the wide daily CSV layout. Used by the demo,
// the tests, and the end-to-end smoke run when no real data is at hand.

#include "tsllm/core.hpp"
#include "tsllm/data_ingest.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>
#include <vector>

namespace tsllm {

struct SyntheticSpec {
  int households = 3;
  int days = 140;
  std::uint64_t seed = 7;
  std::chrono::sys_days start = std::chrono::sys_days{std::chrono::year{2012} / 7 / 1};
  Scalar noise = 0.03;
};

/// Solar follows a daylight bell scaled by a per-day cloud factor, controlled
/// load runs a night block, appliances carry morning and evening peaks.
inline HouseholdSeries synthetic_household(int id, const SyntheticSpec& spec) {
  std::mt19937_64 rng(spec.seed * 7919ULL + static_cast<std::uint64_t>(id));
  std::normal_distribution<Scalar> noise(0.0, spec.noise);
  std::uniform_real_distribution<Scalar> unit(0.0, 1.0);

  const Scalar pv_peak = 0.6 + 0.8 * unit(rng);
  const Scalar cl_level = 0.8 + 1.2 * unit(rng);
  const Scalar base = 0.15 + 0.2 * unit(rng);
  const Scalar morning = 0.3 + 0.5 * unit(rng);
  const Scalar evening = 0.6 + 0.8 * unit(rng);

  HouseholdSeries s;
  s.household_id = id;
  for (int d = 0; d < spec.days; ++d) {
    const Scalar cloud = 0.55 + 0.45 * unit(rng);
    const bool weekend = (d % 7) >= 5;
    const auto day = spec.start + std::chrono::days(d);
    for (int k = 0; k < kReadingsPerDay; ++k) {
      const Scalar hour = 0.5 * (k + 1);
      s.timestamps.push_back(std::chrono::time_point_cast<std::chrono::seconds>(day) + kStep * (k + 1));

      const Scalar daylight = std::sin(std::numbers::pi * (hour - 6.0) / 12.0);
      s.sp.push_back(std::max<Scalar>(0.0, pv_peak * cloud * std::max<Scalar>(0.0, daylight) + 0.5 * noise(rng)));

      const bool night = hour >= 23.0 || hour <= 6.0;
      s.hp.push_back(std::max<Scalar>(0.0, (night ? cl_level : 0.02) + noise(rng)));

      const Scalar m = std::exp(-0.5 * std::pow((hour - (weekend ? 9.0 : 7.5)) / 1.2, 2));
      const Scalar e = std::exp(-0.5 * std::pow((hour - 19.0) / 1.8, 2));
      s.ap.push_back(std::max<Scalar>(0.0, base + morning * m + evening * e + 2 * noise(rng)));
    }
  }
  return s;
}

inline std::vector<HouseholdSeries> synthetic_households(const SyntheticSpec& spec) {
  std::vector<HouseholdSeries> out;
  for (int h = 1; h <= spec.households; ++h) out.push_back(synthetic_household(h, spec));
  return out;
}

inline std::string format_date(std::chrono::sys_days d) {
  const std::chrono::year_month_day ymd{d};
  std::ostringstream os;
  os << static_cast<unsigned>(ymd.day()) << '/' << static_cast<unsigned>(ymd.month()) << '/' << static_cast<int>(ymd.year());
  return os.str();
}

/// Writes households in the wide layout the ingest parser reads (one row per household, category, day).
inline void write_load_csv(std::ostream& out, const std::vector<HouseholdSeries>& households) {
  out << "Customer,Generator Capacity,Postcode,Consumption Category,date";
  for (int k = 1; k <= kReadingsPerDay; ++k) {
    const int minutes = (k * 30) % (24 * 60);
    out << ',' << minutes / 60 << ':' << std::setw(2) << std::setfill('0') << minutes % 60;
  }
  out << ",Row Quality\n" << std::setfill(' ');
  out << std::setprecision(6);
  const std::pair<const char*, Channel> cats[] = {{"GC", Channel::Appliance}, {"CL", Channel::HighPower}, {"GG", Channel::Solar}};
  for (const auto& h : households) {
    if (h.size() % kReadingsPerDay != 0) throw ShapeError("write_load_csv: series must cover whole days");
    const std::size_t days = h.size() / kReadingsPerDay;
    for (std::size_t d = 0; d < days; ++d) {
      const auto day = std::chrono::floor<std::chrono::days>(h.timestamps[d * kReadingsPerDay]);
      for (const auto& [code, ch] : cats) {
        out << h.household_id << ",2.0,2000," << code << ',' << format_date(day);
        const auto& v = h.channel(ch);
        for (int k = 0; k < kReadingsPerDay; ++k) {
          const Scalar x = v[d * kReadingsPerDay + static_cast<std::size_t>(k)];
          out << ',';
          if (!is_missing(x)) out << x;
        }
        out << ",\n";
      }
    }
  }
}

inline void write_load_csv(const std::filesystem::path& path, const std::vector<HouseholdSeries>& households) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_load_csv(out, households);
}

}  // namespace tsllm
