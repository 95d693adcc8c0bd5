#include "tsllm/data_ingest.hpp"
#include "tsllm/synthetic.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace tsllm;
using namespace std::chrono;

namespace {

std::string header() {
  std::string h = "Customer,Generator Capacity,Postcode,Consumption Category,date";
  for (int k = 1; k <= 48; ++k) h += ",c" + std::to_string(k);
  return h + ",Row Quality\n";
}

std::string row(int id, const std::string& cat, const std::string& date, double base, double step = 0.0) {
  std::string r = std::to_string(id) + ",1.5,2076," + cat + "," + date;
  for (int k = 0; k < 48; ++k) r += "," + std::to_string(base + step * k);
  return r + ",\n";
}

HouseholdSeries series_of(std::vector<double> v) {
  HouseholdSeries s;
  s.household_id = 1;
  const sys_seconds t0 = sys_days{year{2012} / 7 / 1};
  for (std::size_t i = 0; i < v.size(); ++i) s.timestamps.push_back(t0 + kStep * static_cast<int>(i + 1));
  s.sp = v;
  s.hp = v;
  s.ap = v;
  return s;
}

bool same(const std::vector<double>& a, const std::vector<double>& b, double tol = 1e-12) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::abs(a[i] - b[i]) > tol) return false;
  }
  return true;
}

}  // namespace

TEST(ParseLoadCsv, SingleSolarDay) {
  std::istringstream in(header() + row(1, "GG", "1/7/2012", 0.0, 0.1) + row(1, "CL", "1/7/2012", 1.0) +
                        row(1, "GC", "1/7/2012", 2.0));
  const auto r = parse_load_csv(in);
  ASSERT_EQ(r.households.size(), 1u);
  const auto& h = r.households[0];
  EXPECT_EQ(h.household_id, 1);
  ASSERT_EQ(h.sp.size(), 48u);
  EXPECT_DOUBLE_EQ(h.sp[10], 1.0);
  EXPECT_DOUBLE_EQ(h.hp[0], 1.0);
  EXPECT_DOUBLE_EQ(h.ap[47], 2.0);
  // Readings carry the end of their half-hour interval.
  EXPECT_EQ(h.timestamps.front(), sys_seconds{sys_days{year{2012} / 7 / 1}} + minutes{30});
  EXPECT_EQ(h.timestamps.back(), sys_seconds{sys_days{year{2012} / 7 / 2}});
}

TEST(ParseLoadCsv, TwoHouseholdFixtureMatchesManualUnpivot) {
  std::string csv = "Solar home half-hour data\n" + header();
  for (int id : {10, 20}) {
    for (const char* d : {"1/7/2012", "2/7/2012"}) {
      csv += row(id, "GG", d, id * 0.01, 0.001);
      csv += row(id, "CL", d, id * 0.02);
      csv += row(id, "GC", d, id * 0.03, 0.002);
    }
  }
  std::istringstream in(csv);
  const auto r = parse_load_csv(in);
  ASSERT_EQ(r.households.size(), 2u);
  for (const auto& h : r.households) {
    ASSERT_EQ(h.size(), 96u);
    for (std::size_t i = 0; i < 96; ++i) {
      const double k = static_cast<double>(i % 48);
      EXPECT_NEAR(h.sp[i], h.household_id * 0.01 + 0.001 * k, 1e-12);
      EXPECT_NEAR(h.hp[i], h.household_id * 0.02, 1e-12);
      EXPECT_NEAR(h.ap[i], h.household_id * 0.03 + 0.002 * k, 1e-12);
      if (i > 0) EXPECT_EQ(h.timestamps[i] - h.timestamps[i - 1], seconds{kStep});
    }
  }
}

TEST(ParseLoadCsv, HouseholdLackingCategoryIsExcluded) {
  std::istringstream in(header() + row(1, "GG", "1/7/2012", 0) + row(1, "GC", "1/7/2012", 0) +
                        row(2, "GG", "1/7/2012", 0) + row(2, "CL", "1/7/2012", 0) + row(2, "GC", "1/7/2012", 0));
  const auto r = parse_load_csv(in);
  ASSERT_EQ(r.households.size(), 1u);
  EXPECT_EQ(r.households[0].household_id, 2);
  ASSERT_EQ(r.incomplete, std::vector<int>{1});
  EXPECT_FALSE(r.warnings.empty());
}

TEST(ParseLoadCsv, UnknownCategoriesAreCounted) {
  std::istringstream in(header() + row(1, "GG", "1/7/2012", 0) + row(1, "CL", "1/7/2012", 0) +
                        row(1, "GC", "1/7/2012", 0) + row(1, "XX", "1/7/2012", 0) + row(1, "YY", "1/7/2012", 0));
  const auto r = parse_load_csv(in);
  EXPECT_EQ(r.unknown_category_rows, 2u);
  EXPECT_EQ(r.households.size(), 1u);
}

TEST(ParseLoadCsv, MalformedRowReportsLineNumber) {
  std::string bad = row(1, "CL", "1/7/2012", 0);
  bad.replace(bad.find(",0.000000"), 9, ",abc");
  std::istringstream in(header() + row(1, "GG", "1/7/2012", 0) + bad);
  try {
    parse_load_csv(in);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(ParseLoadCsv, MissingDaysBecomeGapsAndAreRepaired) {
  std::istringstream in(header() + row(1, "GG", "1/7/2012", 1) + row(1, "CL", "1/7/2012", 1) +
                        row(1, "GC", "1/7/2012", 1) + row(1, "GG", "3/7/2012", 3) + row(1, "CL", "3/7/2012", 3) +
                        row(1, "GC", "3/7/2012", 3));
  const auto r = parse_load_csv(in);
  ASSERT_EQ(r.households.size(), 1u);
  const auto& h = r.households[0];
  ASSERT_EQ(h.size(), 144u);
  EXPECT_TRUE(is_missing(h.sp[60]));
  const auto fixed = interpolate_missing(h);
  for (double v : fixed.sp) EXPECT_FALSE(is_missing(v));
  EXPECT_NEAR(fixed.sp[71], 1.0 + 2.0 * 24.0 / 49.0, 1e-12);
}

TEST(ParseLoadCsv, ChannelMapMustCoverAllChannels) {
  std::istringstream in(header());
  EXPECT_THROW(parse_load_csv(in, ChannelMap{{"GG", Channel::Solar}}), ConfigError);
}

TEST(ParseLoadCsv, SyntheticWriterRoundTrips) {
  SyntheticSpec spec;
  spec.households = 2;
  spec.days = 3;
  const auto hh = synthetic_households(spec);
  std::stringstream buf;
  write_load_csv(buf, hh);
  const auto r = parse_load_csv(buf);
  ASSERT_EQ(r.households.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(r.households[i].timestamps, hh[i].timestamps);
    EXPECT_TRUE(same(r.households[i].sp, hh[i].sp, 1e-5));
    EXPECT_TRUE(same(r.households[i].ap, hh[i].ap, 1e-5));
  }
}

TEST(Interpolation, SpecExamples) {
  EXPECT_TRUE(same(interpolate_linear(std::vector<double>{1.0, kMissing, 3.0}), {1.0, 2.0, 3.0}));
  EXPECT_TRUE(same(interpolate_linear(std::vector<double>{kMissing, 5.0, 5.0}), {5.0, 5.0, 5.0}));
  EXPECT_TRUE(same(interpolate_linear(std::vector<double>{0, kMissing, kMissing, 3}), {0, 1, 2, 3}));
  EXPECT_TRUE(same(interpolate_linear(std::vector<double>{2, kMissing}), {2, 2}));
}

TEST(Interpolation, AllMissingChannelIsUnrecoverable) {
  auto s = series_of({1, 2, 3});
  s.hp = {kMissing, kMissing, kMissing};
  EXPECT_THROW(interpolate_missing(s), UnrecoverableChannelError);
}

TEST(Interpolation, IsIdempotent) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(40);
    for (auto& x : v) x = u(rng) < 0.3 ? kMissing : u(rng);
    v[static_cast<std::size_t>(trial % 40)] = 0.5;
    auto s = series_of(v);
    const auto once = interpolate_missing(s);
    const auto twice = interpolate_missing(once);
    EXPECT_TRUE(same(once.sp, twice.sp, 0.0));
    EXPECT_TRUE(same(once.hp, twice.hp, 0.0));
  }
}

TEST(Interpolation, TimestampGapsAreFilledOnTheGrid) {
  auto s = series_of({1, 2, 3, 4});
  // drop the third reading entirely
  s.timestamps.erase(s.timestamps.begin() + 2);
  for (auto* ch : {&s.sp, &s.hp, &s.ap}) ch->erase(ch->begin() + 2);
  const auto fixed = interpolate_missing(s);
  ASSERT_EQ(fixed.size(), 4u);
  EXPECT_TRUE(same(fixed.sp, {1, 2, 3, 4}));
  for (std::size_t i = 1; i < fixed.size(); ++i) EXPECT_EQ(fixed.timestamps[i] - fixed.timestamps[i - 1], seconds{kStep});
}

TEST(NetEnergy, SpecExamples) {
  EXPECT_TRUE(same(net_energy(std::vector<double>{2.0}, std::vector<double>{1.0}, std::vector<double>{0.5}), {2.5}));
  EXPECT_TRUE(same(net_energy(std::vector<double>{0}, std::vector<double>{0}, std::vector<double>{0}), {0}));
  EXPECT_TRUE(same(net_energy(std::vector<double>{1, 1}, std::vector<double>{2, 0}, std::vector<double>{3, 1}), {0, 0}));
  EXPECT_THROW(net_energy(std::vector<double>{1, 1}, std::vector<double>{2}, std::vector<double>{3, 1}), ShapeError);
}

TEST(NetEnergy, IsLinear) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    const Matrix w1 = tsllm::testing::random_matrix(17, 3, rng), w2 = tsllm::testing::random_matrix(17, 3, rng);
    const double a = 1.7, b = -0.4;
    const Vector lhs = net_energy(Matrix(a * w1 + b * w2));
    const Vector rhs = a * net_energy(w1) + b * net_energy(w2);
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(SplitSeries, SpecExamples) {
  auto s = series_of(std::vector<double>(1000, 1.0));
  auto r = split_series(s, SplitSpec{}, 50);
  EXPECT_EQ(r.train.size(), 700u);
  EXPECT_EQ(r.val.size(), 100u);
  EXPECT_EQ(r.test.size(), 200u);

  s = series_of(std::vector<double>(1001, 1.0));
  r = split_series(s, SplitSpec{}, 50);
  EXPECT_EQ(r.train.size(), 700u);
  EXPECT_EQ(r.val.size(), 100u);
  EXPECT_EQ(r.test.size(), 201u);
  EXPECT_EQ(r.val.timestamps.front(), s.timestamps[700]);
  EXPECT_EQ(r.test.timestamps.front(), s.timestamps[800]);
}

TEST(SplitSeries, TooShortNamesTheMinimum) {
  const auto s = series_of(std::vector<double>(100, 1.0));
  try {
    split_series(s, SplitSpec{}, 512 + 96);
    FAIL() << "expected InsufficientDataError";
  } catch (const InsufficientDataError& e) {
    EXPECT_EQ(e.required(), 6080u);
    EXPECT_NE(std::string(e.what()).find("6080"), std::string::npos);
  }
}

TEST(SplitSeries, RatiosMustSumToOne) {
  SplitSpec bad{0.5, 0.1, 0.1};
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(MakeWindows, SpecExamples) {
  EXPECT_EQ(make_windows(series_of(std::vector<double>(608, 0.0)), 512, 96, 17).size(), 1u);
  const auto w = make_windows(series_of(std::vector<double>(704, 0.0)), 512, 96, 48);
  ASSERT_EQ(w.size(), 3u);
  EXPECT_THROW(make_windows(series_of(std::vector<double>(607, 0.0)), 512, 96, 96), InsufficientDataError);
}

TEST(MakeWindows, LayoutAndContiguity) {
  std::vector<double> v(700);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  auto s = series_of(v);
  for (std::size_t i = 0; i < v.size(); ++i) s.hp[i] = 1000.0 + static_cast<double>(i);
  const auto w = make_windows(s, 512, 96, 48);
  ASSERT_EQ(w.size(), 2u);
  const auto& second = w[1];
  EXPECT_EQ(second.input.rows(), 512);
  EXPECT_EQ(second.target.rows(), 96);
  EXPECT_DOUBLE_EQ(second.input(0, 0), 48.0);     // sp first
  EXPECT_DOUBLE_EQ(second.input(0, 1), 1048.0);   // hp second
  EXPECT_DOUBLE_EQ(second.target(0, 0), 560.0);   // target follows input directly
  EXPECT_EQ(second.t0, s.timestamps[48]);
}

TEST(MakeWindows, CountMatchesBruteForce) {
  for (std::size_t T = 1; T <= 60; ++T) {
    for (std::size_t stride = 1; stride <= 9; ++stride) {
      std::size_t brute = 0;
      for (std::size_t start = 0; start + 10 + 5 <= T; start += stride) ++brute;
      EXPECT_EQ(window_count(T, 10, 5, stride), brute) << T << " " << stride;
    }
  }
}

TEST(MakeWindows, FullStrideTilesTheSource) {
  std::vector<double> v(3 * 15);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  const auto w = make_windows(series_of(v), 10, 5, 15);
  ASSERT_EQ(w.size(), 3u);
  std::vector<double> rebuilt;
  for (const auto& p : w) {
    for (Index i = 0; i < p.input.rows(); ++i) rebuilt.push_back(p.input(i, 0));
    for (Index i = 0; i < p.target.rows(); ++i) rebuilt.push_back(p.target(i, 0));
  }
  EXPECT_TRUE(same(rebuilt, v, 0.0));
}

TEST(WindowFiles, RoundTripBitExact) {
  std::mt19937_64 rng(9);
  auto s = series_of(std::vector<double>(800, 0.0));
  for (auto* ch : {&s.sp, &s.hp, &s.ap}) {
    for (auto& x : *ch) x = std::normal_distribution<double>(0, 1)(rng);
  }
  const auto w = make_windows(s, 512, 96, 32);
  const auto path = std::filesystem::temp_directory_path() / "tsllm_tests" / "w.windows";
  save_windows(path, w, {{"k", "v"}});
  const auto back = load_windows(path);
  ASSERT_EQ(back.size(), w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    EXPECT_TRUE(back[i].input == w[i].input);
    EXPECT_TRUE(back[i].target == w[i].target);
    EXPECT_EQ(back[i].t0, w[i].t0);
    EXPECT_EQ(back[i].household_id, w[i].household_id);
  }
}
