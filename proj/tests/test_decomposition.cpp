#include "tsllm/decomposition.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <random>

using namespace tsllm;

namespace {

Vector random_vector(Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0, 1);
  Vector v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Centered moving average as an explicit weight vector: width p for odd p,
// weights 1/(2p) on the two ends and 1/p inside for even p.
double moving_average_oracle(const Vector& x, Index i, Index p) {
  const Index h = p / 2;
  double acc = 0;
  for (Index k = -h; k <= h; ++k) {
    double w = 1.0 / static_cast<double>(p);
    if (p % 2 == 0 && (k == -h || k == h)) w *= 0.5;
    acc += w * x(i + k);
  }
  return acc;
}

}  // namespace

TEST(Decompose, ConstantSeries) {
  for (Index p : {1, 3, 4, 48}) {
    const Vector x = Vector::Constant(2 * p + 5, 3.25);
    const auto d = decompose(x, p);
    EXPECT_LT((d.trend.array() - 3.25).abs().maxCoeff(), 1e-12) << p;
    EXPECT_LT(d.seasonal.cwiseAbs().maxCoeff(), 1e-12) << p;
    EXPECT_LT(d.residual.cwiseAbs().maxCoeff(), 1e-12) << p;
  }
}

TEST(Decompose, PureSineIsSeasonal) {
  for (Index p : {12, 24, 48}) {
    const Index n = 6 * p;
    Vector x(n);
    for (Index i = 0; i < n; ++i) x(i) = std::sin(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(p));
    const auto d = decompose(x, p);
    for (Index i = p; i < n - p; ++i) {
      EXPECT_NEAR(d.seasonal(i), x(i), 1e-6);
      EXPECT_NEAR(d.trend(i), 0.0, 1e-6);
      EXPECT_NEAR(d.residual(i), 0.0, 1e-6);
    }
  }
}

TEST(Decompose, LinearRampIsTrend) {
  for (Index p : {5, 8, 48}) {
    const Index n = 4 * p + 3;
    Vector x(n);
    for (Index i = 0; i < n; ++i) x(i) = 0.3 * static_cast<double>(i) - 2.0;
    const auto d = decompose(x, p);
    for (Index i = p / 2; i < n - p / 2; ++i) EXPECT_NEAR(d.trend(i), x(i), 1e-9);
    EXPECT_LT(d.seasonal.cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Decompose, TrendMatchesConvolutionOracle) {
  std::mt19937_64 rng(1);
  for (Index p : {3, 4, 7, 48}) {
    const Vector x = random_vector(3 * p + 11, rng);
    const auto d = decompose(x, p);
    const Index h = p / 2, n = x.size();
    for (Index i = h; i < n - h; ++i) EXPECT_NEAR(d.trend(i), moving_average_oracle(x, i, p), 1e-12);
    for (Index i = 0; i < h; ++i) EXPECT_DOUBLE_EQ(d.trend(i), d.trend(h));
    for (Index i = n - h; i < n; ++i) EXPECT_DOUBLE_EQ(d.trend(i), d.trend(n - 1 - h));
  }
}

TEST(Decompose, SeasonalIsPeriodicAndCentered) {
  std::mt19937_64 rng(2);
  for (Index p : {4, 7, 48}) {
    const Vector x = random_vector(5 * p + 3, rng);
    const auto d = decompose(x, p);
    for (Index i = p; i < x.size(); ++i) EXPECT_DOUBLE_EQ(d.seasonal(i), d.seasonal(i - p));
    for (Index s = 0; s + p <= x.size(); s += 3) EXPECT_NEAR(d.seasonal.segment(s, p).sum(), 0.0, 1e-10);
    // phase means of the seasonal component are the component itself
    const auto again = decompose(d.seasonal, p);
    EXPECT_LT((again.seasonal - d.seasonal).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Decompose, AdditivityIsExact) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 100; ++t) {
    const Index p = 1 + t % 50;
    const Vector x = random_vector(2 * p + t, rng) * (1.0 + t);
    EXPECT_LT((recompose(decompose(x, p)) - x).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Decompose, TooFewCycles) {
  EXPECT_THROW(decompose(Vector::Zero(95), 48), InsufficientDataError);
  EXPECT_NO_THROW(decompose(Vector::Zero(96), 48));
  EXPECT_THROW(decompose(Vector::Zero(10), 0), ConfigError);
}

TEST(Recompose, Examples) {
  Decomposition d;
  d.trend = Vector::Ones(2);
  d.seasonal = Vector(2);
  d.seasonal << 0.5, -0.5;
  d.residual = Vector::Zero(2);
  const Vector r = recompose(d);
  EXPECT_DOUBLE_EQ(r(0), 1.5);
  EXPECT_DOUBLE_EQ(r(1), 0.5);

  Decomposition z{Vector::Zero(4), Vector::Zero(4), Vector::Zero(4), 2};
  EXPECT_TRUE(recompose(z).isZero(0));
  z.residual = Vector::Zero(3);
  EXPECT_THROW(recompose(z), ShapeError);
}

TEST(DecompositionOperator, MatchesDirectDecomposition) {
  std::mt19937_64 rng(4);
  const DecompositionOperator op(100, 12);
  for (int t = 0; t < 5; ++t) {
    const Vector x = random_vector(100, rng);
    const auto d = decompose(x, 12);
    EXPECT_LT((op.trend * x - d.trend).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((op.seasonal * x - d.seasonal).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Patches, DefaultGeometry) {
  Vector x(512);
  for (Index i = 0; i < 512; ++i) x(i) = static_cast<double>(i);
  const auto p = make_patches(x, 16, 8);
  Index brute = 0;
  for (Index s = 0; s + 16 <= 512; s += 8) ++brute;
  EXPECT_EQ(p.count, 63);
  EXPECT_EQ(p.count, brute);
  for (Index i = 0; i < p.count; ++i) {
    for (Index j = 0; j < 16; ++j) EXPECT_EQ(p.patches(i, j), static_cast<double>(i * 8 + j));
  }
  // last patch ends exactly at the sequence end
  EXPECT_EQ(p.patches(62, 15), 511.0);
}

TEST(Patches, SinglePatchBoundary) {
  Vector x(5);
  x << 1, 2, 3, 4, 5;
  const auto p = make_patches(x, 5, 3);
  ASSERT_EQ(p.count, 1);
  EXPECT_TRUE(p.patches.row(0).transpose() == x);
  EXPECT_THROW(make_patches(x, 6, 1), ShapeError);
  EXPECT_THROW(make_patches(x, 2, 0), ConfigError);
}

TEST(Patches, DisjointTilingReproducesSequence) {
  std::mt19937_64 rng(5);
  for (Index l : {1, 2, 4, 16}) {
    const Vector x = random_vector(l * 7, rng);
    const auto p = make_patches(x, l, l);
    ASSERT_EQ(p.count, 7);
    Vector rebuilt(l * 7);
    for (Index i = 0; i < p.count; ++i) rebuilt.segment(i * l, l) = p.patches.row(i).transpose();
    EXPECT_TRUE(rebuilt == x);
  }
}

TEST(Patches, CountMatchesEnumeration) {
  for (Index n = 1; n <= 64; ++n) {
    for (Index l = 1; l <= n; ++l) {
      for (Index s = 1; s <= 10; ++s) {
        Index brute = 0;
        for (Index start = 0; start + l <= n; start += s) ++brute;
        ASSERT_EQ(patch_count(n, l, s), brute) << n << ' ' << l << ' ' << s;
      }
    }
  }
}

TEST(Patches, OverlapOfAdjacentPatches) {
  Vector x(40);
  for (Index i = 0; i < 40; ++i) x(i) = static_cast<double>(i);
  const auto p = make_patches(x, 10, 4);
  for (Index i = 0; i + 1 < p.count; ++i) {
    // last l - s entries of patch i are the first l - s entries of patch i + 1
    EXPECT_TRUE(p.patches.row(i).tail(6) == p.patches.row(i + 1).head(6));
  }
}
