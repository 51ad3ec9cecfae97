#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "regimerag/weighting.hpp"
#include "test_util.hpp"

using namespace regimerag;
using namespace regimerag::testing;

namespace {

// IP copies MP exactly; N2 is independent noise.
KnowledgeBase kb_with_law(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  KnowledgeBase kb(VariableSchema::prsov());
  std::vector<RegimeSample> samples;
  for (std::size_t i = 0; i < n; ++i) {
    Matrix m(18, 3);
    for (std::size_t r = 0; r < 18; ++r) {
      const double mp = quantize_value(z(rng));
      m(r, 0) = mp;
      m(r, 1) = mp;
      m(r, 2) = quantize_value(z(rng));
    }
    samples.push_back({sample_path(i % 4, i), m, times(18, 100.0 * static_cast<double>(i))});
  }
  kb.ingest_batch(std::move(samples));
  return kb;
}

}  // namespace

TEST(PointWeights, UnitDecayGivesOnes) {
  const auto w = build_point_weights({12, 6, 1.0}, VariableSchema::prsov(), 18);
  for (std::size_t r = 0; r < 12; ++r) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(w.matrix(r, c), 1.0);
  }
}

TEST(PointWeights, HistoryDecay) {
  const auto w = build_point_weights({3, 2, 0.9}, VariableSchema::prsov(), 5);
  const double expected[] = {0.81, 0.9, 1.0};
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(w.matrix(r, c), expected[r], 1e-15);
  }
}

TEST(PointWeights, FutureRowsMaskTarget) {
  const auto w = build_point_weights({12, 6, 0.95}, VariableSchema::prsov(), 18);
  for (std::size_t r = 12; r < 18; ++r) {
    EXPECT_EQ(w.matrix(r, 0), 0.0);
    EXPECT_EQ(w.matrix(r, 1), 1.0);
    EXPECT_EQ(w.matrix(r, 2), 1.0);
  }
}

TEST(PointWeights, Errors) {
  const auto s = VariableSchema::prsov();
  EXPECT_EQ(code_of([&] { build_point_weights({12, 6, 0.0}, s, 18); }), ErrorCode::InvalidDecay);
  EXPECT_EQ(code_of([&] { build_point_weights({12, 6, 1.5}, s, 18); }), ErrorCode::InvalidDecay);
  EXPECT_EQ(code_of([&] { build_point_weights({12, 6, -0.5}, s, 18); }), ErrorCode::InvalidDecay);
  EXPECT_EQ(code_of([&] { build_point_weights({12, 5, 0.9}, s, 18); }), ErrorCode::LengthMismatch);
}

TEST(PointWeights, DecayStrictlyIncreasesOverHistory) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> lam(0.05, 0.999);
  for (int i = 0; i < 200; ++i) {
    const std::size_t L = 2 + rng() % 20;
    const auto w = build_point_weights({L, 3, lam(rng)}, VariableSchema::prsov(), L + 3);
    for (std::size_t r = 1; r < L; ++r) EXPECT_LT(w.matrix(r - 1, 0), w.matrix(r, 0));
  }
}

TEST(MutualInformation, IdenticalBinaryIsLn2) {
  std::vector<double> x(1000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i % 2);
  EXPECT_NEAR(estimate_mutual_information(x, x, 2), std::log(2.0), 1e-9);
  EXPECT_NEAR(estimate_mutual_information(x, x, 2, LogBase::Bits), 1.0, 1e-9);
}

TEST(MutualInformation, IndependentIsNearZero) {
  std::vector<double> x(10000), y(10000);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = i < 5000 ? 0.0 : 1.0;
    y[i] = x[i];
  }
  std::shuffle(y.begin(), y.end(), std::mt19937_64(12345));
  EXPECT_LT(estimate_mutual_information(x, y, 2), 0.01);
}

TEST(MutualInformation, ConstantIsZero) {
  std::vector<double> x(100, 3.0), y(100);
  std::iota(y.begin(), y.end(), 0.0);
  EXPECT_EQ(estimate_mutual_information(x, y, 4), 0.0);
  EXPECT_EQ(estimate_mutual_information(y, x, 4), 0.0);
}

TEST(MutualInformation, Errors) {
  std::vector<double> a(10, 1.0), b(9, 1.0);
  EXPECT_EQ(code_of([&] { estimate_mutual_information(a, b, 2); }), ErrorCode::LengthMismatch);
  EXPECT_EQ(code_of([&] { estimate_mutual_information(a, a, 6); }), ErrorCode::InvalidArgument);
  a[3] = std::nan("");
  EXPECT_EQ(code_of([&] { estimate_mutual_information(a, a, 2); }), ErrorCode::NonFiniteValue);
}

TEST(MutualInformation, SymmetricAndNonNegative) {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> z(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 20 + rng() % 500;
    const std::size_t bins = 2 + rng() % 8;
    if (n < 2 * bins) continue;
    const double coupling = z(rng);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = z(rng);
      y[i] = coupling * x[i] + z(rng);
    }
    const double xy = estimate_mutual_information(x, y, bins);
    const double yx = estimate_mutual_information(y, x, bins);
    EXPECT_GE(xy, 0.0);
    EXPECT_NEAR(xy, yx, 1e-12);
  }
}

TEST(MutualInformation, DefaultBins) {
  EXPECT_EQ(default_mi_bins(1), 2u);
  EXPECT_EQ(default_mi_bins(80), 4u);
  EXPECT_EQ(default_mi_bins(81), 5u);
  EXPECT_EQ(default_mi_bins(1000000), 32u);
}

TEST(CovariateWeights, CopyAndNoise) {
  const auto kb = kb_with_law(5, 400);
  const auto w = build_covariate_weights(kb);
  EXPECT_EQ(w.weights[0], 1.0);
  EXPECT_EQ(w.weights[1], 1.0);
  EXPECT_LT(w.weights[2], 0.05);
  EXPECT_FALSE(w.all_zero);
}

TEST(CovariateWeights, SingleCovariateNormalizesToOne) {
  std::mt19937_64 rng(2);
  KnowledgeBase kb(VariableSchema({{"MP", VariableRole::Target, ""}, {"IP", VariableRole::Covariate, ""}}));
  for (std::size_t i = 0; i < 30; ++i) {
    kb.ingest(sample_path(0, i), random_matrix(rng, 18, 2), times(18, 100.0 * i));
  }
  const auto w = build_covariate_weights(kb);
  EXPECT_GT(w.mi_raw[1], 0.0);
  EXPECT_EQ(w.weights[1], 1.0);
}

TEST(CovariateWeights, LogBaseInvariant) {
  const auto kb = random_kb(40, 8);
  const auto nats = build_covariate_weights(kb, 0, LogBase::Natural);
  const auto bits = build_covariate_weights(kb, 0, LogBase::Bits);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(nats.weights[c], bits.weights[c], 1e-12);
}

TEST(CovariateWeights, AllZeroMi) {
  KnowledgeBase kb(VariableSchema::prsov());
  std::mt19937_64 rng(4);
  for (std::size_t i = 0; i < 10; ++i) {
    Matrix m = random_matrix(rng, 18, 3);
    for (std::size_t r = 0; r < 18; ++r) m(r, 1) = m(r, 2) = 1.0;
    kb.ingest(sample_path(0, i), m, times(18, 100.0 * i));
  }
  const auto w = build_covariate_weights(kb);
  EXPECT_TRUE(w.all_zero);
  EXPECT_EQ(w.weights[0], 1.0);
  EXPECT_EQ(w.weights[1], 0.0);
  EXPECT_EQ(w.weights[2], 0.0);
}

TEST(CovariateWeights, MaxIsOneOrZero) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto w = build_covariate_weights(random_kb(30, seed));
    const double mx = std::max(w.weights[1], w.weights[2]);
    EXPECT_TRUE(mx == 1.0 || (mx == 0.0 && w.all_zero));
  }
}

TEST(CovariateWeights, InactiveCovariatesExcluded) {
  const auto kb = kb_with_law(6, 200);
  const std::vector<bool> only_n2{true, false, true};
  const auto w = build_covariate_weights(kb, 0, LogBase::Natural, &only_n2);
  EXPECT_EQ(w.weights[1], 0.0);
  EXPECT_EQ(w.weights[2], 1.0);
}

TEST(CovariateWeights, EmptyKb) {
  KnowledgeBase kb(VariableSchema::prsov());
  EXPECT_EQ(code_of([&] { build_covariate_weights(kb); }), ErrorCode::EmptyKB);
}

TEST(CovariateWeights, CacheIsUsedAndRefreshed) {
  auto kb = kb_with_law(9, 100);
  refresh_mi_cache(kb);
  ASSERT_TRUE(kb.mi_cache().has_value());
  const auto fresh = build_covariate_weights(kb);
  EXPECT_EQ(kb.mi_cache()->raw, fresh.mi_raw);
  kb.ingest(sample_path(0, 999), Matrix(18, 3, 1.0), times(18, 1e7));
  EXPECT_FALSE(kb.mi_cache().has_value());
}

TEST(FusedWeights, HandMultiplied) {
  const auto point = build_point_weights({2, 1, 0.9}, VariableSchema::prsov(), 3);
  CovariateWeights cov;
  cov.weights = {1.0, 0.5, 0.25};
  const auto fused = fuse_weights(point, cov);
  EXPECT_NEAR(fused.matrix(0, 0), 0.9, 1e-15);
  EXPECT_NEAR(fused.matrix(0, 1), 0.45, 1e-15);
  EXPECT_NEAR(fused.matrix(0, 2), 0.225, 1e-15);
}

TEST(FusedWeights, IdentityAndZero) {
  const auto point = build_point_weights({12, 6, 0.8}, VariableSchema::prsov(), 18);
  CovariateWeights ones;
  ones.weights = {1.0, 1.0, 1.0};
  EXPECT_EQ(fuse_weights(point, ones).matrix, point.matrix);
  CovariateWeights bad;
  bad.weights = {1.0, 1.0};
  EXPECT_EQ(code_of([&] { fuse_weights(point, bad); }), ErrorCode::DimensionMismatch);
}

TEST(FusedWeights, LawHoldsForRandomDraws) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto schema = VariableSchema::prsov();
  for (int draw = 0; draw < 1000; ++draw) {
    const std::size_t L = 1 + rng() % 24;
    const std::size_t H = 1 + rng() % 12;
    const double lambda = std::max(u(rng), 1e-3);
    CovariateWeights cov;
    cov.weights = {1.0, u(rng), u(rng)};
    const auto point = build_point_weights({L, H, lambda}, schema, L + H);
    const auto fused = fuse_weights(point, cov);
    for (std::size_t r = 0; r < L + H; ++r) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double expect = (r < L ? std::pow(lambda, static_cast<double>(L - 1 - r))
                                     : (c == 0 ? 0.0 : 1.0)) *
                              cov.weights[c];
        EXPECT_NEAR(fused.matrix(r, c), expect, 1e-15);
        if (r >= L && c == 0) EXPECT_EQ(fused.matrix(r, c), 0.0);
      }
    }
  }
}

TEST(FusedWeights, SchemesMaskFutureTarget) {
  const auto kb = random_kb(30, 3);
  for (auto scheme : {WeightingScheme::Uniform, WeightingScheme::Point, WeightingScheme::Fused}) {
    const auto w = weights_for_scheme(scheme, {12, 6, 0.9}, kb);
    double masked = 0.0;
    for (std::size_t r = 12; r < 18; ++r) masked += w.matrix(r, 0);
    EXPECT_EQ(masked, 0.0);
  }
  const auto uniform = weights_for_scheme(WeightingScheme::Uniform, {12, 6, 0.9}, kb);
  EXPECT_EQ(uniform.matrix(0, 0), 1.0);
  EXPECT_EQ(uniform.matrix(17, 2), 1.0);
}

TEST(FusedWeights, CsvExport) {
  const auto point = build_point_weights({1, 1, 1.0}, VariableSchema::prsov(), 2);
  std::ostringstream out;
  write_weights_csv(out, point.matrix, VariableSchema::prsov());
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "t,MP,IP,N2");
  std::getline(in, line);
  EXPECT_EQ(line.substr(line.find(',')), ",1,1,1");
  std::getline(in, line);
  EXPECT_EQ(line.substr(line.find(',')), ",0,1,1");
}
