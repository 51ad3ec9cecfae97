#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <random>

#include "regimerag/forecaster.hpp"
#include "test_util.hpp"

using namespace regimerag;
using namespace regimerag::testing;

namespace {

ForecastInput input_with(Matrix context, Matrix future, std::size_t hist = 12, std::size_t horizon = 6) {
  ForecastInput in;
  in.context = std::move(context);
  in.future_covariates = std::move(future);
  in.schema = VariableSchema::prsov();
  in.history_len = hist;
  in.horizon = horizon;
  return in;
}

ForecastInput random_input(std::uint64_t seed, std::size_t spliced) {
  std::mt19937_64 rng(seed);
  return input_with(random_matrix(rng, spliced * 18 + 12, 3), random_matrix(rng, 6, 2));
}

std::string fake(const std::string& mode) { return std::string(FAKE_BACKEND_PATH) + " " + mode; }

}  // namespace

TEST(Loss, HandExamples) {
  const std::vector<double> zero{0, 0}, truth{1, 3};
  EXPECT_DOUBLE_EQ(loss(zero, truth, LossMetric::MSE), 5.0);
  EXPECT_DOUBLE_EQ(loss(zero, truth, LossMetric::MAE), 2.0);
  EXPECT_EQ(loss(truth, truth, LossMetric::MSE), 0.0);
  const std::vector<double> plus{2, 4};
  EXPECT_DOUBLE_EQ(loss(plus, truth, LossMetric::MSE), 1.0);
  EXPECT_DOUBLE_EQ(loss(plus, truth, LossMetric::MAE), 1.0);
  EXPECT_DOUBLE_EQ(loss(zero, truth, LossMetric::MSE, 2.0), 1.25);
  EXPECT_EQ(code_of([&] { loss(zero, std::vector<double>{1}, LossMetric::MSE); }),
            ErrorCode::LengthMismatch);
  EXPECT_EQ(parse_loss_metric("mae"), LossMetric::MAE);
  EXPECT_FALSE(parse_loss_metric("rmse").has_value());
}

TEST(Loss, ZeroExactlyWhenEqual) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;
  for (int i = 0; i < 100; ++i) {
    std::vector<double> a(6), b(6);
    for (auto& v : a) v = z(rng);
    b = a;
    EXPECT_EQ(loss(a, b, LossMetric::MSE), 0.0);
    b[rng() % 6] += 1e-9;
    EXPECT_GT(loss(a, b, LossMetric::MSE), 0.0);
  }
}

TEST(ForecastInput, Validation) {
  auto in = random_input(1, 1);
  EXPECT_NO_THROW(in.validate());
  EXPECT_EQ(in.spliced_regimes(), 1u);
  auto bad_rows = input_with(Matrix(13, 3), Matrix(6, 2));
  EXPECT_EQ(code_of([&] { bad_rows.validate(); }), ErrorCode::ShapeMismatch);
  auto bad_future = input_with(Matrix(12, 3), Matrix(5, 2));
  EXPECT_EQ(code_of([&] { bad_future.validate(); }), ErrorCode::ShapeMismatch);
  auto nan = random_input(2, 0);
  nan.context(3, 1) = std::nan("");
  EXPECT_EQ(code_of([&] { nan.validate(); }), ErrorCode::NonFiniteValue);
}

TEST(Persistence, RepeatsLastTarget) {
  auto in = random_input(3, 2);
  in.context(in.context.rows() - 1, 0) = 4.2;
  const auto out = PersistenceForecaster{}.forecast(in);
  EXPECT_EQ(out.prediction, std::vector<double>(6, 4.2));
}

TEST(CovariateRegression, RecoversExactLaw) {
  Matrix ctx(12, 3);
  for (std::size_t r = 0; r < 12; ++r) {
    ctx(r, 1) = 0.5 * static_cast<double>(r) + 1.0;
    ctx(r, 2) = std::sin(static_cast<double>(r));
    ctx(r, 0) = 2.0 * ctx(r, 1);
  }
  auto in = input_with(ctx, Matrix{{1, 0.3}, {2, -0.1}, {3, 0.7}}, 12, 3);
  const auto out = CovariateRegressionForecaster{}.forecast(in);
  ASSERT_EQ(out.prediction.size(), 3u);
  EXPECT_NEAR(out.prediction[0], 2.0, 1e-9);
  EXPECT_NEAR(out.prediction[1], 4.0, 1e-9);
  EXPECT_NEAR(out.prediction[2], 6.0, 1e-9);
}

TEST(CovariateRegression, RecoversRandomLinearLaws) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    const double c0 = u(rng), b1 = u(rng), b2 = u(rng);
    Matrix ctx(30, 3);
    for (std::size_t r = 0; r < 30; ++r) {
      ctx(r, 1) = u(rng);
      ctx(r, 2) = u(rng);
      ctx(r, 0) = c0 + b1 * ctx(r, 1) + b2 * ctx(r, 2);
    }
    Matrix fut(6, 2);
    for (double& v : fut.flat()) v = u(rng);
    auto in = input_with(ctx, fut, 12, 6);
    in.history_len = 12;
    const auto coef = CovariateRegressionForecaster{}.fit(in);
    EXPECT_NEAR(coef[0], c0, 1e-6);
    EXPECT_NEAR(coef[1], b1, 1e-6);
    EXPECT_NEAR(coef[2], b2, 1e-6);
    const auto out = CovariateRegressionForecaster{}.forecast(in);
    for (std::size_t h = 0; h < 6; ++h) {
      EXPECT_NEAR(out.prediction[h], c0 + b1 * fut(h, 0) + b2 * fut(h, 1), 1e-9);
    }
  }
}

TEST(CovariateRegression, SurvivesRankDeficiency) {
  Matrix ctx(12, 3, 1.0);  // constant covariates
  auto in = input_with(ctx, Matrix(6, 2, 1.0));
  const auto out = CovariateRegressionForecaster{}.forecast(in);
  for (double v : out.prediction) EXPECT_NEAR(v, 1.0, 1e-6);
}

TEST(NearestContext, CopiesExactMatchFuture) {
  std::mt19937_64 rng(5);
  const Matrix other = random_matrix(rng, 18, 3);
  const Matrix match = random_matrix(rng, 18, 3);
  const Matrix q = match.slice_rows(0, 12);
  Matrix ctx(18 * 2 + 12, 3);
  for (std::size_t r = 0; r < 18; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      ctx(r, c) = match(r, c);
      ctx(18 + r, c) = other(r, c);
    }
  }
  for (std::size_t r = 0; r < 12; ++r)
    for (std::size_t c = 0; c < 3; ++c) ctx(36 + r, c) = q(r, c);
  Matrix fut(6, 2);
  for (std::size_t h = 0; h < 6; ++h) {
    fut(h, 0) = match(12 + h, 1);
    fut(h, 1) = match(12 + h, 2);
  }
  const auto out = NearestContextForecaster{}.forecast(input_with(ctx, fut));
  for (std::size_t h = 0; h < 6; ++h) EXPECT_EQ(out.prediction[h], match(12 + h, 0));
}

TEST(NearestContext, FallsBackToPersistence) {
  auto in = random_input(6, 0);
  EXPECT_EQ(NearestContextForecaster{}.forecast(in).prediction,
            PersistenceForecaster{}.forecast(in).prediction);
}

TEST(Backends, Deterministic) {
  for (const char* name : {"persistence", "covariate-regression", "nearest-context"}) {
    const auto f = make_forecaster(name);
    EXPECT_EQ(f->name(), name);
    for (std::uint64_t s = 0; s < 10; ++s) {
      const auto in = random_input(s, s % 4);
      EXPECT_EQ(f->forecast(in).prediction, f->forecast(in).prediction);
    }
  }
  EXPECT_EQ(code_of([] { make_forecaster("chronos"); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([] { make_forecaster("external:"); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([] { make_forecaster("replay"); }), ErrorCode::InvalidConfig);
}

TEST(Protocol, RequestAndResponse) {
  const auto in = random_input(7, 1);
  const auto line = encode_forecast_request(in);
  EXPECT_EQ(line.find('\n'), std::string::npos);
  EXPECT_EQ(request_key(line).size(), 16u);
  EXPECT_EQ(request_key(line), request_key(encode_forecast_request(in)));
  EXPECT_EQ(decode_forecast_response(R"({"prediction":[1,2]})", 2).prediction,
            (std::vector<double>{1, 2}));
  EXPECT_EQ(code_of([] { decode_forecast_response(R"({"prediction":[1]})", 2); }),
            ErrorCode::MalformedResponse);
  EXPECT_EQ(code_of([] { decode_forecast_response("{", 2); }), ErrorCode::MalformedResponse);
  EXPECT_EQ(code_of([] { decode_forecast_response(R"({"prediction":[1,"a"]})", 2); }),
            ErrorCode::MalformedResponse);
  EXPECT_EQ(code_of([] { decode_forecast_response(R"({"error":"x"})", 2); }),
            ErrorCode::BackendUnavailable);
}

TEST(ExternalProcess, RoundTrip) {
  const auto f = make_forecaster("external:" + fake("persist"));
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto in = random_input(s, s % 3);
    EXPECT_EQ(f->forecast(in).prediction, PersistenceForecaster{}.forecast(in).prediction);
  }
}

TEST(ExternalProcess, Failures) {
  const auto in = random_input(8, 1);
  EXPECT_EQ(code_of([&] { make_forecaster("external:" + fake("garbage"))->forecast(in); }),
            ErrorCode::MalformedResponse);
  EXPECT_EQ(code_of([&] { make_forecaster("external:" + fake("short"))->forecast(in); }),
            ErrorCode::MalformedResponse);
  EXPECT_EQ(code_of([&] { make_forecaster("external:" + fake("error"))->forecast(in); }),
            ErrorCode::BackendUnavailable);
  EXPECT_EQ(code_of([&] { make_forecaster("external:" + fake("exit"))->forecast(in); }),
            ErrorCode::BackendUnavailable);
  EXPECT_EQ(code_of([&] { make_forecaster("external:/nonexistent/model-server")->forecast(in); }),
            ErrorCode::BackendUnavailable);
}

TEST(ExternalProcess, Timeout) {
  const auto in = random_input(9, 0);
  BackendOptions opts;
  opts.timeout = std::chrono::milliseconds(200);
  const auto start = std::chrono::steady_clock::now();
  EXPECT_EQ(code_of([&] { make_forecaster("external:" + fake("hang"), opts)->forecast(in); }),
            ErrorCode::BackendUnavailable);
  EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::seconds(5));
}

TEST(ReplayCache, RecordsThenReplays) {
  TempDir dir;
  const auto cache = dir / "cache.jsonl";
  const auto in = random_input(10, 1);
  const auto in2 = random_input(11, 2);
  {
    BackendOptions opts;
    opts.replay_cache = cache;
    const auto rec = make_forecaster("external:" + fake("persist"), opts);
    EXPECT_EQ(rec->name(), "replay");
    rec->forecast(in);
    rec->forecast(in);
  }
  std::ifstream lines(cache);
  std::size_t count = 0;
  for (std::string l; std::getline(lines, l);) ++count;
  EXPECT_EQ(count, 1u);

  ReplayCacheForecaster replay(cache, nullptr);
  EXPECT_EQ(replay.cached_entries(), 1u);
  EXPECT_EQ(replay.forecast(in).prediction, PersistenceForecaster{}.forecast(in).prediction);
  EXPECT_EQ(code_of([&] { replay.forecast(in2); }), ErrorCode::BackendUnavailable);
}

TEST(ReplayCache, CorruptCacheFile) {
  TempDir dir;
  std::ofstream(dir / "bad.jsonl") << "{\"key\":1}\n";
  EXPECT_EQ(code_of([&] { ReplayCacheForecaster(dir / "bad.jsonl", nullptr); }),
            ErrorCode::MalformedResponse);
}
