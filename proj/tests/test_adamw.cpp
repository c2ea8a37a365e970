#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include <cvgl/adamw.hpp>
#include <cvgl/rng.hpp>

#include "oracles.hpp"

using namespace cvgl;

namespace {

void step(std::vector<double>& w, const std::vector<double>& g, AdamWState& state, const AdamWConfig& cfg) {
  const std::span<double> params[] = {w};
  const std::span<const double> grads[] = {g};
  adamw_step(params, grads, state, cfg);
}

}  // namespace

TEST(AdamW, NullStepLeavesParamsAndCountsStep) {
  std::vector<double> w{1.5, -2.0, 0.0};
  AdamWState state;
  step(w, {0.0, 0.0, 0.0}, state, {1e-3, 0.9, 0.999, 1e-8, 0.0});
  EXPECT_EQ(w, (std::vector<double>{1.5, -2.0, 0.0}));
  EXPECT_EQ(state.step, 1u);
  step(w, {0.0, 0.0, 0.0}, state, {1e-3, 0.9, 0.999, 1e-8, 0.0});
  EXPECT_EQ(state.step, 2u);
}

TEST(AdamW, SingleStepHandValue) {
  std::vector<double> w{1.0};
  AdamWState state;
  step(w, {0.5}, state, {1e-3, 0.9, 0.999, 1e-8, 0.01});
  // 1 - 1e-3 * 0.5/(0.5 + 1e-8) - 1e-3 * 0.01 = 0.99899000002 (high-precision: 0.998990000019999999600)
  EXPECT_NEAR(w[0], 0.998990000019999999600, 1e-12);
  const double hand = 1.0 - 1e-3 * (0.5 / (0.5 + 1e-8)) - 1e-3 * 0.01 * 1.0;
  EXPECT_NEAR(w[0], hand, 1e-15);
}

TEST(AdamW, TwoStepsMatchStraightLineOracle) {
  std::vector<double> w{1.0};
  AdamWState state;
  const AdamWConfig cfg{1e-3, 0.9, 0.999, 1e-8, 0.01};
  oracle::AdamW ref{1e-3, 0.9, 0.999, 1e-8, 0.01, {}, {}, 0};
  std::vector<double> wr{1.0};
  for (int t = 0; t < 2; ++t) {
    step(w, {0.5}, state, cfg);
    ref.step(wr, {0.5});
    EXPECT_NEAR(w[0], wr[0], 1e-12);
  }
  EXPECT_NEAR(w[0], 0.997980010139999799, 1e-12);
}

TEST(AdamW, RandomTensorsTrackOracle) {
  Xoshiro256 rng(21);
  std::vector<double> a(17), b(5);
  for (auto& x : a) x = rng.normal();
  for (auto& x : b) x = rng.normal();
  auto ra = a, rb = b;
  AdamWState state;
  const AdamWConfig cfg{3e-2, 0.8, 0.99, 1e-6, 0.1};
  oracle::AdamW oa{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay, {}, {}, 0};
  oracle::AdamW ob = oa;
  for (int t = 0; t < 25; ++t) {
    std::vector<double> ga(a.size()), gb(b.size());
    for (auto& x : ga) x = rng.normal();
    for (auto& x : gb) x = rng.normal();
    const std::span<double> params[] = {a, b};
    const std::span<const double> grads[] = {ga, gb};
    adamw_step(params, grads, state, cfg);
    oa.step(ra, ga);
    ob.step(rb, gb);
  }
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], ra[i], 1e-12);
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_NEAR(b[i], rb[i], 1e-12);
  for (const auto& v : state.v)
    for (double x : v) EXPECT_GE(x, 0.0);
}

TEST(AdamW, Errors) {
  std::vector<double> w{1.0};
  AdamWState state;
  EXPECT_THROW(step(w, {std::nan("")}, state, {}), Error);
  try {
    std::vector<double> x{1.0};
    AdamWState s;
    step(x, {std::numeric_limits<double>::infinity()}, s, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteParam);
  }
  std::vector<double> g{1.0, 2.0};
  const std::span<double> params[] = {w};
  const std::span<const double> grads[] = {g};
  AdamWState fresh;
  EXPECT_THROW(adamw_step(params, grads, fresh, {}), Error);
  AdamWConfig zero_lr;
  zero_lr.lr = 0.0;
  EXPECT_THROW(step(w, {1.0}, fresh, zero_lr), Error);
}

TEST(LrSchedule, Anchors) {
  EXPECT_EQ(lr_at(0, 1e-5, 0.9), 1e-5);
  EXPECT_NEAR(lr_at(1, 1e-5, 0.9), 9e-6, 1e-20);
  EXPECT_NEAR(lr_at(10, 1e-5, 0.9), 3.486784401e-6, 1e-18);
}

TEST(LrSchedule, MatchesRepeatedMultiplication) {
  long double lr = 1e-5L;
  for (std::uint64_t e = 0; e < 100; ++e) {
    EXPECT_EQ(lr_at(e, 1e-5, 0.9), 1e-5 * std::pow(0.9, static_cast<double>(e)));
    EXPECT_NEAR(lr_at(e, 1e-5, 0.9), static_cast<double>(lr), 1e-18);
    lr *= 0.9L;
  }
}
