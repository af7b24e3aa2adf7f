#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "restorl/schedule.hpp"

using restorl::DiffusionSchedule;
using restorl::ScheduleKind;
using restorl::build_schedule;
using restorl::subsequence_schedule;

TEST_CASE("linear schedule with two steps matches the cumulative-product oracle") {
  const auto s = build_schedule(2, 0.1, 0.2, ScheduleKind::linear);
  CHECK(s.beta(1) == doctest::Approx(0.1));
  CHECK(s.beta(2) == doctest::Approx(0.2));
  CHECK(s.alpha_bar(1) == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(s.alpha_bar(2) == doctest::Approx(0.72).epsilon(1e-12));

  const auto ref = oracles::cumprod_alpha_bars(s.betas());
  for (int t = 1; t <= 2; ++t) {
    CHECK(s.alpha_bar(t) == doctest::Approx(static_cast<double>(ref[t - 1])).epsilon(1e-12));
  }
}

TEST_CASE("single near-zero step is an identity forward process") {
  const auto s = build_schedule(1, 1e-8, 1e-8, ScheduleKind::linear);
  CHECK(s.alpha_bar(1) == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("thousand-step linear schedule endpoint") {
  const auto s = build_schedule(1000, 1e-4, 0.02, ScheduleKind::linear);
  // High-precision oracle value for prod(1 - beta_t): 4.03583e-5.
  CHECK(s.alpha_bar(1000) == doctest::Approx(4.0358297653756833e-5).epsilon(0.01));

  const auto ref = oracles::cumprod_alpha_bars(s.betas());
  for (int t = 1; t <= 1000; ++t) {
    const double expected = static_cast<double>(ref[t - 1]);
    CHECK(std::abs(s.alpha_bar(t) - expected) <= 1e-12 * std::abs(expected));
  }
}

TEST_CASE("schedule invariants hold for both kinds") {
  for (auto kind : {ScheduleKind::linear, ScheduleKind::cosine}) {
    CAPTURE(to_string(kind));
    const auto s = build_schedule(64, 1e-4, 0.05, kind);
    for (int t = 1; t <= 64; ++t) {
      CHECK(s.beta(t) > 0.0);
      CHECK(s.beta(t) < 1.0);
      CHECK(s.posterior_variance(t) >= 0.0);
      if (t > 1) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    }
    CHECK(s.posterior_variance(1) == doctest::Approx(0.0));
    CHECK(s.sampling_variance(1) >= 1e-6);
  }
}

TEST_CASE("invalid inputs are rejected") {
  CHECK_THROWS_AS(build_schedule(0, 0.1, 0.2, ScheduleKind::linear), std::invalid_argument);
  CHECK_THROWS_AS(build_schedule(10, 0.0, 0.2, ScheduleKind::linear), std::invalid_argument);
  CHECK_THROWS_AS(build_schedule(10, 0.1, 1.0, ScheduleKind::linear), std::invalid_argument);
  CHECK_THROWS_AS(build_schedule(10, 0.3, 0.2, ScheduleKind::linear), std::invalid_argument);
  const double nan = std::nan("");
  CHECK_THROWS_AS(build_schedule(10, nan, 0.2, ScheduleKind::linear), std::invalid_argument);
  const auto s = build_schedule(4, 0.1, 0.2, ScheduleKind::linear);
  CHECK_THROWS_AS(s.beta(0), std::out_of_range);
  CHECK_THROWS_AS(s.beta(5), std::out_of_range);
}

TEST_CASE("subsequence schedule matches the base alpha_bars at selected steps") {
  const auto base = build_schedule(50, 1e-4, 0.05, ScheduleKind::linear);
  const auto sub = subsequence_schedule(base, 10);
  REQUIRE(sub.num_steps() == 10);
  CHECK(sub.model_timestep(10) == 50);
  for (int k = 1; k <= 10; ++k) {
    const int tau = sub.model_timestep(k);
    CHECK(sub.alpha_bar(k) == doctest::Approx(base.alpha_bar(tau)).epsilon(1e-12));
    if (k > 1) CHECK(tau > sub.model_timestep(k - 1));
  }
  // Full-length subsequence is the base schedule itself.
  const auto same = subsequence_schedule(base, 50);
  CHECK(same.hash() == base.hash());
  CHECK_THROWS_AS(subsequence_schedule(base, 0), std::invalid_argument);
  CHECK_THROWS_AS(subsequence_schedule(base, 51), std::invalid_argument);
}

TEST_CASE("posterior mean coefficients sum compatibly in the no-op limit") {
  // beta_t -> 0 while earlier noise stays fixed: the posterior collapses
  // onto x_t (coef_xt -> 1, coef_x0 -> 0).
  const DiffusionSchedule s({0.2, 1e-10}, {1, 2}, 1e-6);
  CHECK(s.posterior_coef_xt(2) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(s.posterior_coef_x0(2) == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("schedule hash is content-addressed") {
  const auto a = build_schedule(10, 1e-4, 0.02, ScheduleKind::linear);
  const auto b = build_schedule(10, 1e-4, 0.02, ScheduleKind::linear);
  const auto c = build_schedule(10, 1e-4, 0.021, ScheduleKind::linear);
  CHECK(a.hash() == b.hash());
  CHECK(a.hash() != c.hash());
}
