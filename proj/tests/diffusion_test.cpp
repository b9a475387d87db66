#include <doctest.h>

#include <cmath>

#include "giv/diffusion.hpp"
#include "giv/error.hpp"
#include "test_util.hpp"

using namespace giv;

namespace {

LatentBlock constant(float v) { return LatentBlock(1, 1, 1, 1, v); }

// One-step schedule table with the requested alpha_bar at t = 1 and t = 2.
NoiseSchedule two_step(float first, float second) {
  return NoiseSchedule(ScheduleKind::kCustom, {first, second});
}

}  // namespace

TEST_SUITE("diffusion") {

TEST_CASE("add_noise endpoints") {
  Rng rng = derive_rng(1, {});
  const auto z0 = gaussian_block(2, 3, 4, 4, rng);
  const auto eps = gaussian_block(2, 3, 4, 4, rng);
  // alpha_bar = 1 exactly is allowed in the table; the last entry must stay above zero.
  const NoiseSchedule clean(ScheduleKind::kCustom, {1.0f, 0.5f});
  CHECK(add_noise(z0, eps, 1, clean) == z0);
  const NoiseSchedule noisy(ScheduleKind::kCustom, {0.5f, 1e-30f});
  CHECK(test::max_abs_diff(add_noise(z0, eps, 2, noisy), eps) < 1e-6);
}

TEST_CASE("add_noise by hand") {
  const auto out = add_noise(constant(1.0f), constant(2.0f), 1, two_step(0.25f, 0.1f));
  CHECK(out.data[0] == doctest::Approx(2.2320508).epsilon(1e-6));
}

TEST_CASE("add_noise rejects timesteps outside the schedule") {
  const auto s = make_schedule(10);
  CHECK_THROWS_AS(add_noise(constant(0), constant(0), 0, s), ContractError);
  CHECK_THROWS_AS(add_noise(constant(0), constant(0), 11, s), ContractError);
}

TEST_CASE("training_loss values") {
  Rng rng = derive_rng(2, {});
  const auto a = gaussian_block(2, 3, 4, 5, rng);
  CHECK(training_loss(a, a) == 0.0);
  CHECK(training_loss(LatentBlock(2, 2, 2, 2, 0.0f), LatentBlock(2, 2, 2, 2, 1.5f)) ==
        doctest::Approx(2.25));
  const auto b = gaussian_block(2, 3, 4, 5, rng);
  double total = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    total += d * d;
  }
  CHECK(std::fabs(training_loss(a, b) - total / static_cast<double>(a.data.size())) < 1e-6);
  CHECK_THROWS_AS(training_loss(a, LatentBlock(1, 3, 4, 5)), ContractError);
}

TEST_CASE("ddim_step with the true noise re-noises the clean sample") {
  const auto sched = make_schedule(1000);
  Rng rng = derive_rng(3, {});
  const auto z0 = gaussian_block(2, 4, 3, 3, rng);
  const auto eps = gaussian_block(2, 4, 3, 3, rng);
  const auto zt = add_noise(z0, eps, 700, sched);
  const auto prev = ddim_step(zt, eps, 700, 300, sched);
  CHECK(test::max_abs_diff(prev, add_noise(z0, eps, 300, sched)) < 1e-5);
  CHECK(test::max_abs_diff(ddim_step(zt, eps, 700, 0, sched), z0) < 1e-5);
}

TEST_CASE("one DDIM step by hand") {
  // alpha_bar(t) = 0.25 at t = 2, 0.81 at t_prev = 1.
  const auto sched = two_step(0.81f, 0.25f);
  const auto out = ddim_step(constant(2.2320508f), constant(2.0f), 2, 1, sched);
  CHECK(out.data[0] == doctest::Approx(0.9 + std::sqrt(0.19) * 2.0).epsilon(1e-6));
  CHECK(out.data[0] == doctest::Approx(1.7718).epsilon(1e-4));
}

TEST_CASE("ddim_step rejects a non-decreasing pair") {
  const auto s = make_schedule(10);
  CHECK_THROWS_AS(ddim_step(constant(0), constant(0), 3, 3, s), ContractError);
  CHECK_THROWS_AS(ddim_step(constant(0), constant(0), 3, 5, s), ContractError);
  CHECK_THROWS_AS(ddim_step(constant(0), constant(0), 11, 5, s), ContractError);
}

TEST_CASE("cumulative product of betas") {
  const auto s = make_schedule_from_betas({0.1, 0.2});
  CHECK(s.alpha_bar(1) == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(s.alpha_bar(2) == doctest::Approx(0.72).epsilon(1e-7));
  CHECK(s.alpha_bar(0) == 1.0);
}

TEST_CASE("every schedule kind decreases strictly") {
  for (auto kind : {ScheduleKind::kScaledLinear, ScheduleKind::kLinear, ScheduleKind::kCosine}) {
    CHECK(make_schedule(1000, kind).alpha_bar(1) > 0.99);
    for (int T : {2, 10, 1000}) {
      const auto s = make_schedule(T, kind);
      CHECK(s.alpha_bar(T) > 0.0);
      for (int t = 2; t <= T; ++t) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    }
  }
}

TEST_CASE("default schedule ends close to zero") {
  const auto s = make_schedule(1000);
  CHECK(s.alpha_bar(1000) < 0.05);
  // Product of (1 - beta) over the scaled-linear betas, computed in double.
  CHECK(s.alpha_bar(1000) == doctest::Approx(0.0046601).epsilon(1e-3));
}

TEST_CASE("schedule kind names round trip") {
  for (auto kind : {ScheduleKind::kScaledLinear, ScheduleKind::kLinear, ScheduleKind::kCosine,
                    ScheduleKind::kCustom}) {
    CHECK(parse_schedule_kind(schedule_kind_name(kind)) == kind);
  }
  CHECK_THROWS_AS(parse_schedule_kind("sigmoid"), ContractError);
}

TEST_CASE("DDIM plan spacing") {
  const auto p = make_ddim_plan(1000, 50);
  REQUIRE(p.timesteps.size() == 50);
  CHECK(p.timesteps.front() == 1000);
  CHECK(p.timesteps.back() == 1);
  for (std::size_t i = 1; i < p.timesteps.size(); ++i) {
    CHECK(p.timesteps[i] < p.timesteps[i - 1]);
  }
  CHECK(p.previous(49) == 0);
  CHECK(make_ddim_plan(10, 1).timesteps == std::vector<int>{10});
  CHECK_THROWS_AS(make_ddim_plan(10, 11), ContractError);
  CHECK_THROWS_AS(make_ddim_plan(10, 0), ContractError);
}

TEST_CASE("clean-sample estimate inverts add_noise wherever signal remains") {
  const auto sched = make_schedule(1000);
  Rng rng = derive_rng(4, {});
  const auto z0 = gaussian_block(1, 4, 4, 4, rng);
  const auto eps = gaussian_block(1, 4, 4, 4, rng);
  for (int t = 1; t <= 1000; t += 37) {
    if (sched.alpha_bar(t) < 1e-4) continue;
    CHECK(test::max_abs_diff(predict_x0(add_noise(z0, eps, t, sched), eps, t, sched), z0) < 1e-5);
  }
}

TEST_CASE("noised variance follows alpha_bar") {
  const auto sched = make_schedule(1000);
  const int t = 400;
  const double ab = sched.alpha_bar(t);
  const auto z0 = LatentBlock(1, 1, 1, 4, 0.0f);
  LatentBlock base = z0;
  base.data = {-1.5f, -0.5f, 0.5f, 1.5f};  // variance 1.25 across the 4 cells
  Rng rng = derive_rng(5, {});
  constexpr int kSamples = 100000;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < kSamples; ++i) {
    const auto eps = gaussian_block(1, 1, 1, 4, rng);
    const auto z = add_noise(base, eps, t, sched);
    for (float v : z.data) {
      sum += v;
      sum_sq += static_cast<double>(v) * v;
    }
  }
  const double n = 4.0 * kSamples;
  const double var = sum_sq / n - (sum / n) * (sum / n);
  const double expect = ab * 1.25 + (1.0 - ab);
  CHECK(std::fabs(var - expect) / expect < 0.05);
}

}  // TEST_SUITE
