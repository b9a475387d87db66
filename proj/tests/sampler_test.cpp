#include <doctest.h>

#include <cmath>

#include "giv/error.hpp"
#include "giv/model.hpp"
#include "giv/sampler.hpp"
#include "test_util.hpp"

using namespace giv;

namespace {

LatentBlock filled(float v) { return LatentBlock(2, 2, 1, 2, v); }

// Deterministic stand-in whose output depends on every part of the bundle,
// so that mixing up the three calls shows in the result.
class ProbeEpsilon final : public EpsilonModel {
 public:
  LatentBlock predict(const ConditionBundle& b, int t) const override {
    const auto& z = b.z_input;
    const auto n = b.reference_count, c = z.channels / 2;
    double image = 0.0;
    for (std::int64_t r = 0; r < n; ++r) {
      for (std::int64_t ch = 0; ch < 2 * c; ++ch) image += z.at(r, ch, 0, 0);
    }
    const double text = static_cast<double>(b.prompt.size());
    LatentBlock eps(z.frames - n, c, z.height, z.width);
    for (std::int64_t f = 0; f < eps.frames; ++f) {
      for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t y = 0; y < z.height; ++y) {
          for (std::int64_t x = 0; x < z.width; ++x) {
            eps.at(f, ch, y, x) = static_cast<float>(
                std::tanh(z.at(n + f, ch, y, x) + 0.5 * z.at(n + f, c + ch, y, x)) +
                0.01 * text + 0.03 * image + 1e-4 * t);
          }
        }
      }
    }
    ++calls;
    return eps;
  }
  mutable int calls = 0;
};

// Checks every bundle it sees, then answers with the exact noise of z0.
class OracleEpsilon final : public EpsilonModel {
 public:
  OracleEpsilon(LatentBlock z0, const NoiseSchedule& sched, const SamplingConditions& cond)
      : z0_(std::move(z0)), sched_(sched), cond_(cond) {}

  LatentBlock predict(const ConditionBundle& b, int t) const override {
    const auto& z = b.z_input;
    const auto n = b.reference_count, c = z0_.channels;
    const bool image = b.present.references;
    for (std::int64_t f = 0; f < z.frames; ++f) {
      for (std::int64_t ch = 0; ch < 2 * c; ++ch) {
        for (std::int64_t y = 0; y < z.height; ++y) {
          for (std::int64_t x = 0; x < z.width; ++x) {
            const float v = z.at(f, ch, y, x);
            if (f < n && ch < c) {
              condition_stable &= v == (image ? cond_.references.at(f, ch, y, x) : 0.0f);
            } else if (f < n) {
              condition_stable &= image || v == 0.0f;
            } else if (ch >= c) {
              condition_stable &= v == cond_.condition.at(f - n, ch - c, y, x);
            }
          }
        }
      }
    }
    const double ab = sched_.alpha_bar(t);
    LatentBlock eps(z0_.frames, c, z0_.height, z0_.width);
    for (std::int64_t f = 0; f < z0_.frames; ++f) {
      for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t y = 0; y < z0_.height; ++y) {
          for (std::int64_t x = 0; x < z0_.width; ++x) {
            eps.at(f, ch, y, x) = static_cast<float>(
                (z.at(n + f, ch, y, x) - std::sqrt(ab) * z0_.at(f, ch, y, x)) /
                std::sqrt(1.0 - ab));
          }
        }
      }
    }
    return eps;
  }
  mutable bool condition_stable = true;

 private:
  LatentBlock z0_;
  const NoiseSchedule& sched_;
  const SamplingConditions& cond_;
};

SamplingConditions small_conditions(Rng& rng) {
  SamplingConditions cond;
  cond.condition = gaussian_block(3, 4, 2, 2, rng);
  cond.references = gaussian_block(1, 4, 2, 2, rng);
  cond.mask = Video(1, 1, 4, 4, 1.0f);
  cond.prompt = tokenize("a green triangle");
  return cond;
}

}  // namespace

TEST_SUITE("sampler") {

TEST_CASE("single guidance by hand") {
  CHECK(cfg_epsilon(filled(1), filled(2), 6.0).data[0] == 7.0f);
  CHECK(cfg_epsilon(filled(1), filled(2), 1.0) == filled(2));
  CHECK(cfg_epsilon(filled(1), filled(2), 0.0) == filled(1));
  CHECK_THROWS_AS(cfg_epsilon(filled(1), LatentBlock(1, 2, 1, 2), 6.0), ContractError);
}

TEST_CASE("dual guidance by hand") {
  CHECK(dual_cfg_epsilon(filled(0), filled(1), filled(2), 6.0, 1.5).data[0] == 7.5f);
  CHECK_THROWS_AS(dual_cfg_epsilon(filled(0), filled(1), LatentBlock(2, 2, 2, 2), 6, 1.5),
                  ContractError);
}

TEST_CASE("dual guidance identities at random points") {
  Rng rng = derive_rng(1, {});
  for (int i = 0; i < 10; ++i) {
    const auto a = gaussian_block(2, 3, 4, 4, rng);
    const auto b = gaussian_block(2, 3, 4, 4, rng);
    const auto c = gaussian_block(2, 3, 4, 4, rng);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    const double s1 = u(rng);
    CHECK(dual_cfg_epsilon(a, b, c, s1, 0.0) == cfg_epsilon(a, b, s1));
    CHECK(dual_cfg_epsilon(a, b, c, 1.0, 1.0) == c);
  }
}

TEST_CASE("dual guidance is linear in each input") {
  Rng rng = derive_rng(2, {});
  const double s1 = 6.0, s2 = 1.5;
  const double alpha = 0.75, beta = -1.25;
  for (int slot = 0; slot < 3; ++slot) {
    LatentBlock in[3] = {gaussian_block(2, 2, 3, 3, rng), gaussian_block(2, 2, 3, 3, rng),
                         gaussian_block(2, 2, 3, 3, rng)};
    const auto x = gaussian_block(2, 2, 3, 3, rng), y = gaussian_block(2, 2, 3, 3, rng);
    auto with = [&](const LatentBlock& v) {
      LatentBlock args[3] = {in[0], in[1], in[2]};
      args[slot] = v;
      return dual_cfg_epsilon(args[0], args[1], args[2], s1, s2);
    };
    LatentBlock mix = x, zero(2, 2, 3, 3);
    for (std::size_t i = 0; i < mix.data.size(); ++i) {
      mix.data[i] = static_cast<float>(alpha * x.data[i] + beta * y.data[i]);
    }
    const auto fx = with(x), fy = with(y), fm = with(mix), f0 = with(zero);
    for (std::size_t i = 0; i < fm.data.size(); ++i) {
      // Affine in each slot: f(ax + by) = a f(x) + b f(y) + (1 - a - b) f(0).
      const double expect =
          alpha * fx.data[i] + beta * fy.data[i] + (1.0 - alpha - beta) * f0.data[i];
      CHECK(std::fabs(fm.data[i] - expect) < 1e-4);
    }
  }
}

TEST_CASE("with s2 = 0 the image-conditioned prediction has no effect") {
  Rng rng = derive_rng(3, {});
  const auto a = gaussian_block(2, 3, 4, 4, rng), b = gaussian_block(2, 3, 4, 4, rng);
  const auto c = gaussian_block(2, 3, 4, 4, rng);
  auto c2 = c;
  for (auto& v : c2.data) v += 100.0f;
  CHECK(dual_cfg_epsilon(a, b, c, 6.0, 0.0) == dual_cfg_epsilon(a, b, c2, 6.0, 0.0));
}

TEST_CASE("null bundles zero the image condition and empty the prompt") {
  Rng rng = derive_rng(4, {});
  const auto cond = small_conditions(rng);
  const auto z = gaussian_block(3, 4, 2, 2, rng);
  const auto full = cond.bundle(z, true, true);
  const auto text_only = cond.bundle(z, true, false);
  const auto none = cond.bundle(z, false, false);
  CHECK(full.prompt == cond.prompt);
  CHECK(text_only.prompt == cond.prompt);
  CHECK(none.prompt.empty());
  for (std::int64_t ch = 0; ch < 8; ++ch) {
    CHECK(text_only.z_input.at(0, ch, 1, 1) == 0.0f);
    CHECK(none.z_input.at(0, ch, 0, 1) == 0.0f);
  }
  CHECK(full.z_input.at(0, 0, 1, 1) == cond.references.at(0, 0, 1, 1));
  CHECK(full.z_input.at(0, 6, 1, 1) == 1.0f);
  // Video frames are the same in all three.
  for (std::int64_t ch = 0; ch < 8; ++ch) {
    CHECK(full.z_input.at(2, ch, 0, 0) == none.z_input.at(2, ch, 0, 0));
  }
}

TEST_CASE("s1 = s2 = 1 follows the fully conditioned trajectory exactly") {
  Rng rng = derive_rng(5, {});
  const auto cond = small_conditions(rng);
  const auto sched = make_schedule(1000);
  const auto plan = make_ddim_plan(1000, 8);
  const auto noise = gaussian_block(3, 4, 2, 2, rng);
  const ProbeEpsilon probe;
  const auto guided = sample(probe, cond, plan, sched, GuidanceConfig{1.0, 1.0, 8}, noise);
  CHECK(probe.calls == 3 * 8);

  LatentBlock z = noise;
  for (std::size_t i = 0; i < plan.timesteps.size(); ++i) {
    const int t = plan.timesteps[i];
    z = ddim_step(z, probe.predict(cond.bundle(z, true, true), t), t, plan.previous(i), sched);
  }
  CHECK(guided == z);
}

TEST_CASE("s2 = 0 skips the image-conditioned call") {
  Rng rng = derive_rng(6, {});
  const auto cond = small_conditions(rng);
  const ProbeEpsilon probe;
  sample(probe, cond, make_ddim_plan(1000, 5), make_schedule(1000), GuidanceConfig{6.0, 0.0, 5},
         rng);
  CHECK(probe.calls == 2 * 5);
}

TEST_CASE("an oracle model is recovered under any guidance") {
  Rng rng = derive_rng(7, {});
  const auto cond = small_conditions(rng);
  const auto sched = make_schedule(1000);
  const auto plan = make_ddim_plan(1000, 50);
  const auto z0 = gaussian_block(3, 4, 2, 2, rng);
  const OracleEpsilon oracle(z0, sched, cond);
  for (auto [s1, s2] : {std::pair{1.0, 0.0}, {6.0, 1.5}, {7.5, 3.0}, {0.0, 0.0}}) {
    const auto out = sample(oracle, cond, plan, sched, GuidanceConfig{s1, s2, 50}, rng);
    CHECK(test::max_abs_diff(out, z0) <= 1e-4);
  }
  CHECK(oracle.condition_stable);
}

TEST_CASE("sampling is deterministic under a seed") {
  Rng rng = derive_rng(8, {});
  const auto cond = small_conditions(rng);
  const auto sched = make_schedule(1000);
  const auto plan = make_ddim_plan(1000, 6);
  const ProbeEpsilon probe;
  Rng a = derive_rng(9, {}), b = derive_rng(9, {}), c = derive_rng(10, {});
  const auto first = sample(probe, cond, plan, sched, GuidanceConfig{}, a);
  CHECK(first == sample(probe, cond, plan, sched, GuidanceConfig{}, b));
  CHECK_FALSE(first == sample(probe, cond, plan, sched, GuidanceConfig{}, c));
}

TEST_CASE("the transformer plugs into the sampler") {
  ModelConfig mc;
  mc.latent_channels = 4;
  mc.depth = 1;
  mc.width = 8;
  mc.heads = 2;
  mc.latent_height = 2;
  mc.latent_width = 2;
  mc.max_video_frames = 4;
  mc.ffn_multiplier = 1;
  const auto model = GivTransformer::create(mc, 3);
  const TransformerEpsilon eps(model);
  Rng rng = derive_rng(11, {});
  const auto cond = small_conditions(rng);
  const auto out =
      sample(eps, cond, make_ddim_plan(1000, 3), make_schedule(1000), GuidanceConfig{}, rng);
  CHECK(out.same_dims(cond.condition));
  for (float v : out.data) CHECK(std::isfinite(v));
}

TEST_CASE("invalid guidance settings") {
  Rng rng = derive_rng(12, {});
  const auto cond = small_conditions(rng);
  const ProbeEpsilon probe;
  const auto sched = make_schedule(1000);
  const auto plan = make_ddim_plan(1000, 5);
  CHECK_THROWS_AS(sample(probe, cond, plan, sched, GuidanceConfig{-1.0, 1.5, 5}, rng),
                  ContractError);
  CHECK_THROWS_AS(sample(probe, cond, plan, sched, GuidanceConfig{6.0, -0.5, 5}, rng),
                  ContractError);
  CHECK_THROWS_AS(sample(probe, cond, plan, sched, GuidanceConfig{}, LatentBlock(2, 4, 2, 2)),
                  ContractError);
}

}  // TEST_SUITE
