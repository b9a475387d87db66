#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "giv/diffusion.hpp"
#include "giv/error.hpp"
#include "giv/model.hpp"
#include "giv/trainer.hpp"
#include "test_util.hpp"

using namespace giv;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.latent_channels = 4;
  cfg.depth = 2;
  cfg.width = 16;
  cfg.heads = 2;
  cfg.max_prompt_tokens = 8;
  cfg.latent_height = 2;
  cfg.latent_width = 3;
  cfg.max_video_frames = 4;
  cfg.ffn_multiplier = 2;
  return cfg;
}

LatentQuintuple small_record(const ModelConfig& cfg, std::int64_t n, std::int64_t f, Rng& rng) {
  const auto c = cfg.latent_channels, h = cfg.latent_height, w = cfg.latent_width;
  LatentQuintuple q;
  q.prompt = tokenize("a cat");
  q.references = gaussian_block(n, c, h, w, rng);
  q.mask = Video(1, 1, 2 * h, 2 * w, 1.0f);
  q.condition = gaussian_block(f, c, h, w, rng);
  q.target = gaussian_block(f, c, h, w, rng);
  return q;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("parameter count of the desk model") {
  const ModelConfig cfg;
  const auto c = cfg.latent_channels, d = cfg.width, m = cfg.ffn_multiplier * cfg.width;
  const std::int64_t per_block = 4 * d + d * 3 * d + (d * d + d) + (d * m + m) + (m * d + d);
  const std::int64_t expected = (2 * c * d + d) + cfg.max_video_frames * d + d +
                                cfg.latent_height * cfg.latent_width * d + cfg.vocab_size * d +
                                cfg.max_prompt_tokens * d + 2 * (d * d + d) +
                                cfg.depth * per_block + 2 * d + (d * c + c);
  const auto model = GivTransformer::create(cfg, 1);
  CHECK(model.parameter_count() == expected);
  CHECK(model.parameter_count() == 906008);
  CHECK(GivTransformer::create_base(cfg, 1).parameter_count() == 906008 - c * d);

  std::int64_t total = 0;
  for (const auto& [name, p] : model.named_parameters()) total += p.numel();
  CHECK(total == model.parameter_count());
}

TEST_CASE("input layer expansion copies the base rows and zeroes the new ones") {
  const auto base = GivTransformer::create_base(small_config(), 3);
  CHECK_FALSE(base.expanded());
  auto model = base;
  model.expand();
  CHECK(model.expanded());
  CHECK_THROWS_AS(model.expand(), ContractError);

  const auto& before = base.input_projection();
  const auto& after = model.input_projection();
  const auto c = before.in_features(), d = before.out_features();
  REQUIRE(after.in_features() == 2 * c);
  for (std::int64_t i = 0; i < 2 * c * d; ++i) {
    const float expect = i < c * d ? before.weight.data()[static_cast<std::size_t>(i)] : 0.0f;
    CHECK(after.weight.data()[static_cast<std::size_t>(i)] == expect);
  }
  CHECK(std::equal(after.bias.data().begin(), after.bias.data().end(), before.bias.data().begin()));
}

TEST_CASE("freshly expanded model ignores the condition half") {
  const auto cfg = small_config();
  const auto model = GivTransformer::create(cfg, 5);
  const auto base = GivTransformer::create_base(cfg, 5);
  Rng rng = derive_rng(6, {});
  const auto q = small_record(cfg, 1, 3, rng);
  const auto z_t = gaussian_block(3, 4, 2, 3, rng);
  const auto out = model.predict(build_bundle(z_t, q), 300);

  for (int trial = 0; trial < 5; ++trial) {
    auto alt = q;
    alt.condition = gaussian_block(3, 4, 2, 3, rng);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& m : alt.mask.data) m = u(rng);
    CHECK(test::max_abs_diff(model.predict(build_bundle(z_t, alt), 300), out) <= 1e-6);
  }

  // The base model fed only the first c channels agrees too.
  const auto bundle = build_bundle(z_t, q);
  ConditionBundle narrow = bundle;
  narrow.z_input = LatentBlock(bundle.z_input.frames, 4, 2, 3);
  for (std::int64_t f = 0; f < narrow.z_input.frames; ++f) {
    for (std::int64_t ch = 0; ch < 4; ++ch) {
      for (std::int64_t y = 0; y < 2; ++y) {
        for (std::int64_t x = 0; x < 3; ++x) {
          narrow.z_input.at(f, ch, y, x) = bundle.z_input.at(f, ch, y, x);
        }
      }
    }
  }
  CHECK(test::max_abs_diff(base.predict(narrow, 300), out) <= 1e-5);
}

TEST_CASE("one optimizer step lets the condition half matter") {
  const auto cfg = small_config();
  auto model = GivTransformer::create(cfg, 7);
  Rng rng = derive_rng(8, {});
  const auto q = small_record(cfg, 1, 2, rng);
  const auto sched = make_schedule(1000);
  const auto eps = gaussian_block(2, 4, 2, 3, rng);
  {
    ag::Tape tape;
    ag::TapeScope scope(tape);
    const auto loss = diffusion_loss(model, q, 400, eps, sched);
    tape.backward(loss);
  }
  AdamWConfig opt;
  opt.lr = 1e-2;
  AdamW adam(opt, model.named_parameters());
  adam.step();

  const auto& w = model.input_projection().weight.data();
  const auto c = cfg.latent_channels, d = cfg.width;
  CHECK(std::any_of(w.begin() + c * d, w.end(), [](float v) { return v != 0.0f; }));

  const auto z_t = gaussian_block(2, 4, 2, 3, rng);
  auto alt = q;
  alt.condition = gaussian_block(2, 4, 2, 3, rng);
  CHECK(test::max_abs_diff(model.predict(build_bundle(z_t, q), 400),
                           model.predict(build_bundle(z_t, alt), 400)) > 1e-4);
}

TEST_CASE("without positional encoding the model is permutation equivariant") {
  auto cfg = small_config();
  cfg.positional_encoding = false;
  const auto model = GivTransformer::create(cfg, 9);
  Rng rng = derive_rng(10, {});
  const std::int64_t f = 2, c2 = 8, cells = f * 2 * 3;
  const auto z = gaussian_block(f, c2, 2, 3, rng);
  const auto tokens = latent_tokens(z);
  const Tokens prompt = tokenize("ab");

  std::vector<std::int64_t> perm(static_cast<std::size_t>(cells));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<float> shuffled(tokens.data().size());
  for (std::int64_t i = 0; i < cells; ++i) {
    std::copy_n(tokens.data().begin() + perm[static_cast<std::size_t>(i)] * c2, c2,
                shuffled.begin() + i * c2);
  }

  ag::NoTapeScope no_tape;
  const auto out = model.forward_tokens(tokens, prompt, 0, 250);
  const auto out_perm = model.forward_tokens(ag::Tensor({cells, c2}, shuffled), prompt, 0, 250);
  const auto c = cfg.latent_channels;
  double worst = 0.0;
  for (std::int64_t i = 0; i < cells; ++i) {
    for (std::int64_t k = 0; k < c; ++k) {
      const auto a = out_perm.data()[static_cast<std::size_t>(i * c + k)];
      const auto b = out.data()[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)] * c + k)];
      worst = std::max(worst, static_cast<double>(std::fabs(a - b)));
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("positional encoding breaks the symmetry") {
  const auto cfg = small_config();
  const auto model = GivTransformer::create(cfg, 9);
  Rng rng = derive_rng(11, {});
  LatentBlock z(2, 8, 2, 3);
  const auto row = gaussian_block(1, 8, 1, 1, rng);
  for (std::int64_t f = 0; f < 2; ++f) {
    for (std::int64_t ch = 0; ch < 8; ++ch) {
      for (std::int64_t y = 0; y < 2; ++y) {
        for (std::int64_t x = 0; x < 3; ++x) z.at(f, ch, y, x) = row.at(0, ch, 0, 0);
      }
    }
  }
  ConditionBundle b{z, {}, 0, {}};
  const auto out = model.predict(b, 100);
  // Identical cells still get different outputs at different positions.
  CHECK(std::fabs(out.at(0, 0, 0, 0) - out.at(1, 0, 1, 2)) > 1e-5);
}

TEST_CASE("attention rows are distributions over every token") {
  const auto cfg = small_config();
  const auto model = GivTransformer::create(cfg, 12);
  Rng rng = derive_rng(13, {});
  const auto q = small_record(cfg, 2, 2, rng);
  const auto bundle = build_bundle(q.target, q);
  ForwardTrace trace;
  {
    ag::NoTapeScope no_tape;
    model.forward(bundle, 10, &trace);
  }
  const std::int64_t tokens = static_cast<std::int64_t>(q.prompt.size()) + (2 + 2) * 6;
  REQUIRE(trace.attention.size() == static_cast<std::size_t>(cfg.depth * cfg.heads));
  for (const auto& p : trace.attention) {
    REQUIRE(p.shape() == ag::Shape{tokens, tokens});
    for (std::int64_t r = 0; r < tokens; ++r) {
      double s = 0.0;
      for (std::int64_t k = 0; k < tokens; ++k) {
        const float v = p.data()[static_cast<std::size_t>(r * tokens + k)];
        CHECK(v >= 0.0f);
        s += v;
      }
      CHECK(std::fabs(s - 1.0) < 1e-5);
    }
  }
}

TEST_CASE("input limits") {
  const auto cfg = small_config();
  const auto model = GivTransformer::create(cfg, 14);
  Rng rng = derive_rng(15, {});
  auto q = small_record(cfg, 0, 2, rng);
  q.prompt = tokenize("a very long prompt");
  CHECK_THROWS_AS(model.predict(build_bundle(q.target, q), 5), ContractError);

  const auto long_video = small_record(cfg, 0, 5, rng);
  CHECK_THROWS_AS(model.predict(build_bundle(long_video.target, long_video), 5), ContractError);

  ConditionBundle wrong{LatentBlock(2, 4, 2, 3), {}, 0, {}};
  CHECK_THROWS_AS(model.predict(wrong, 5), ShapeError);

  ModelConfig bad = cfg;
  bad.heads = 3;
  CHECK_THROWS_AS(GivTransformer::create(bad, 1), ContractError);
}

TEST_CASE("state round trip and seeding") {
  const auto cfg = small_config();
  const auto model = GivTransformer::create(cfg, 16);
  const auto copy = GivTransformer::from_state(model.state());
  CHECK(copy.config() == cfg);
  CHECK(copy.expanded());
  Rng rng = derive_rng(17, {});
  const auto q = small_record(cfg, 1, 2, rng);
  const auto bundle = build_bundle(q.target, q);
  CHECK(copy.predict(bundle, 77) == model.predict(bundle, 77));
  CHECK(GivTransformer::create(cfg, 16).predict(bundle, 77) == model.predict(bundle, 77));
  CHECK_FALSE(GivTransformer::create(cfg, 18).predict(bundle, 77) == model.predict(bundle, 77));
  CHECK(model_config_from_record(model_config_record(cfg)) == cfg);
}

TEST_CASE("timestep features") {
  const auto a = timestep_features(10, 16), b = timestep_features(11, 16);
  CHECK(a.size() == 16);
  CHECK(a != b);
  CHECK(timestep_features(10, 16) == a);
}

}  // TEST_SUITE
