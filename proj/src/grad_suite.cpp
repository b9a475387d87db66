#include "giv/grad_suite.hpp"

#include <array>
#include <string>
#include <functional>

#include "giv/conditioning.hpp"
#include "giv/diffusion.hpp"
#include "giv/grad_check.hpp"
#include "giv/model.hpp"
#include "giv/ops.hpp"
#include "giv/rng.hpp"
#include "giv/trainer.hpp"

namespace giv {

namespace {

using ag::Tensor;

constexpr float kStep = 1e-3f;
constexpr double kPrimitiveTolerance = 1e-3;
constexpr double kModelTolerance = 1e-2;

Tensor uniform(ag::Shape shape, float lo, float hi, Rng& rng) {
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v(static_cast<std::size_t>(ag::shape_numel(shape)));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

// sum(op(x) * w) for a fixed random w shaped like op's output.
double weighted_check(const std::function<Tensor(const Tensor&)>& op, const Tensor& point,
                      Rng& rng) {
  Tensor w;
  {
    ag::NoTapeScope off;
    const auto y = op(point);
    w = uniform(y.shape(), 0.5f, 1.5f, rng);
  }
  return ag::grad_check([&](const Tensor& x) { return ag::sum(ag::mul(op(x), w)); }, point,
                        kStep);
}

double softmax_check(int axis, const Tensor& point) {
  const auto rows = point.dim(0), cols = point.dim(1);
  std::vector<float> w(static_cast<std::size_t>(rows * cols));
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t c = 0; c < cols; ++c) {
      const auto k = axis == 1 ? c : r;
      w[static_cast<std::size_t>(r * cols + c)] = (k % 2 == 0) ? 1.0f : -1.0f;
    }
  }
  const Tensor weights({rows, cols}, std::move(w));
  return ag::grad_check(
      [&](const Tensor& x) { return ag::sum(ag::mul(ag::softmax(x, axis), weights)); }, point,
      kStep);
}

}  // namespace

std::vector<GradCheckResult> primitive_grad_checks(std::uint64_t seed) {
  Rng rng = derive_rng(seed, {0x67726164});
  std::vector<GradCheckResult> out;
  auto add = [&](std::string name, double error) {
    out.push_back({std::move(name), error, kPrimitiveTolerance});
  };

  const auto b = uniform({4, 3}, -1.0f, 1.0f, rng);
  add("matmul/lhs", weighted_check([&](const Tensor& x) { return ag::matmul(x, b); },
                                   uniform({5, 4}, -1.0f, 1.0f, rng), rng));
  const auto a = uniform({5, 4}, -1.0f, 1.0f, rng);
  add("matmul/rhs", weighted_check([&](const Tensor& x) { return ag::matmul(a, x); },
                                   uniform({4, 3}, -1.0f, 1.0f, rng), rng));
  add("transpose", weighted_check([](const Tensor& x) { return ag::transpose(x); },
                                  uniform({3, 6}, -1.0f, 1.0f, rng), rng));
  const auto other = uniform({4, 5}, -1.0f, 1.0f, rng);
  add("add", weighted_check([&](const Tensor& x) { return ag::add(x, other); },
                            uniform({4, 5}, -1.0f, 1.0f, rng), rng));
  add("sub", weighted_check([&](const Tensor& x) { return ag::sub(other, x); },
                            uniform({4, 5}, -1.0f, 1.0f, rng), rng));
  add("mul", weighted_check([&](const Tensor& x) { return ag::mul(x, other); },
                            uniform({4, 5}, -1.0f, 1.0f, rng), rng));
  add("scale", weighted_check([](const Tensor& x) { return ag::scale(x, -2.5f); },
                              uniform({4, 5}, -1.0f, 1.0f, rng), rng));
  const auto row = uniform({5}, -1.0f, 1.0f, rng);
  add("add_row/matrix", weighted_check([&](const Tensor& x) { return ag::add_row(x, row); },
                                       uniform({4, 5}, -1.0f, 1.0f, rng), rng));
  add("add_row/row", weighted_check([&](const Tensor& x) { return ag::add_row(other, x); },
                                    uniform({5}, -1.0f, 1.0f, rng), rng));
  add("square", weighted_check([](const Tensor& x) { return ag::square(x); },
                               uniform({4, 5}, -1.0f, 1.0f, rng), rng));
  // Both activations have a stationary point below -0.7; stay clear of it.
  add("gelu", weighted_check([](const Tensor& x) { return ag::gelu(x); },
                             uniform({4, 5}, -0.5f, 2.0f, rng), rng));
  add("silu", weighted_check([](const Tensor& x) { return ag::silu(x); },
                             uniform({4, 5}, -0.5f, 2.0f, rng), rng));
  // The gradient of w . softmax(x) is s_i (w_i - E_s[w]); alternating +-1
  // weights keep every |w_i - E_s[w]| well above zero.
  add("softmax/last", softmax_check(1, uniform({4, 6}, -1.0f, 1.0f, rng)));
  add("softmax/first", softmax_check(0, uniform({6, 4}, -1.0f, 1.0f, rng)));
  const auto gain = uniform({6}, 0.5f, 1.5f, rng);
  const auto bias = uniform({6}, -0.5f, 0.5f, rng);
  const auto ln_x = uniform({4, 6}, -2.0f, 2.0f, rng);
  add("layer_norm/x",
      weighted_check([&](const Tensor& x) { return ag::layer_norm(x, gain, bias, 1e-5f); },
                     ln_x, rng));
  add("layer_norm/gain",
      weighted_check([&](const Tensor& g) { return ag::layer_norm(ln_x, g, bias, 1e-5f); },
                     gain, rng));
  add("layer_norm/bias",
      weighted_check([&](const Tensor& bb) { return ag::layer_norm(ln_x, gain, bb, 1e-5f); },
                     bias, rng));
  add("reshape", weighted_check([](const Tensor& x) { return ag::reshape(x, {2, 10}); },
                                uniform({4, 5}, -1.0f, 1.0f, rng), rng));
  add("slice_rows", weighted_check([](const Tensor& x) { return ag::slice_rows(x, 1, 3); },
                                   uniform({4, 5}, -1.0f, 1.0f, rng), rng));
  add("slice_cols", weighted_check([](const Tensor& x) { return ag::slice_cols(x, 2, 5); },
                                   uniform({4, 5}, -1.0f, 1.0f, rng), rng));
  const auto top = uniform({2, 5}, -1.0f, 1.0f, rng);
  add("concat_rows", weighted_check(
                         [&](const Tensor& x) {
                           const std::array<Tensor, 2> parts{top, x};
                           return ag::concat_rows(parts);
                         },
                         uniform({3, 5}, -1.0f, 1.0f, rng), rng));
  const auto left = uniform({4, 2}, -1.0f, 1.0f, rng);
  add("concat_cols", weighted_check(
                         [&](const Tensor& x) {
                           const std::array<Tensor, 2> parts{x, left};
                           return ag::concat_cols(parts);
                         },
                         uniform({4, 3}, -1.0f, 1.0f, rng), rng));
  const std::vector<std::int64_t> idx = {2, 0, 2, 5, 1};
  add("gather_rows", weighted_check([&](const Tensor& t) { return ag::gather_rows(t, idx); },
                                    uniform({6, 4}, -1.0f, 1.0f, rng), rng));
  add("sum", ag::grad_check([](const Tensor& x) { return ag::sum(x); },
                            uniform({4, 5}, -1.0f, 1.0f, rng), kStep));
  add("mean", ag::grad_check([](const Tensor& x) { return ag::mean(x); },
                             uniform({4, 5}, -1.0f, 1.0f, rng), kStep));
  const auto mse_x = uniform({4, 5}, -1.0f, 1.0f, rng);
  auto offsets = uniform({4, 5}, 0.5f, 1.0f, rng);
  {
    std::bernoulli_distribution flip(0.5);
    auto o = offsets.mutable_data();
    const auto xv = mse_x.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] + (flip(rng) ? o[i] : -o[i]);
  }
  add("mse", ag::grad_check([&](const Tensor& x) { return ag::mse(x, offsets); }, mse_x, kStep));
  add("multi_head_attention",
      weighted_check([](const Tensor& x) { return ag::multi_head_attention(x, 2); },
                     uniform({5, 12}, -1.5f, 1.5f, rng), rng));
  return out;
}

namespace {

struct ModelProbe {
  GivTransformer model;
  LatentQuintuple q;
  LatentBlock eps;
  NoiseSchedule sched;
  int t = 37;
};

// Width-8 model on a 2x2 latent grid with one reference and two video
// frames, moved to a random parameter point well away from the near-zero
// initialization so every block is in its nonlinear regime.
ModelProbe make_probe(std::uint64_t seed, std::int64_t depth) {
  ModelConfig cfg;
  cfg.latent_channels = 3;
  cfg.depth = depth;
  cfg.width = 8;
  cfg.heads = 2;
  cfg.max_prompt_tokens = 4;
  cfg.vocab_size = 16;
  cfg.latent_height = 2;
  cfg.latent_width = 2;
  cfg.max_video_frames = 2;
  cfg.ffn_multiplier = 2;
  ModelProbe p{GivTransformer::create(cfg, seed), {}, {}, make_schedule(100)};
  Rng rng = derive_rng(seed, {0x6d6f64656c});
  std::normal_distribution<float> normal(0.0f, 0.3f);
  for (auto& [name, t] : p.model.named_parameters()) {
    for (auto& v : t.mutable_data()) v = normal(rng);
  }
  p.q.prompt = {1, 5, 9};
  p.q.target = gaussian_block(2, 3, 2, 2, rng);
  p.q.condition = gaussian_block(2, 3, 2, 2, rng);
  p.q.references = gaussian_block(1, 3, 2, 2, rng);
  p.q.mask = Video(1, 1, 4, 4);
  for (std::size_t i = 0; i < p.q.mask.data.size(); ++i) {
    p.q.mask.data[i] = (i % 3 == 0) ? 1.0f : 0.0f;
  }
  p.eps = gaussian_block(2, 3, 2, 2, rng);
  return p;
}

}  // namespace

GradCheckResult model_grad_check(std::uint64_t seed, std::int64_t depth) {
  auto p = make_probe(seed, depth);
  std::vector<ag::Tensor> params;
  for (auto& [name, t] : p.model.named_parameters()) params.push_back(t);
  const double err = ag::grad_check_params(
      [&] { return diffusion_loss(p.model, p.q, p.t, p.eps, p.sched); }, params, kStep);
  return {"model/depth" + std::to_string(depth), err, kModelTolerance};
}

GradCheckResult model_input_grad_check(std::uint64_t seed, std::int64_t depth) {
  auto p = make_probe(seed, depth);
  const auto bundle = build_bundle(add_noise(p.q.target, p.eps, p.t, p.sched), p.q);
  const auto target = latent_tokens(p.eps);
  const double err = ag::grad_check(
      [&](const Tensor& x) {
        return ag::mse(p.model.forward_tokens(x, bundle.prompt, bundle.reference_count, p.t),
                       target);
      },
      latent_tokens(bundle.z_input), kStep);
  return {"model-input/depth" + std::to_string(depth), err, kPrimitiveTolerance};
}

}  // namespace giv
