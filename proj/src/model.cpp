#include "giv/model.hpp"

#include <cmath>
#include <numeric>

#include "giv/error.hpp"
#include "giv/ops.hpp"
#include "giv/rng.hpp"

namespace giv {

namespace {

constexpr float kInitStd = 0.02f;
constexpr float kLnEps = 1e-5f;
constexpr char kConfigRecord[] = "manifest/model_config";

ag::Tensor normal_param(ag::Shape shape, Rng& rng) {
  std::normal_distribution<float> normal(0.0f, kInitStd);
  std::vector<float> v(static_cast<std::size_t>(ag::shape_numel(shape)));
  for (auto& x : v) x = normal(rng);
  return ag::Tensor(std::move(shape), std::move(v), true);
}

ag::Tensor const_param(ag::Shape shape, float value) {
  return ag::Tensor::full(std::move(shape), value, true);
}

Linear make_linear(std::int64_t in, std::int64_t out, Rng& rng) {
  return {normal_param({in, out}, rng), const_param({out}, 0.0f)};
}

}  // namespace

void ModelConfig::validate() const {
  if (depth < 1) throw ContractError("model depth must be >= 1");
  if (width < 1 || heads < 1 || width % heads != 0) {
    throw ContractError("model width must be divisible by heads");
  }
  if (latent_channels < 1 || latent_height < 1 || latent_width < 1 || max_video_frames < 1 ||
      vocab_size < 1 || max_prompt_tokens < 1 || ffn_multiplier < 1) {
    throw ContractError("model dimensions must be positive");
  }
}

ag::Tensor Linear::operator()(const ag::Tensor& x) const {
  return ag::add_row(ag::matmul(x, weight), bias);
}

Linear expand_input_layer(const Linear& base) {
  const auto c = base.in_features(), d = base.out_features();
  std::vector<float> w(static_cast<std::size_t>(2 * c * d), 0.0f);
  std::copy(base.weight.data().begin(), base.weight.data().end(), w.begin());
  return {ag::Tensor({2 * c, d}, std::move(w), true),
          ag::Tensor(base.bias.shape(),
                     std::vector<float>(base.bias.data().begin(), base.bias.data().end()), true)};
}

ag::Tensor latent_tokens(const LatentBlock& z) {
  const auto plane = z.plane();
  const auto rows = z.frames * plane;
  std::vector<float> out(static_cast<std::size_t>(rows * z.channels));
  for (std::int64_t f = 0; f < z.frames; ++f) {
    for (std::int64_t c = 0; c < z.channels; ++c) {
      const float* src = z.data.data() + (f * z.channels + c) * plane;
      for (std::int64_t p = 0; p < plane; ++p) out[(f * plane + p) * z.channels + c] = src[p];
    }
  }
  return ag::Tensor({rows, z.channels}, std::move(out));
}

LatentBlock tokens_to_latent(std::span<const float> tokens, std::int64_t f, std::int64_t c,
                             std::int64_t h, std::int64_t w) {
  LatentBlock out(f, c, h, w);
  const auto plane = h * w;
  for (std::int64_t fr = 0; fr < f; ++fr) {
    for (std::int64_t p = 0; p < plane; ++p) {
      for (std::int64_t ch = 0; ch < c; ++ch) {
        out.data[static_cast<std::size_t>((fr * c + ch) * plane + p)] =
            tokens[static_cast<std::size_t>((fr * plane + p) * c + ch)];
      }
    }
  }
  return out;
}

std::vector<float> timestep_features(int t, std::int64_t dim) {
  std::vector<float> out(static_cast<std::size_t>(dim), 0.0f);
  const auto half = dim / 2;
  for (std::int64_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                 static_cast<double>(half));
    out[static_cast<std::size_t>(i)] = static_cast<float>(std::sin(t * freq));
    out[static_cast<std::size_t>(half + i)] = static_cast<float>(std::cos(t * freq));
  }
  return out;
}

GivTransformer GivTransformer::create_base(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  GivTransformer m(cfg);
  Rng rng = derive_rng(seed, {0x6d6f64656cULL});
  const auto d = cfg.width, c = cfg.latent_channels;
  m.input_ = make_linear(c, d, rng);
  m.frame_pos_ = normal_param({cfg.max_video_frames, d}, rng);
  m.reference_pos_ = normal_param({1, d}, rng);
  m.spatial_pos_ = normal_param({cfg.latent_height * cfg.latent_width, d}, rng);
  m.token_embed_ = normal_param({cfg.vocab_size, d}, rng);
  m.prompt_pos_ = normal_param({cfg.max_prompt_tokens, d}, rng);
  m.time_fc1_ = make_linear(d, d, rng);
  m.time_fc2_ = make_linear(d, d, rng);
  for (std::int64_t i = 0; i < cfg.depth; ++i) {
    Block b;
    b.ln1_gain = const_param({d}, 1.0f);
    b.ln1_bias = const_param({d}, 0.0f);
    b.qkv = normal_param({d, 3 * d}, rng);
    b.out = make_linear(d, d, rng);
    b.ln2_gain = const_param({d}, 1.0f);
    b.ln2_bias = const_param({d}, 0.0f);
    b.fc1 = make_linear(d, cfg.ffn_multiplier * d, rng);
    b.fc2 = make_linear(cfg.ffn_multiplier * d, d, rng);
    m.blocks_.push_back(std::move(b));
  }
  m.final_gain_ = const_param({d}, 1.0f);
  m.final_bias_ = const_param({d}, 0.0f);
  m.output_ = make_linear(d, c, rng);
  return m;
}

GivTransformer GivTransformer::create(const ModelConfig& cfg, std::uint64_t seed) {
  auto m = create_base(cfg, seed);
  m.expand();
  return m;
}

void GivTransformer::expand() {
  if (expanded()) throw ContractError("input layer already expanded");
  input_ = expand_input_layer(input_);
}

ag::Tensor GivTransformer::attention(const Block& block, const ag::Tensor& x,
                                     ForwardTrace* trace) const {
  const auto heads_out = ag::multi_head_attention(
      ag::matmul(x, block.qkv), cfg_.heads, trace != nullptr ? &trace->attention : nullptr);
  return block.out(heads_out);
}

ag::Tensor GivTransformer::forward(const ConditionBundle& bundle, int t,
                                   ForwardTrace* trace) const {
  const auto& z = bundle.z_input;
  const auto n = bundle.reference_count;
  if (z.channels != input_.in_features() || z.height != cfg_.latent_height ||
      z.width != cfg_.latent_width) {
    throw ShapeError("model input has channels/h/w " + std::to_string(z.channels) + "/" +
                     std::to_string(z.height) + "/" + std::to_string(z.width) +
                     ", model expects " + std::to_string(input_.in_features()) + "/" +
                     std::to_string(cfg_.latent_height) + "/" + std::to_string(cfg_.latent_width));
  }
  return forward_tokens(latent_tokens(z), bundle.prompt, n, t, trace);
}

ag::Tensor GivTransformer::forward_tokens(const ag::Tensor& tokens, const Tokens& prompt,
                                          std::int64_t n, int t, ForwardTrace* trace) const {
  const auto d = cfg_.width;
  const auto plane = cfg_.latent_height * cfg_.latent_width;
  if (tokens.rank() != 2 || tokens.dim(1) != input_.in_features() || tokens.dim(0) % plane != 0) {
    throw ShapeError("latent tokens " + ag::shape_str(tokens.shape()) + " do not fit a " +
                     std::to_string(plane) + "-cell grid with " +
                     std::to_string(input_.in_features()) + " channels");
  }
  const auto f = tokens.dim(0) / plane - n;
  if (n < 0 || f < 1) throw ContractError("model input must contain at least one video frame");
  if (f > cfg_.max_video_frames) {
    throw ContractError("model input has " + std::to_string(f) + " video frames, model supports " +
                        std::to_string(cfg_.max_video_frames));
  }
  const auto prompt_len = static_cast<std::int64_t>(prompt.size());
  if (prompt_len > cfg_.max_prompt_tokens) {
    throw ContractError("prompt has " + std::to_string(prompt_len) + " tokens, limit is " +
                        std::to_string(cfg_.max_prompt_tokens));
  }

  auto h_lat = input_(tokens);
  if (cfg_.positional_encoding) {
    std::vector<ag::Tensor> frame_parts;
    if (n > 0) {
      std::vector<std::int64_t> zeros(static_cast<std::size_t>(n * plane), 0);
      frame_parts.push_back(ag::gather_rows(reference_pos_, zeros));
    }
    std::vector<std::int64_t> frame_idx;
    frame_idx.reserve(static_cast<std::size_t>(f * plane));
    for (std::int64_t fr = 0; fr < f; ++fr) frame_idx.insert(frame_idx.end(), plane, fr);
    frame_parts.push_back(ag::gather_rows(frame_pos_, frame_idx));
    std::vector<std::int64_t> cell_idx(static_cast<std::size_t>((n + f) * plane));
    for (std::size_t i = 0; i < cell_idx.size(); ++i) {
      cell_idx[i] = static_cast<std::int64_t>(i) % plane;
    }
    h_lat = ag::add(h_lat, ag::concat_rows(frame_parts));
    h_lat = ag::add(h_lat, ag::gather_rows(spatial_pos_, cell_idx));
  }
  const ag::Tensor t_in({1, d}, timestep_features(t, d));
  const auto temb = time_fc2_(ag::silu(time_fc1_(t_in)));
  h_lat = ag::add_row(h_lat, temb);

  ag::Tensor h = h_lat;
  if (prompt_len > 0) {
    std::vector<std::int64_t> tok(prompt.begin(), prompt.end());
    std::vector<std::int64_t> pos(tok.size());
    std::iota(pos.begin(), pos.end(), 0);
    auto p = ag::add(ag::gather_rows(token_embed_, tok), ag::gather_rows(prompt_pos_, pos));
    const ag::Tensor parts[] = {p, h_lat};
    h = ag::concat_rows(parts);
  }

  for (const auto& block : blocks_) {
    h = ag::add(h, attention(block, ag::layer_norm(h, block.ln1_gain, block.ln1_bias, kLnEps),
                             trace));
    auto ff = block.fc2(ag::gelu(block.fc1(ag::layer_norm(h, block.ln2_gain, block.ln2_bias,
                                                          kLnEps))));
    h = ag::add(h, ff);
  }
  h = ag::layer_norm(h, final_gain_, final_bias_, kLnEps);
  const auto first_video = prompt_len + n * plane;
  return output_(ag::slice_rows(h, first_video, first_video + f * plane));
}

LatentBlock GivTransformer::predict(const ConditionBundle& bundle, int t) const {
  ag::NoTapeScope no_tape;
  const auto out = forward(bundle, t);
  return tokens_to_latent(out.data(), bundle.video_frames(), cfg_.latent_channels,
                          cfg_.latent_height, cfg_.latent_width);
}

std::vector<std::pair<std::string, ag::Tensor>> GivTransformer::named_parameters() const {
  std::vector<std::pair<std::string, ag::Tensor>> out;
  out.emplace_back("input.weight", input_.weight);
  out.emplace_back("input.bias", input_.bias);
  out.emplace_back("pos.frame", frame_pos_);
  out.emplace_back("pos.reference", reference_pos_);
  out.emplace_back("pos.spatial", spatial_pos_);
  out.emplace_back("prompt.embed", token_embed_);
  out.emplace_back("prompt.pos", prompt_pos_);
  out.emplace_back("time.fc1.weight", time_fc1_.weight);
  out.emplace_back("time.fc1.bias", time_fc1_.bias);
  out.emplace_back("time.fc2.weight", time_fc2_.weight);
  out.emplace_back("time.fc2.bias", time_fc2_.bias);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto p = "blocks." + std::to_string(i) + ".";
    const auto& b = blocks_[i];
    out.emplace_back(p + "ln1.gain", b.ln1_gain);
    out.emplace_back(p + "ln1.bias", b.ln1_bias);
    out.emplace_back(p + "attn.qkv.weight", b.qkv);
    out.emplace_back(p + "attn.out.weight", b.out.weight);
    out.emplace_back(p + "attn.out.bias", b.out.bias);
    out.emplace_back(p + "ln2.gain", b.ln2_gain);
    out.emplace_back(p + "ln2.bias", b.ln2_bias);
    out.emplace_back(p + "ffn.fc1.weight", b.fc1.weight);
    out.emplace_back(p + "ffn.fc1.bias", b.fc1.bias);
    out.emplace_back(p + "ffn.fc2.weight", b.fc2.weight);
    out.emplace_back(p + "ffn.fc2.bias", b.fc2.bias);
  }
  out.emplace_back("final.gain", final_gain_);
  out.emplace_back("final.bias", final_bias_);
  out.emplace_back("output.weight", output_.weight);
  out.emplace_back("output.bias", output_.bias);
  return out;
}

std::int64_t GivTransformer::parameter_count() const {
  std::int64_t total = 0;
  for (const auto& [name, t] : named_parameters()) total += t.numel();
  return total;
}

std::vector<float> model_config_record(const ModelConfig& cfg) {
  return {static_cast<float>(cfg.latent_channels),   static_cast<float>(cfg.depth),
          static_cast<float>(cfg.width),             static_cast<float>(cfg.heads),
          static_cast<float>(cfg.max_prompt_tokens), static_cast<float>(cfg.vocab_size),
          static_cast<float>(cfg.latent_height),     static_cast<float>(cfg.latent_width),
          static_cast<float>(cfg.max_video_frames),  static_cast<float>(cfg.ffn_multiplier),
          cfg.positional_encoding ? 1.0f : 0.0f};
}

ModelConfig model_config_from_record(const std::vector<float>& v) {
  if (v.size() != 11) throw IoError("model manifest has unexpected length");
  auto i = [&](std::size_t k) { return static_cast<std::int64_t>(v[k]); };
  ModelConfig cfg;
  cfg.latent_channels = i(0);
  cfg.depth = i(1);
  cfg.width = i(2);
  cfg.heads = i(3);
  cfg.max_prompt_tokens = i(4);
  cfg.vocab_size = i(5);
  cfg.latent_height = i(6);
  cfg.latent_width = i(7);
  cfg.max_video_frames = i(8);
  cfg.ffn_multiplier = i(9);
  cfg.positional_encoding = v[10] != 0.0f;
  cfg.validate();
  return cfg;
}

std::vector<NamedArray> GivTransformer::state() const {
  std::vector<NamedArray> out;
  const auto manifest = model_config_record(cfg_);
  out.push_back({kConfigRecord, {static_cast<std::int64_t>(manifest.size())}, manifest});
  for (const auto& [name, t] : named_parameters()) {
    out.push_back({"param/" + name, t.shape(), std::vector<float>(t.data().begin(), t.data().end())});
  }
  return out;
}

GivTransformer GivTransformer::from_state(const std::vector<NamedArray>& records) {
  const auto cfg = model_config_from_record(find_record(records, kConfigRecord).data);
  auto m = create(cfg, 0);
  for (auto& [name, t] : m.named_parameters()) {
    const auto& r = find_record(records, "param/" + name);
    if (r.shape != t.shape()) {
      throw ShapeError("checkpoint parameter '" + name + "' has shape " + ag::shape_str(r.shape) +
                       ", model expects " + ag::shape_str(t.shape()));
    }
    auto dst = ag::Tensor(t).mutable_data();
    std::copy(r.data.begin(), r.data.end(), dst.begin());
  }
  return m;
}

}  // namespace giv
