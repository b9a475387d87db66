#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "giv/checkpoint.hpp"
#include "giv/conditioning.hpp"
#include "giv/tensor.hpp"

namespace giv {

struct ModelConfig {
  std::int64_t latent_channels = 24;
  std::int64_t depth = 4;
  std::int64_t width = 128;
  std::int64_t heads = 4;
  std::int64_t max_prompt_tokens = 32;
  std::int64_t vocab_size = 256;
  std::int64_t latent_height = 16;
  std::int64_t latent_width = 16;
  std::int64_t max_video_frames = 16;
  std::int64_t ffn_multiplier = 4;
  bool positional_encoding = true;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// x * weight + bias, weight stored (in x out).
struct Linear {
  ag::Tensor weight;
  ag::Tensor bias;

  std::int64_t in_features() const { return weight.dim(0); }
  std::int64_t out_features() const { return weight.dim(1); }
  ag::Tensor operator()(const ag::Tensor& x) const;
};

// Widens a (c -> d) input projection to (2c -> d): the first c input rows
// are copied, the added c rows are exactly zero, the bias is copied.
Linear expand_input_layer(const Linear& base);

// Optional capture of intermediate values for tests.
struct ForwardTrace {
  std::vector<ag::Tensor> attention;  // one [N x N] per layer and head
};

// Diffusion transformer with full attention over prompt tokens plus every
// latent cell of the reference and video frames.
class GivTransformer {
 public:
  // Base text-to-video model: input projection takes c channels.
  static GivTransformer create_base(const ModelConfig& cfg, std::uint64_t seed);
  // Base model followed by expand_input_layer.
  static GivTransformer create(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  bool expanded() const { return input_.in_features() == 2 * cfg_.latent_channels; }
  void expand();

  // Epsilon prediction for the video frames as a [f*h*w x c] token matrix.
  // Records on the current tape when one is installed.
  ag::Tensor forward(const ConditionBundle& bundle, int t, ForwardTrace* trace = nullptr) const;

  // forward() on a token matrix from latent_tokens(z_input), for callers
  // that need gradients with respect to the input itself.
  ag::Tensor forward_tokens(const ag::Tensor& tokens, const Tokens& prompt,
                            std::int64_t reference_count, int t,
                            ForwardTrace* trace = nullptr) const;

  // Inference-mode forward, reshaped to f x c x h x w.
  LatentBlock predict(const ConditionBundle& bundle, int t) const;

  const Linear& input_projection() const { return input_; }
  std::vector<std::pair<std::string, ag::Tensor>> named_parameters() const;
  std::int64_t parameter_count() const;

  std::vector<NamedArray> state() const;
  static GivTransformer from_state(const std::vector<NamedArray>& records);

 private:
  struct Block {
    ag::Tensor ln1_gain, ln1_bias;
    // No bias: a key bias shifts every score of a query equally, so its
    // gradient is identically zero.
    ag::Tensor qkv;
    Linear out;
    ag::Tensor ln2_gain, ln2_bias;
    Linear fc1, fc2;
  };

  explicit GivTransformer(const ModelConfig& cfg) : cfg_(cfg) {}
  ag::Tensor attention(const Block& block, const ag::Tensor& x, ForwardTrace* trace) const;

  ModelConfig cfg_;
  Linear input_;
  ag::Tensor frame_pos_;      // [max_video_frames x d]
  ag::Tensor reference_pos_;  // [1 x d]
  ag::Tensor spatial_pos_;    // [h*w x d]
  ag::Tensor token_embed_;    // [vocab x d]
  ag::Tensor prompt_pos_;     // [max_prompt_tokens x d]
  Linear time_fc1_, time_fc2_;
  std::vector<Block> blocks_;
  ag::Tensor final_gain_, final_bias_;
  Linear output_;
};

// Converts a bundle's z_input to the [(n+f)*h*w x 2c] token matrix.
ag::Tensor latent_tokens(const LatentBlock& z);
// [f*h*w x c] token matrix back to f x c x h x w.
LatentBlock tokens_to_latent(std::span<const float> tokens, std::int64_t f, std::int64_t c,
                             std::int64_t h, std::int64_t w);

std::vector<float> timestep_features(int t, std::int64_t dim);

std::vector<float> model_config_record(const ModelConfig& cfg);
ModelConfig model_config_from_record(const std::vector<float>& values);

}  // namespace giv
