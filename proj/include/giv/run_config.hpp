#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "giv/codec.hpp"
#include "giv/conditioning.hpp"
#include "giv/diffusion.hpp"
#include "giv/model.hpp"
#include "giv/sampler.hpp"

namespace giv {

struct AdamWConfig {
  double lr = 5e-6;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

struct RunConfig {
  std::int64_t frames = 9;
  std::int64_t height = 32;
  std::int64_t width = 32;
  CodecConfig codec = CodecConfig::lossless(2, 2);
  ModelConfig model;
  int schedule_steps = 1000;
  ScheduleKind schedule_kind = ScheduleKind::kScaledLinear;
  AdamWConfig optimizer;
  DropoutPolicy dropout;
  GuidanceConfig guidance;
  int batch_size = 4;
  int max_steps = 2000;
  int checkpoint_every = 500;
  std::optional<std::uint64_t> seed;  // mandatory at run start
  std::uint64_t model_seed = 1;
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;

  // Keeps the model's latent grid and channel count in line with the codec
  // and video dimensions.
  void derive_model_shape();
  void validate() const;
  std::uint64_t require_seed() const;
};

// UTF-8 key = value text with [section] headers. Unknown keys are errors.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string format_run_config(const RunConfig& cfg);

}  // namespace giv
