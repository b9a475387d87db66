#pragma once

#include <cstdint>
#include <string>

#include "giv/array4.hpp"

namespace giv {

enum class CodecMode { kLosslessPacking, kProjected };

struct CodecConfig {
  std::int64_t spatial_factor = 2;
  std::int64_t temporal_factor = 2;
  std::int64_t channels = 24;
  CodecMode mode = CodecMode::kLosslessPacking;
  std::uint64_t projection_seed = 0x5eed;

  // Channel count of the raw space-to-depth packing: 3 * s^2 * t.
  std::int64_t packed_channels() const {
    return 3 * spatial_factor * spatial_factor * temporal_factor;
  }

  static CodecConfig lossless(std::int64_t spatial, std::int64_t temporal);
  // 8x spatial, 4x temporal, 16 channels via a fixed orthonormal projection.
  static CodecConfig projected_reference();

  friend bool operator==(const CodecConfig&, const CodecConfig&) = default;
};

struct LatentShape {
  std::int64_t frames;
  std::int64_t channels;
  std::int64_t height;
  std::int64_t width;
  friend bool operator==(const LatentShape&, const LatentShape&) = default;
};

// f = ceil((F-1)/t) + 1, h = H/s, w = W/s. Throws ShapeError naming the
// offending axis when F-1, H or W is not divisible by its factor.
LatentShape latent_shape(std::int64_t frames, std::int64_t height, std::int64_t width,
                         const CodecConfig& cfg);

void validate_codec(const CodecConfig& cfg);

// Frame 0 packs alone (replicated across the temporal group); each later
// group of t frames packs into one latent frame by space-to-depth, with
// pixel values mapped v -> 2v - 1.
//
// Lossless mode is bit-exact for pixel values on the 2^-24 grid, which
// covers every 8-bit-derived k/256 value.
LatentBlock encode(const Video& video, const CodecConfig& cfg);
Video decode(const LatentBlock& latent, const CodecConfig& cfg);

std::string codec_mode_name(CodecMode mode);

}  // namespace giv
