#include "giv/codec.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <random>

#include "giv/error.hpp"

namespace giv {

namespace {

// Orthonormal rows (c x P), deterministic in the seed.
Eigen::MatrixXf projection_matrix(const CodecConfig& cfg) {
  const auto packed = cfg.packed_channels();
  std::mt19937_64 rng(cfg.projection_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(packed, cfg.channels);
  for (Eigen::Index j = 0; j < g.cols(); ++j) {
    for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = normal(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(packed, cfg.channels);
  return q.transpose().cast<float>();
}

std::int64_t packed_index(std::int64_t dt, std::int64_t ch, std::int64_t dy, std::int64_t dx,
                          std::int64_t s) {
  return ((dt * 3 + ch) * s + dy) * s + dx;
}

std::int64_t source_frame(std::int64_t latent_frame, std::int64_t dt, std::int64_t t) {
  return latent_frame == 0 ? 0 : 1 + (latent_frame - 1) * t + dt;
}

}  // namespace

CodecConfig CodecConfig::lossless(std::int64_t spatial, std::int64_t temporal) {
  CodecConfig cfg;
  cfg.spatial_factor = spatial;
  cfg.temporal_factor = temporal;
  cfg.channels = 3 * spatial * spatial * temporal;
  cfg.mode = CodecMode::kLosslessPacking;
  return cfg;
}

CodecConfig CodecConfig::projected_reference() {
  CodecConfig cfg;
  cfg.spatial_factor = 8;
  cfg.temporal_factor = 4;
  cfg.channels = 16;
  cfg.mode = CodecMode::kProjected;
  return cfg;
}

std::string codec_mode_name(CodecMode mode) {
  return mode == CodecMode::kLosslessPacking ? "lossless" : "projected";
}

void validate_codec(const CodecConfig& cfg) {
  if (cfg.spatial_factor < 1 || cfg.temporal_factor < 1 || cfg.channels < 1) {
    throw ShapeError("codec factors and channels must be positive");
  }
  if (cfg.mode == CodecMode::kLosslessPacking && cfg.channels != cfg.packed_channels()) {
    throw ShapeError("lossless packing needs channels = 3*s^2*t = " +
                     std::to_string(cfg.packed_channels()) + ", got " +
                     std::to_string(cfg.channels));
  }
  if (cfg.mode == CodecMode::kProjected && cfg.channels > cfg.packed_channels()) {
    throw ShapeError("projected codec cannot have more channels than the packing");
  }
}

LatentShape latent_shape(std::int64_t frames, std::int64_t height, std::int64_t width,
                         const CodecConfig& cfg) {
  validate_codec(cfg);
  if (frames < 1) throw ShapeError("frames axis: need at least one frame");
  if ((frames - 1) % cfg.temporal_factor != 0) {
    throw ShapeError("frames axis: F-1 = " + std::to_string(frames - 1) +
                     " is not divisible by temporal factor " +
                     std::to_string(cfg.temporal_factor));
  }
  if (height < 1 || height % cfg.spatial_factor != 0) {
    throw ShapeError("height axis: " + std::to_string(height) +
                     " is not divisible by spatial factor " + std::to_string(cfg.spatial_factor));
  }
  if (width < 1 || width % cfg.spatial_factor != 0) {
    throw ShapeError("width axis: " + std::to_string(width) +
                     " is not divisible by spatial factor " + std::to_string(cfg.spatial_factor));
  }
  const auto t = cfg.temporal_factor;
  return {(frames - 1 + t - 1) / t + 1, cfg.channels, height / cfg.spatial_factor,
          width / cfg.spatial_factor};
}

LatentBlock encode(const Video& video, const CodecConfig& cfg) {
  if (video.channels != 3) {
    throw ShapeError("encode: expected 3 channels, got " + std::to_string(video.channels));
  }
  const auto shape = latent_shape(video.frames, video.height, video.width, cfg);
  const auto s = cfg.spatial_factor, t = cfg.temporal_factor;
  const auto packed = cfg.packed_channels();
  LatentBlock packed_block(shape.frames, packed, shape.height, shape.width);
  for (std::int64_t lf = 0; lf < shape.frames; ++lf) {
    for (std::int64_t dt = 0; dt < t; ++dt) {
      const auto src = source_frame(lf, dt, t);
      for (std::int64_t ch = 0; ch < 3; ++ch) {
        for (std::int64_t y = 0; y < video.height; ++y) {
          for (std::int64_t x = 0; x < video.width; ++x) {
            const auto p = packed_index(dt, ch, y % s, x % s, s);
            packed_block.at(lf, p, y / s, x / s) = 2.0f * video.at(src, ch, y, x) - 1.0f;
          }
        }
      }
    }
  }
  if (cfg.mode == CodecMode::kLosslessPacking) return packed_block;

  const auto proj = projection_matrix(cfg);
  LatentBlock out(shape.frames, shape.channels, shape.height, shape.width);
  const auto plane = shape.height * shape.width;
  for (std::int64_t lf = 0; lf < shape.frames; ++lf) {
    Eigen::Map<const Eigen::Matrix<float, -1, -1, Eigen::RowMajor>> src(
        packed_block.data.data() + lf * packed * plane, packed, plane);
    Eigen::Map<Eigen::Matrix<float, -1, -1, Eigen::RowMajor>> dst(
        out.data.data() + lf * shape.channels * plane, shape.channels, plane);
    dst.noalias() = proj * src;
  }
  return out;
}

Video decode(const LatentBlock& latent, const CodecConfig& cfg) {
  validate_codec(cfg);
  if (latent.channels != cfg.channels) {
    throw ShapeError("decode: latent has " + std::to_string(latent.channels) +
                     " channels, codec expects " + std::to_string(cfg.channels));
  }
  if (latent.frames < 1) throw ShapeError("decode: latent has no frames");
  const auto s = cfg.spatial_factor, t = cfg.temporal_factor;
  const auto packed = cfg.packed_channels();
  const auto plane = latent.plane();

  LatentBlock packed_block;
  if (cfg.mode == CodecMode::kLosslessPacking) {
    packed_block = latent;
  } else {
    const auto proj = projection_matrix(cfg);
    packed_block = LatentBlock(latent.frames, packed, latent.height, latent.width);
    for (std::int64_t lf = 0; lf < latent.frames; ++lf) {
      Eigen::Map<const Eigen::Matrix<float, -1, -1, Eigen::RowMajor>> src(
          latent.data.data() + lf * cfg.channels * plane, cfg.channels, plane);
      Eigen::Map<Eigen::Matrix<float, -1, -1, Eigen::RowMajor>> dst(
          packed_block.data.data() + lf * packed * plane, packed, plane);
      dst.noalias() = proj.transpose() * src;
    }
  }

  const auto frames = (latent.frames - 1) * t + 1;
  Video video(frames, 3, latent.height * s, latent.width * s);
  for (std::int64_t lf = 0; lf < latent.frames; ++lf) {
    const auto group = lf == 0 ? 1 : t;
    for (std::int64_t dt = 0; dt < group; ++dt) {
      const auto dst = source_frame(lf, dt, t);
      for (std::int64_t ch = 0; ch < 3; ++ch) {
        for (std::int64_t y = 0; y < video.height; ++y) {
          for (std::int64_t x = 0; x < video.width; ++x) {
            const auto p = packed_index(dt, ch, y % s, x % s, s);
            const float v = (packed_block.at(lf, p, y / s, x / s) + 1.0f) * 0.5f;
            video.at(dst, ch, y, x) = std::clamp(v, 0.0f, 1.0f);
          }
        }
      }
    }
  }
  return video;
}

}  // namespace giv
