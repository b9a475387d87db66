#pragma once

#include <cstdint>
#include <vector>

namespace giv {

// Dense (frames x channels x height x width) f32 array, row-major.
struct Array4 {
  std::int64_t frames = 0;
  std::int64_t channels = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<float> data;

  Array4() = default;
  Array4(std::int64_t f, std::int64_t c, std::int64_t h, std::int64_t w, float fill = 0.0f)
      : frames(f), channels(c), height(h), width(w),
        data(static_cast<std::size_t>(f * c * h * w), fill) {}

  std::int64_t size() const { return frames * channels * height * width; }
  std::int64_t plane() const { return height * width; }
  std::int64_t frame_stride() const { return channels * height * width; }

  std::int64_t index(std::int64_t f, std::int64_t c, std::int64_t y, std::int64_t x) const {
    return ((f * channels + c) * height + y) * width + x;
  }
  float& at(std::int64_t f, std::int64_t c, std::int64_t y, std::int64_t x) {
    return data[static_cast<std::size_t>(index(f, c, y, x))];
  }
  float at(std::int64_t f, std::int64_t c, std::int64_t y, std::int64_t x) const {
    return data[static_cast<std::size_t>(index(f, c, y, x))];
  }

  bool same_dims(const Array4& o) const {
    return frames == o.frames && channels == o.channels && height == o.height && width == o.width;
  }
  friend bool operator==(const Array4&, const Array4&) = default;
};

// Pixel video (channels 3) or mask sequence (channels 1), values in [0, 1].
struct Video : Array4 {
  using Array4::Array4;
};

// Latent array produced by the codec: (f x c x h x w).
struct LatentBlock : Array4 {
  using Array4::Array4;
};

}  // namespace giv
