#include "giv/video_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "giv/error.hpp"

namespace giv {

namespace {

constexpr char kMagic[] = "GIVVID1";
constexpr std::size_t kMagicLen = 7;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return v;
}

std::string frame_name(std::int64_t f, bool color) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%04lld.%s", static_cast<long long>(f),
                color ? "ppm" : "pgm");
  return buf;
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing " + path.string());
}

std::string encode_video(const Video& video) {
  std::string out(kMagic, kMagicLen);
  put_u64(out, static_cast<std::uint64_t>(video.frames));
  put_u64(out, static_cast<std::uint64_t>(video.channels));
  put_u64(out, static_cast<std::uint64_t>(video.height));
  put_u64(out, static_cast<std::uint64_t>(video.width));
  out.reserve(out.size() + video.data.size() * 4);
  for (float v : video.data) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  return out;
}

Video decode_video(const std::string& bytes) {
  if (bytes.size() < kMagicLen + 32 || bytes.compare(0, kMagicLen, kMagic) != 0) {
    throw IoError("not a GIVVID1 video");
  }
  std::int64_t dims[4];
  for (int i = 0; i < 4; ++i) {
    const auto d = get_u64(bytes, kMagicLen + 8 * static_cast<std::size_t>(i));
    if (d == 0 || d > (1u << 20)) throw IoError("GIVVID1 has implausible dimension");
    dims[i] = static_cast<std::int64_t>(d);
  }
  Video video(dims[0], dims[1], dims[2], dims[3]);
  const std::size_t body = kMagicLen + 32;
  if (bytes.size() != body + video.data.size() * 4) {
    throw IoError("GIVVID1 payload size does not match its dimensions");
  }
  for (std::size_t i = 0; i < video.data.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[body + 4 * i + b]))
              << (8 * b);
    }
    video.data[i] = std::bit_cast<float>(bits);
  }
  return video;
}

void write_video(const std::filesystem::path& path, const Video& video) {
  write_file(path, encode_video(video));
}

Video read_video(const std::filesystem::path& path) { return decode_video(read_file(path)); }

void write_frames(const std::filesystem::path& dir, const Video& video) {
  if (video.channels != 1 && video.channels != 3) {
    throw ShapeError("write_frames: need 1 or 3 channels");
  }
  std::filesystem::create_directories(dir);
  const bool color = video.channels == 3;
  for (std::int64_t f = 0; f < video.frames; ++f) {
    std::string out = (color ? "P6\n" : "P5\n") + std::to_string(video.width) + " " +
                      std::to_string(video.height) + "\n255\n";
    for (std::int64_t y = 0; y < video.height; ++y) {
      for (std::int64_t x = 0; x < video.width; ++x) {
        for (std::int64_t c = 0; c < video.channels; ++c) {
          const float v = std::clamp(video.at(f, c, y, x), 0.0f, 1.0f);
          out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
        }
      }
    }
    write_file(dir / frame_name(f, color), out);
  }
}

Video read_frames(const std::filesystem::path& dir) {
  std::vector<std::string> frames;
  for (std::int64_t f = 0;; ++f) {
    if (std::filesystem::exists(dir / frame_name(f, true))) {
      frames.push_back(read_file(dir / frame_name(f, true)));
    } else if (std::filesystem::exists(dir / frame_name(f, false))) {
      frames.push_back(read_file(dir / frame_name(f, false)));
    } else {
      break;
    }
  }
  if (frames.empty()) throw IoError("no frames found in " + dir.string());
  Video video;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    std::istringstream is(frames[f]);
    std::string magic;
    std::int64_t w = 0, h = 0, maxval = 0;
    is >> magic >> w >> h >> maxval;
    is.get();
    if ((magic != "P6" && magic != "P5") || maxval != 255 || w <= 0 || h <= 0) {
      throw IoError("unsupported frame header in " + dir.string());
    }
    const std::int64_t ch = magic == "P6" ? 3 : 1;
    if (f == 0) video = Video(static_cast<std::int64_t>(frames.size()), ch, h, w);
    if (video.channels != ch || video.height != h || video.width != w) {
      throw IoError("frame dimensions differ inside " + dir.string());
    }
    const auto offset = static_cast<std::size_t>(is.tellg());
    if (frames[f].size() < offset + static_cast<std::size_t>(w * h * ch)) {
      throw IoError("truncated frame in " + dir.string());
    }
    std::size_t k = offset;
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        for (std::int64_t c = 0; c < ch; ++c) {
          video.at(static_cast<std::int64_t>(f), c, y, x) =
              static_cast<float>(static_cast<unsigned char>(frames[f][k++])) / 255.0f;
        }
      }
    }
  }
  return video;
}

}  // namespace giv
