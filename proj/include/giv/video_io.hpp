#pragma once

#include <filesystem>
#include <string>

#include "giv/array4.hpp"

namespace giv {

// GIVVID1 layout: magic "GIVVID1", then F, C, H, W as u64 little-endian,
// then F*C*H*W f32 little-endian values, frame-major.
std::string encode_video(const Video& video);
Video decode_video(const std::string& bytes);

void write_video(const std::filesystem::path& path, const Video& video);
Video read_video(const std::filesystem::path& path);

// One binary PPM (3 channels) or PGM (1 channel) per frame, named
// frame_0000.ppm etc. Values are quantized to 8 bits.
void write_frames(const std::filesystem::path& dir, const Video& video);
Video read_frames(const std::filesystem::path& dir);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace giv
