#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "giv/tensor.hpp"

namespace giv {

// One named f32 array inside a checkpoint file.
struct NamedArray {
  std::string name;
  ag::Shape shape;
  std::vector<float> data;
};

// Layout: magic "GIVCKPT1", then records until EOF. Each record is
// u64 name length, name bytes, u64 rank, rank x u64 dims, f32 data.
// All integers and floats are little-endian.
std::string encode_checkpoint(const std::vector<NamedArray>& records);
std::vector<NamedArray> decode_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& records);
std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path);

const NamedArray& find_record(const std::vector<NamedArray>& records, const std::string& name);

}  // namespace giv
