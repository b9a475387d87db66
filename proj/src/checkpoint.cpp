#include "giv/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "giv/error.hpp"

namespace giv {

namespace {

constexpr char kMagic[] = "GIVCKPT1";
constexpr std::size_t kMagicLen = 8;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  bool done() const { return pos_ == bytes_.size(); }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 8;
    return v;
  }

  float f32() {
    need(4);
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) {
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return std::bit_cast<float>(bits);
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError("checkpoint truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const std::vector<NamedArray>& records) {
  std::string out(kMagic, kMagicLen);
  for (const auto& r : records) {
    if (ag::shape_numel(r.shape) != static_cast<std::int64_t>(r.data.size())) {
      throw ShapeError("checkpoint record '" + r.name + "' has inconsistent shape " +
                       ag::shape_str(r.shape));
    }
    put_u64(out, r.name.size());
    out += r.name;
    put_u64(out, r.shape.size());
    for (auto d : r.shape) put_u64(out, static_cast<std::uint64_t>(d));
    for (float v : r.data) put_f32(out, v);
  }
  return out;
}

std::vector<NamedArray> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < kMagicLen || bytes.compare(0, kMagicLen, kMagic) != 0) {
    throw IoError("not a GIVCKPT1 checkpoint");
  }
  Reader rd(bytes);
  rd.str(kMagicLen);
  std::vector<NamedArray> records;
  while (!rd.done()) {
    NamedArray r;
    r.name = rd.str(rd.u64());
    const auto rank = rd.u64();
    if (rank > 16) throw IoError("checkpoint record '" + r.name + "' has implausible rank");
    std::uint64_t count = 1;
    for (std::uint64_t i = 0; i < rank; ++i) {
      const auto d = rd.u64();
      r.shape.push_back(static_cast<std::int64_t>(d));
      count *= d;
    }
    if (count * 4 > bytes.size()) throw IoError("checkpoint record '" + r.name + "' truncated");
    r.data.resize(count);
    for (auto& v : r.data) v = rd.f32();
    records.push_back(std::move(r));
  }
  return records;
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& records) {
  const auto bytes = encode_checkpoint(records);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing " + path.string());
}

std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return decode_checkpoint(ss.str());
}

const NamedArray& find_record(const std::vector<NamedArray>& records, const std::string& name) {
  for (const auto& r : records) {
    if (r.name == name) return r;
  }
  throw IoError("checkpoint has no record '" + name + "'");
}

}  // namespace giv
