#include "giv/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <json.hpp>

#include "giv/error.hpp"
#include "giv/video_io.hpp"

namespace giv {

namespace {

constexpr float kNeutral = 0.5f;
constexpr double kStillThreshold = 2.0;
constexpr double kDetectFraction = 0.25;
constexpr double kClearFraction = 0.95;

struct NamedColor {
  const char* name;
  Rgb rgb;
};

// Channel values are multiples of 1/8 so rendered pixels sit on the
// codec's exact grid.
constexpr NamedColor kPalette[] = {
    {"red", {0.875f, 0.125f, 0.125f}},   {"green", {0.125f, 0.75f, 0.25f}},
    {"blue", {0.125f, 0.25f, 0.875f}},   {"yellow", {0.875f, 0.875f, 0.125f}},
    {"cyan", {0.125f, 0.875f, 0.875f}},  {"magenta", {0.875f, 0.125f, 0.875f}},
    {"white", {1.0f, 1.0f, 1.0f}},       {"orange", {1.0f, 0.5f, 0.0f}},
};

float quantize256(double v) {
  return static_cast<float>(std::clamp(std::round(v * 256.0), 0.0, 256.0) / 256.0);
}

bool inside(const Sprite& s, std::int64_t cx, std::int64_t cy, std::int64_t x, std::int64_t y) {
  const std::int64_t dx = x - cx, dy = y - cy, r = s.size;
  switch (s.shape) {
    case SpriteShape::kCircle: return dx * dx + dy * dy <= r * r;
    case SpriteShape::kSquare: return std::abs(dx) <= r && std::abs(dy) <= r;
    case SpriteShape::kTriangle: return dy >= -r && dy <= r && 2 * std::abs(dx) <= dy + r;
  }
  return false;
}

std::int64_t snap(double v) { return static_cast<std::int64_t>(std::lround(v)); }

std::vector<std::size_t> draw_order(const SceneSpec& spec) {
  std::vector<std::size_t> order(spec.sprites.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return spec.sprites[a].z < spec.sprites[b].z;
  });
  return order;
}

// Index i is drawn above j when it has higher z, or equal z and comes later.
bool drawn_above(const SceneSpec& spec, std::size_t i, std::size_t j) {
  const auto zi = spec.sprites[i].z, zj = spec.sprites[j].z;
  return zi > zj || (zi == zj && i > j);
}

Video render_without(const SceneSpec& spec, std::optional<std::size_t> skip) {
  Video video = render_background(spec);
  for (auto k : draw_order(spec)) {
    if (skip && *skip == k) continue;
    const auto& s = spec.sprites[k];
    for (std::int64_t f = 0; f < spec.frames; ++f) {
      const auto support = sprite_support(spec, k, f);
      for (std::int64_t y = 0; y < spec.height; ++y) {
        for (std::int64_t x = 0; x < spec.width; ++x) {
          if (!support[static_cast<std::size_t>(y * spec.width + x)]) continue;
          video.at(f, 0, y, x) = s.color.r;
          video.at(f, 1, y, x) = s.color.g;
          video.at(f, 2, y, x) = s.color.b;
        }
      }
    }
  }
  return video;
}

std::int64_t count(const std::vector<std::uint8_t>& m) {
  return std::count(m.begin(), m.end(), std::uint8_t{1});
}

std::string motion_phrase(const Sprite& s, std::int64_t frames) {
  const double x0 = s.center_x(0), y0 = s.center_y(0);
  double max_disp = 0.0;
  for (std::int64_t f = 1; f < frames; ++f) {
    max_disp = std::max(max_disp, std::hypot(s.center_x(f) - x0, s.center_y(f) - y0));
  }
  if (max_disp < kStillThreshold) return "stays still";
  const double dx = s.center_x(frames - 1) - x0, dy = s.center_y(frames - 1) - y0;
  if (std::hypot(dx, dy) < kStillThreshold) return "wobbles";
  if (std::abs(dx) >= std::abs(dy)) return dx > 0 ? "moves right" : "moves left";
  return dy > 0 ? "moves down" : "moves up";
}

}  // namespace

std::string shape_name(SpriteShape shape) {
  switch (shape) {
    case SpriteShape::kCircle: return "circle";
    case SpriteShape::kSquare: return "square";
    case SpriteShape::kTriangle: return "triangle";
  }
  return "shape";
}

double Sprite::center_x(std::int64_t frame) const {
  const auto t = static_cast<double>(frame);
  return x0 + vx * t + amp_x * std::sin(omega * t + phase);
}

double Sprite::center_y(std::int64_t frame) const {
  const auto t = static_cast<double>(frame);
  return y0 + vy * t + amp_y * std::cos(omega * t + phase);
}

std::string SceneSpec::serialize() const {
  std::ostringstream os;
  os << std::setprecision(17) << height << ' ' << width << ' ' << frames << ' '
     << static_cast<int>(background) << ' ' << background_seed << ' ' << background_a.r << ' '
     << background_a.g << ' ' << background_a.b << ' ' << background_b.r << ' ' << background_b.g
     << ' ' << background_b.b << ' ' << target;
  for (const auto& s : sprites) {
    os << " | " << static_cast<int>(s.shape) << ' ' << s.color_name << ' ' << s.color.r << ' '
       << s.color.g << ' ' << s.color.b << ' ' << s.size << ' ' << s.x0 << ' ' << s.y0 << ' '
       << s.vx << ' ' << s.vy << ' ' << s.amp_x << ' ' << s.amp_y << ' ' << s.omega << ' '
       << s.phase << ' ' << s.z;
  }
  return os.str();
}

std::int64_t shape_area(const Sprite& sprite) {
  std::int64_t n = 0;
  for (std::int64_t y = -sprite.size; y <= sprite.size; ++y) {
    for (std::int64_t x = -sprite.size; x <= sprite.size; ++x) n += inside(sprite, 0, 0, x, y);
  }
  return n;
}

std::vector<std::uint8_t> sprite_support(const SceneSpec& spec, std::size_t sprite,
                                         std::int64_t frame) {
  const auto& s = spec.sprites.at(sprite);
  std::vector<std::uint8_t> m(static_cast<std::size_t>(spec.height * spec.width), 0);
  const auto cx = snap(s.center_x(frame)), cy = snap(s.center_y(frame));
  const auto y_lo = std::max<std::int64_t>(0, cy - s.size);
  const auto y_hi = std::min<std::int64_t>(spec.height - 1, cy + s.size);
  const auto x_lo = std::max<std::int64_t>(0, cx - s.size);
  const auto x_hi = std::min<std::int64_t>(spec.width - 1, cx + s.size);
  for (auto y = y_lo; y <= y_hi; ++y) {
    for (auto x = x_lo; x <= x_hi; ++x) {
      if (inside(s, cx, cy, x, y)) m[static_cast<std::size_t>(y * spec.width + x)] = 1;
    }
  }
  return m;
}

std::vector<std::uint8_t> visible_support(const SceneSpec& spec, std::size_t sprite,
                                          std::int64_t frame) {
  auto m = sprite_support(spec, sprite, frame);
  for (std::size_t k = 0; k < spec.sprites.size(); ++k) {
    if (k == sprite || !drawn_above(spec, k, sprite)) continue;
    const auto cover = sprite_support(spec, k, frame);
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (cover[i]) m[i] = 0;
    }
  }
  return m;
}

Video render_background(const SceneSpec& spec) {
  Video video(spec.frames, 3, spec.height, spec.width);
  Rng rng(spec.background_seed);
  std::uniform_real_distribution<double> u(0.2, 0.8);
  std::vector<float> texture;
  if (spec.background == BackgroundKind::kNoise) {
    texture.resize(static_cast<std::size_t>(3 * spec.height * spec.width));
    for (auto& v : texture) v = quantize256(u(rng));
  }
  const double span = static_cast<double>(std::max<std::int64_t>(1, spec.height + spec.width - 2));
  for (std::int64_t y = 0; y < spec.height; ++y) {
    for (std::int64_t x = 0; x < spec.width; ++x) {
      float px[3];
      if (spec.background == BackgroundKind::kGradient) {
        const double a = static_cast<double>(x + y) / span;
        px[0] = quantize256(spec.background_a.r + a * (spec.background_b.r - spec.background_a.r));
        px[1] = quantize256(spec.background_a.g + a * (spec.background_b.g - spec.background_a.g));
        px[2] = quantize256(spec.background_a.b + a * (spec.background_b.b - spec.background_a.b));
      } else {
        for (int c = 0; c < 3; ++c) {
          px[c] = texture[static_cast<std::size_t>((c * spec.height + y) * spec.width + x)];
        }
      }
      for (std::int64_t f = 0; f < spec.frames; ++f) {
        for (int c = 0; c < 3; ++c) video.at(f, c, y, x) = px[c];
      }
    }
  }
  return video;
}

Video render_scene(const SceneSpec& spec) { return render_without(spec, std::nullopt); }

Caption oracle_caption(const SceneSpec& spec) {
  const auto& s = spec.sprites.at(static_cast<std::size_t>(spec.target));
  const auto word = shape_name(s.shape);
  const bool vowel = std::string("aeiou").find(s.color_name.front()) != std::string::npos;
  return {word, (vowel ? "an " : "a ") + s.color_name + " " + word + " " + motion_phrase(s, spec.frames)};
}

std::optional<BoundingBox> oracle_detect(const Video& first_frame, const std::string& instance,
                                         const SceneSpec& spec) {
  if (first_frame.height != spec.height || first_frame.width != spec.width) {
    throw ShapeError("oracle_detect: frame does not match the scene canvas");
  }
  const auto target = static_cast<std::size_t>(spec.target);
  if (shape_name(spec.sprites.at(target).shape) != instance) return std::nullopt;
  const auto vis = visible_support(spec, target, 0);
  const auto area = shape_area(spec.sprites[target]);
  if (static_cast<double>(count(vis)) < kDetectFraction * static_cast<double>(area) ||
      count(vis) == 0) {
    return std::nullopt;
  }
  BoundingBox box{spec.width, spec.height, -1, -1};
  for (std::int64_t y = 0; y < spec.height; ++y) {
    for (std::int64_t x = 0; x < spec.width; ++x) {
      if (!vis[static_cast<std::size_t>(y * spec.width + x)]) continue;
      box.x0 = std::min(box.x0, x);
      box.y0 = std::min(box.y0, y);
      box.x1 = std::max(box.x1, x);
      box.y1 = std::max(box.y1, y);
    }
  }
  return box;
}

Video oracle_track(const Video& video, const BoundingBox& box, const SceneSpec& spec) {
  if (video.frames != spec.frames || video.height != spec.height || video.width != spec.width) {
    throw ShapeError("oracle_track: video does not match the scene");
  }
  Video mask(spec.frames, 1, spec.height, spec.width);
  const auto target = static_cast<std::size_t>(spec.target);
  BoundingBox seen{spec.width, spec.height, -1, -1};
  for (std::int64_t f = 0; f < spec.frames; ++f) {
    const auto vis = visible_support(spec, target, f);
    for (std::size_t i = 0; i < vis.size(); ++i) {
      mask.data[static_cast<std::size_t>(f) * vis.size() + i] = vis[i] ? 1.0f : 0.0f;
      if (f == 0 && vis[i]) {
        const auto y = static_cast<std::int64_t>(i) / spec.width;
        const auto x = static_cast<std::int64_t>(i) % spec.width;
        seen = {std::min(seen.x0, x), std::min(seen.y0, y), std::max(seen.x1, x),
                std::max(seen.y1, y)};
      }
    }
  }
  // The track must start from the detected instance.
  if (!(seen == box)) throw ContractError("oracle_track: box does not match the target instance");
  return mask;
}

Video oracle_erase(const SceneSpec& spec) {
  return render_without(spec, static_cast<std::size_t>(spec.target));
}

std::optional<Video> reference_image(const Video& video, const SceneSpec& spec) {
  const auto target = static_cast<std::size_t>(spec.target);
  const auto area = static_cast<double>(shape_area(spec.sprites[target]));
  for (std::int64_t f = 0; f < spec.frames; ++f) {
    const auto vis = visible_support(spec, target, f);
    if (static_cast<double>(count(vis)) < kClearFraction * area) continue;
    std::int64_t x0 = spec.width, y0 = spec.height, x1 = -1, y1 = -1;
    for (std::int64_t y = 0; y < spec.height; ++y) {
      for (std::int64_t x = 0; x < spec.width; ++x) {
        if (!vis[static_cast<std::size_t>(y * spec.width + x)]) continue;
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
    }
    const auto side = std::max(x1 - x0 + 1, y1 - y0 + 1);
    // Square crop window centred on the box.
    const auto ox = x0 - (side - (x1 - x0 + 1)) / 2;
    const auto oy = y0 - (side - (y1 - y0 + 1)) / 2;
    Video ref(1, 3, spec.height, spec.width, kNeutral);
    for (std::int64_t y = 0; y < spec.height; ++y) {
      for (std::int64_t x = 0; x < spec.width; ++x) {
        const auto sx = ox + x * side / spec.width;
        const auto sy = oy + y * side / spec.height;
        if (sx < 0 || sy < 0 || sx >= spec.width || sy >= spec.height) continue;
        if (!vis[static_cast<std::size_t>(sy * spec.width + sx)]) continue;
        for (int c = 0; c < 3; ++c) ref.at(0, c, y, x) = video.at(f, c, sy, sx);
      }
    }
    return ref;
  }
  return std::nullopt;
}

SceneSpec random_scene(Rng& rng, std::int64_t height, std::int64_t width, std::int64_t frames) {
  SceneSpec spec;
  spec.height = height;
  spec.width = width;
  spec.frames = frames;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  spec.background = u(rng) < 0.5 ? BackgroundKind::kGradient : BackgroundKind::kNoise;
  spec.background_seed = rng();
  auto dark = [&] { return Rgb{quantize256(0.15 + 0.3 * u(rng)), quantize256(0.15 + 0.3 * u(rng)),
                               quantize256(0.15 + 0.3 * u(rng))}; };
  spec.background_a = dark();
  spec.background_b = dark();

  const int sprite_count = 1 + static_cast<int>(u(rng) * 3.0);
  std::vector<int> colors(std::size(kPalette));
  for (std::size_t i = 0; i < colors.size(); ++i) colors[i] = static_cast<int>(i);
  std::shuffle(colors.begin(), colors.end(), rng);
  const double scale = static_cast<double>(std::min(height, width)) / 32.0;
  for (int k = 0; k < sprite_count; ++k) {
    Sprite s;
    s.shape = static_cast<SpriteShape>(static_cast<int>(u(rng) * 3.0) % 3);
    const auto& col = kPalette[colors[static_cast<std::size_t>(k)]];
    s.color_name = col.name;
    s.color = col.rgb;
    s.size = std::max(1, static_cast<int>(std::lround((3.0 + 3.0 * u(rng)) * scale)));
    s.x0 = s.size + u(rng) * static_cast<double>(width - 2 * s.size);
    s.y0 = s.size + u(rng) * static_cast<double>(height - 2 * s.size);
    const double speed = 1.5 * scale;
    s.vx = (2.0 * u(rng) - 1.0) * speed;
    s.vy = (2.0 * u(rng) - 1.0) * speed;
    if (u(rng) < 0.2) s.vx = s.vy = 0.0;
    s.amp_x = u(rng) * 1.5 * scale;
    s.amp_y = u(rng) * 1.5 * scale;
    s.omega = 0.3 + 0.7 * u(rng);
    s.phase = 6.283185307179586 * u(rng);
    s.z = k;
    spec.sprites.push_back(s);
  }
  std::vector<int> z(spec.sprites.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = static_cast<int>(i);
  std::shuffle(z.begin(), z.end(), rng);
  for (std::size_t i = 0; i < z.size(); ++i) spec.sprites[i].z = z[i];
  spec.target = static_cast<int>(u(rng) * static_cast<double>(spec.sprites.size())) %
                static_cast<int>(spec.sprites.size());
  return spec;
}

SynthRecord synthesize_record(std::uint64_t seed, std::uint64_t id, const SynthOptions& opts) {
  for (std::uint64_t attempt = 0; attempt < 1000; ++attempt) {
    Rng rng = derive_rng(seed, {id, attempt});
    SynthRecord rec;
    rec.scene = random_scene(rng, opts.height, opts.width, opts.frames);
    rec.attempt = attempt;
    const auto caption = oracle_caption(rec.scene);
    rec.target = render_scene(rec.scene);
    Video first(1, 3, opts.height, opts.width);
    std::copy_n(rec.target.data.begin(), first.data.size(), first.data.begin());
    const auto box = oracle_detect(first, caption.instance, rec.scene);
    if (!box) continue;
    auto ref = reference_image(rec.target, rec.scene);
    if (!ref) continue;
    rec.mask = oracle_track(rec.target, *box, rec.scene);
    rec.condition = oracle_erase(rec.scene);
    rec.reference = std::move(*ref);
    rec.prompt = caption.prompt;
    rec.instance = caption.instance;
    return rec;
  }
  throw ContractError("synthesize_record: no valid scene after 1000 attempts for id " +
                      std::to_string(id));
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string to_json_line(const ManifestRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["target"] = r.target;
  j["condition"] = r.condition;
  j["reference"] = r.reference;
  j["mask"] = r.mask;
  j["hashes"] = {{"target", r.target_hash},
                 {"condition", r.condition_hash},
                 {"reference", r.reference_hash},
                 {"mask", r.mask_hash}};
  j["prompt"] = r.prompt;
  j["instance"] = r.instance;
  j["n"] = r.n;
  j["seed"] = r.seed;
  j["scene_hash"] = r.scene_hash;
  return j.dump();
}

ManifestRecord manifest_record_from_json(const std::string& line) {
  ManifestRecord r;
  try {
    const auto j = nlohmann::json::parse(line);
    r.id = j.at("id").get<std::string>();
    r.target = j.at("target").get<std::string>();
    r.condition = j.at("condition").get<std::string>();
    r.reference = j.at("reference").get<std::string>();
    r.mask = j.at("mask").get<std::string>();
    const auto& h = j.at("hashes");
    r.target_hash = h.at("target").get<std::string>();
    r.condition_hash = h.at("condition").get<std::string>();
    r.reference_hash = h.at("reference").get<std::string>();
    r.mask_hash = h.at("mask").get<std::string>();
    r.prompt = j.at("prompt").get<std::string>();
    r.instance = j.value("instance", std::string{});
    r.n = j.at("n").get<std::int64_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.scene_hash = j.at("scene_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed manifest line: ") + e.what());
  }
  return r;
}

Manifest build_dataset(std::uint64_t count, std::uint64_t seed,
                       const std::filesystem::path& out_dir, const SynthOptions& opts) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  Manifest manifest{out_dir, {}};
  std::ofstream os(out_dir / kManifestName, std::ios::trunc);
  if (!os) throw IoError("cannot write manifest in " + out_dir.string());
  for (std::uint64_t i = 0; i < count; ++i) {
    std::ostringstream id;
    id << std::setw(6) << std::setfill('0') << i;
    const auto rec = synthesize_record(seed, i, opts);
    ManifestRecord r;
    r.id = id.str();
    r.target = r.id + "_target.givvid";
    r.condition = r.id + "_cond.givvid";
    r.reference = r.id + "_ref.givvid";
    r.mask = r.id + "_mask.givvid";
    auto put = [&](const std::string& name, const Video& v) {
      const auto bytes = encode_video(v);
      try {
        write_file(out_dir / name, bytes);
      } catch (const IoError& e) {
        throw IoError("record " + r.id + ": " + e.what());
      }
      return fnv1a_hex(bytes);
    };
    r.target_hash = put(r.target, rec.target);
    r.condition_hash = put(r.condition, rec.condition);
    r.reference_hash = put(r.reference, rec.reference);
    r.mask_hash = put(r.mask, rec.mask);
    r.prompt = rec.prompt;
    r.instance = rec.instance;
    r.n = 1;
    r.seed = seed;
    r.scene_hash = fnv1a_hex(rec.scene.serialize());
    os << to_json_line(r) << '\n';
    manifest.records.push_back(std::move(r));
  }
  if (!os) throw IoError("failed writing manifest in " + out_dir.string());
  return manifest;
}

Manifest load_manifest(const std::filesystem::path& dir) {
  std::ifstream is(dir / kManifestName);
  if (!is) throw IoError("no " + std::string(kManifestName) + " in " + dir.string());
  Manifest m{dir, {}};
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    m.records.push_back(manifest_record_from_json(line));
  }
  return m;
}

void validate_manifest(const Manifest& manifest, const CodecConfig& codec) {
  std::set<std::string> ids;
  for (const auto& r : manifest.records) {
    if (!ids.insert(r.id).second) throw IoError("duplicate manifest id " + r.id);
    auto check = [&](const std::string& rel, const std::string& hash) {
      const auto path = manifest.dir / rel;
      if (!std::filesystem::exists(path)) {
        throw IoError("record " + r.id + ": missing file " + rel);
      }
      const auto bytes = read_file(path);
      if (fnv1a_hex(bytes) != hash) throw IoError("record " + r.id + ": hash mismatch for " + rel);
      return decode_video(bytes);
    };
    const auto target = check(r.target, r.target_hash);
    const auto cond = check(r.condition, r.condition_hash);
    const auto ref = check(r.reference, r.reference_hash);
    const auto mask = check(r.mask, r.mask_hash);
    if (!target.same_dims(cond) || target.channels != 3) {
      throw IoError("record " + r.id + ": target/condition dimensions differ");
    }
    if (ref.frames != 1 || ref.channels != 3 || ref.height != target.height ||
        ref.width != target.width) {
      throw IoError("record " + r.id + ": reference must be 1x3xHxW");
    }
    if (mask.frames != target.frames || mask.channels != 1 || mask.height != target.height ||
        mask.width != target.width) {
      throw IoError("record " + r.id + ": mask must be Fx1xHxW");
    }
    for (float v : mask.data) {
      if (v != 0.0f && v != 1.0f) throw IoError("record " + r.id + ": mask is not binary");
    }
    try {
      latent_shape(target.frames, target.height, target.width, codec);
    } catch (const ShapeError& e) {
      throw IoError("record " + r.id + ": " + e.what());
    }
  }
}

LoadedRecord load_record(const Manifest& manifest, const ManifestRecord& record) {
  LoadedRecord out;
  auto& q = out.quintuple;
  q.prompt = record.prompt;
  q.target = read_video(manifest.dir / record.target);
  q.condition = read_video(manifest.dir / record.condition);
  q.references.push_back(read_video(manifest.dir / record.reference));
  out.temporal_mask = read_video(manifest.dir / record.mask);
  q.mask = Video(1, 1, out.temporal_mask.height, out.temporal_mask.width);
  std::copy_n(out.temporal_mask.data.begin(), q.mask.data.size(), q.mask.data.begin());
  return out;
}

}  // namespace giv
