#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "giv/array4.hpp"
#include "giv/codec.hpp"
#include "giv/conditioning.hpp"
#include "giv/rng.hpp"

namespace giv {

enum class SpriteShape { kCircle, kSquare, kTriangle };
enum class BackgroundKind { kGradient, kNoise };

std::string shape_name(SpriteShape shape);

struct Rgb {
  float r = 0.0f, g = 0.0f, b = 0.0f;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

struct Sprite {
  SpriteShape shape = SpriteShape::kCircle;
  std::string color_name = "red";
  Rgb color{0.875f, 0.125f, 0.125f};
  int size = 4;  // circle radius, square half-side, triangle half-extent
  double x0 = 16.0, y0 = 16.0;
  double vx = 0.0, vy = 0.0;  // px per frame
  double amp_x = 0.0, amp_y = 0.0, omega = 0.0, phase = 0.0;
  int z = 0;  // higher z draws on top

  // Continuous trajectory; rasterization snaps it to the nearest pixel.
  double center_x(std::int64_t frame) const;
  double center_y(std::int64_t frame) const;
};

struct SceneSpec {
  std::int64_t height = 32, width = 32, frames = 9;
  BackgroundKind background = BackgroundKind::kGradient;
  std::uint64_t background_seed = 0;
  Rgb background_a{0.25f, 0.25f, 0.375f};
  Rgb background_b{0.5f, 0.625f, 0.5f};
  std::vector<Sprite> sprites;
  int target = 0;

  std::string serialize() const;
};

struct BoundingBox {
  std::int64_t x0, y0, x1, y1;  // inclusive
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct Caption {
  std::string instance;  // shape word
  std::string prompt;
};

// Binary H x W support of one sprite in one frame, clipped to the canvas.
std::vector<std::uint8_t> sprite_support(const SceneSpec& spec, std::size_t sprite,
                                         std::int64_t frame);
// Support minus pixels covered by sprites with higher z.
std::vector<std::uint8_t> visible_support(const SceneSpec& spec, std::size_t sprite,
                                          std::int64_t frame);
// Pixel count of the unclipped shape.
std::int64_t shape_area(const Sprite& sprite);

Video render_background(const SceneSpec& spec);
Video render_scene(const SceneSpec& spec);

// Recognize-track-erase stage oracles. Each mirrors the contract a learned
// backend would satisfy.
Caption oracle_caption(const SceneSpec& spec);
// Returns nullopt (skip) when under 25% of the target is visible in frame 0.
std::optional<BoundingBox> oracle_detect(const Video& first_frame, const std::string& instance,
                                         const SceneSpec& spec);
Video oracle_track(const Video& video, const BoundingBox& box, const SceneSpec& spec);
Video oracle_erase(const SceneSpec& spec);

// Crop of the target in the first frame where >= 95% of it is unoccluded,
// on neutral grey, padded to square and resized to H x W. nullopt if none.
std::optional<Video> reference_image(const Video& video, const SceneSpec& spec);

// Random scene whose dimensions satisfy the codec's divisibility rules.
SceneSpec random_scene(Rng& rng, std::int64_t height, std::int64_t width, std::int64_t frames);

struct SynthRecord {
  SceneSpec scene;
  std::string prompt;
  std::string instance;
  Video target;      // F x 3 x H x W
  Video condition;   // F x 3 x H x W
  Video reference;   // 1 x 3 x H x W
  Video mask;        // F x 1 x H x W binary
  std::uint64_t attempt = 0;
};

struct SynthOptions {
  std::int64_t height = 32, width = 32, frames = 9;
};

// Runs the full pipeline for record `id`, regenerating the scene until no
// stage signals a skip.
SynthRecord synthesize_record(std::uint64_t seed, std::uint64_t id, const SynthOptions& opts);

struct ManifestRecord {
  std::string id;
  std::string target, condition, reference, mask;  // paths relative to the dataset dir
  std::string target_hash, condition_hash, reference_hash, mask_hash;
  std::string prompt;
  std::string instance;
  std::int64_t n = 1;
  std::uint64_t seed = 0;
  std::string scene_hash;
};

std::string to_json_line(const ManifestRecord& r);
ManifestRecord manifest_record_from_json(const std::string& line);

struct Manifest {
  std::filesystem::path dir;
  std::vector<ManifestRecord> records;
};

constexpr const char* kManifestName = "manifest.jsonl";

Manifest build_dataset(std::uint64_t count, std::uint64_t seed,
                       const std::filesystem::path& out_dir, const SynthOptions& opts = {});
Manifest load_manifest(const std::filesystem::path& dir);
// Throws IoError on missing files, hash mismatches, duplicate ids, or
// dimensions that the codec cannot encode.
void validate_manifest(const Manifest& manifest, const CodecConfig& codec);

struct LoadedRecord {
  Quintuple quintuple;  // first-frame mask
  Video temporal_mask;  // F x 1 x H x W
};
LoadedRecord load_record(const Manifest& manifest, const ManifestRecord& record);

std::string fnv1a_hex(const std::string& bytes);

}  // namespace giv
