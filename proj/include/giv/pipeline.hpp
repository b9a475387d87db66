#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "giv/checkpoint.hpp"
#include "giv/codec.hpp"
#include "giv/conditioning.hpp"
#include "giv/diffusion.hpp"
#include "giv/metrics.hpp"
#include "giv/model.hpp"
#include "giv/sampler.hpp"
#include "giv/synth.hpp"

namespace giv {

// Encodes every video of a record; references are stacked along frames.
LatentQuintuple encode_quintuple(const Quintuple& q, const CodecConfig& codec);

// Everything inference needs from a checkpoint.
struct EditModel {
  GivTransformer model;
  NoiseSchedule schedule;
  CodecConfig codec;

  static EditModel from_checkpoint(const std::vector<NamedArray>& records);
  static EditModel load(const std::filesystem::path& path);
};

struct EditRequest {
  Video condition;               // F x 3 x H x W
  std::vector<Video> references; // each 1 x 3 x H x W
  std::optional<Video> mask;     // 1 x 1 x H x W; zeros when absent
  std::string prompt;
  GuidanceConfig guidance;
  std::uint64_t seed = 0;
};

// Encodes the conditions, samples with dual guidance and decodes. Throws
// ShapeError when the inputs do not fit the checkpoint's codec and model.
Video edit_video(const EditModel& m, const EditRequest& request);

// Edits every record of a manifest, writing <out>/<id>.givvid. Each record
// samples with derive_rng(seed, {index}).
std::vector<std::string> edit_manifest(const EditModel& m, const Manifest& manifest,
                                       const GuidanceConfig& guidance, std::uint64_t seed,
                                       const std::filesystem::path& out_dir);

// Mean squared error over pixels where mask > 0.5 (mask: F x 1 x H x W,
// broadcast over channels). Returns 0 when the mask is empty.
double masked_mse(const Video& a, const Video& b, const Video& mask);

// Videos in a directory keyed by id: "<id>.givvid" or "<id>_target.givvid".
std::map<std::string, Video> read_video_set(const std::filesystem::path& dir);

// id -> prompt from JSON lines carrying "id" and "prompt" fields (a dataset
// manifest qualifies).
std::map<std::string, std::string> read_prompts(const std::filesystem::path& path);

// Pairs the sets by id and runs the metric suite. Throws IoError listing
// every unmatched id.
MetricReport evaluate_directories(const std::filesystem::path& generated,
                                  const std::filesystem::path& target,
                                  const std::filesystem::path& prompts,
                                  const EmbedderSuite& embedders = {});

}  // namespace giv
