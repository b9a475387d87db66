#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "giv/array4.hpp"
#include "giv/rng.hpp"

namespace giv {

// Byte-level prompt tokens. An empty sequence is the EMPTY text condition.
using Tokens = std::vector<std::int32_t>;

Tokens tokenize(const std::string& prompt);

// Which conditions survived dropout.
struct ConditionFlags {
  bool prompt = true;
  bool references = true;
  bool mask = true;
  friend bool operator==(const ConditionFlags&, const ConditionFlags&) = default;
};

struct DropoutPolicy {
  double p_prompt = 0.2;
  double p_ref = 0.2;
  double p_mask = 0.5;
};

// One training record in pixel space.
struct Quintuple {
  std::string prompt;
  std::vector<Video> references;  // each 1 x 3 x H x W
  Video mask;                     // 1 x 1 x H x W, first-frame mask
  Video condition;                // instance removed
  Video target;                   // original video
  ConditionFlags present;
};

// The same record after encoding.
struct LatentQuintuple {
  Tokens prompt;
  LatentBlock references;  // n x c x h x w, n may be 0
  Video mask;              // 1 x 1 x H x W
  LatentBlock condition;   // f x c x h x w
  LatentBlock target;      // f x c x h x w
  ConditionFlags present;
};

// Model input plus text condition.
struct ConditionBundle {
  LatentBlock z_input;  // (n + f) x 2c x h x w
  Tokens prompt;
  std::int64_t reference_count = 0;
  ConditionFlags present;

  std::int64_t video_frames() const { return z_input.frames - reference_count; }
};

// Three uniform draws in fixed order (prompt, references, mask).
ConditionFlags draw_condition_dropout(const DropoutPolicy& policy, Rng& rng);

// Dropped prompt becomes EMPTY, dropped references become mid-grey images
// (which encode to exactly zero latents), dropped mask becomes all zeros.
Quintuple apply_condition_dropout(const Quintuple& q, const DropoutPolicy& policy, Rng& rng);
LatentQuintuple apply_condition_dropout(const LatentQuintuple& q, const DropoutPolicy& policy,
                                        Rng& rng);
LatentQuintuple apply_condition_flags(const LatentQuintuple& q, const ConditionFlags& keep);

// Channel concat: noisy target in channels [0, c), condition in [c, 2c).
LatentBlock assemble_video_latent(const LatentBlock& z_target_t, const LatentBlock& z_cond);

// Area-mean downsampling of a 1 x 1 x H x W mask to h x w.
LatentBlock downsample_mask(const Video& mask, std::int64_t h, std::int64_t w);

// Mask downsampled to h x w, repeated to n x c x h x w, channel-concatenated
// after the reference latents.
LatentBlock assemble_image_latent(const LatentBlock& z_ref, const Video& mask);

// Frame concat with image latents first.
LatentBlock assemble_input(const LatentBlock& z_image, const LatentBlock& z_video_t);

ConditionBundle build_bundle(const LatentBlock& z_target_t, const LatentQuintuple& q);

}  // namespace giv
