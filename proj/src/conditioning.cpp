#include "giv/conditioning.hpp"

#include <algorithm>

#include "giv/error.hpp"

namespace giv {

namespace {

std::string dims(const Array4& a) {
  return std::to_string(a.frames) + "x" + std::to_string(a.channels) + "x" +
         std::to_string(a.height) + "x" + std::to_string(a.width);
}

}  // namespace

Tokens tokenize(const std::string& prompt) {
  Tokens out;
  out.reserve(prompt.size());
  for (unsigned char ch : prompt) out.push_back(ch);
  return out;
}

ConditionFlags draw_condition_dropout(const DropoutPolicy& policy, Rng& rng) {
  for (double p : {policy.p_prompt, policy.p_ref, policy.p_mask}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ContractError("dropout probability outside [0, 1]");
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ConditionFlags keep;
  keep.prompt = !(u(rng) < policy.p_prompt);
  keep.references = !(u(rng) < policy.p_ref);
  keep.mask = !(u(rng) < policy.p_mask);
  return keep;
}

Quintuple apply_condition_dropout(const Quintuple& q, const DropoutPolicy& policy, Rng& rng) {
  const auto keep = draw_condition_dropout(policy, rng);
  Quintuple out = q;
  if (!keep.prompt) out.prompt.clear();
  if (!keep.references) {
    for (auto& ref : out.references) std::fill(ref.data.begin(), ref.data.end(), 0.5f);
  }
  if (!keep.mask) std::fill(out.mask.data.begin(), out.mask.data.end(), 0.0f);
  out.present = {q.present.prompt && keep.prompt, q.present.references && keep.references,
                 q.present.mask && keep.mask};
  return out;
}

LatentQuintuple apply_condition_flags(const LatentQuintuple& q, const ConditionFlags& keep) {
  LatentQuintuple out = q;
  if (!keep.prompt) out.prompt.clear();
  if (!keep.references) std::fill(out.references.data.begin(), out.references.data.end(), 0.0f);
  if (!keep.mask) std::fill(out.mask.data.begin(), out.mask.data.end(), 0.0f);
  out.present = {q.present.prompt && keep.prompt, q.present.references && keep.references,
                 q.present.mask && keep.mask};
  return out;
}

LatentQuintuple apply_condition_dropout(const LatentQuintuple& q, const DropoutPolicy& policy,
                                        Rng& rng) {
  return apply_condition_flags(q, draw_condition_dropout(policy, rng));
}

LatentBlock assemble_video_latent(const LatentBlock& z_target_t, const LatentBlock& z_cond) {
  if (!z_target_t.same_dims(z_cond)) {
    throw ContractError("assemble_video_latent: target " + dims(z_target_t) +
                        " vs condition " + dims(z_cond));
  }
  const auto c = z_target_t.channels;
  const auto plane = z_target_t.plane();
  LatentBlock out(z_target_t.frames, 2 * c, z_target_t.height, z_target_t.width);
  for (std::int64_t f = 0; f < z_target_t.frames; ++f) {
    auto dst = out.data.begin() + f * 2 * c * plane;
    std::copy_n(z_target_t.data.begin() + f * c * plane, c * plane, dst);
    std::copy_n(z_cond.data.begin() + f * c * plane, c * plane, dst + c * plane);
  }
  return out;
}

LatentBlock downsample_mask(const Video& mask, std::int64_t h, std::int64_t w) {
  if (mask.frames != 1 || mask.channels != 1) {
    throw ContractError("mask must be 1x1xHxW, got " + dims(mask));
  }
  if (h < 1 || w < 1 || mask.height % h != 0 || mask.width % w != 0 ||
      mask.height / h != mask.width / w) {
    throw ContractError("mask " + dims(mask) + " cannot be area-downsampled to " +
                        std::to_string(h) + "x" + std::to_string(w));
  }
  const auto s = mask.height / h;
  LatentBlock out(1, 1, h, w);
  const auto inv = 1.0f / static_cast<float>(s * s);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      float total = 0.0f;
      for (std::int64_t dy = 0; dy < s; ++dy) {
        for (std::int64_t dx = 0; dx < s; ++dx) total += mask.at(0, 0, y * s + dy, x * s + dx);
      }
      out.at(0, 0, y, x) = total * inv;
    }
  }
  return out;
}

LatentBlock assemble_image_latent(const LatentBlock& z_ref, const Video& mask) {
  const auto small = downsample_mask(mask, z_ref.height, z_ref.width);
  const auto n = z_ref.frames, c = z_ref.channels, plane = z_ref.plane();
  LatentBlock out(n, 2 * c, z_ref.height, z_ref.width);
  for (std::int64_t f = 0; f < n; ++f) {
    auto dst = out.data.begin() + f * 2 * c * plane;
    std::copy_n(z_ref.data.begin() + f * c * plane, c * plane, dst);
    for (std::int64_t k = 0; k < c; ++k) {
      std::copy_n(small.data.begin(), plane, dst + (c + k) * plane);
    }
  }
  return out;
}

LatentBlock assemble_input(const LatentBlock& z_image, const LatentBlock& z_video_t) {
  if (z_image.frames > 0 &&
      (z_image.channels != z_video_t.channels || z_image.height != z_video_t.height ||
       z_image.width != z_video_t.width)) {
    throw ContractError("assemble_input: image " + dims(z_image) + " vs video " +
                        dims(z_video_t));
  }
  LatentBlock out(z_image.frames + z_video_t.frames, z_video_t.channels, z_video_t.height,
                  z_video_t.width);
  std::copy(z_image.data.begin(), z_image.data.end(), out.data.begin());
  std::copy(z_video_t.data.begin(), z_video_t.data.end(),
            out.data.begin() + static_cast<std::ptrdiff_t>(z_image.data.size()));
  return out;
}

ConditionBundle build_bundle(const LatentBlock& z_target_t, const LatentQuintuple& q) {
  ConditionBundle b;
  const auto z_video = assemble_video_latent(z_target_t, q.condition);
  if (q.references.frames > 0) {
    b.z_input = assemble_input(assemble_image_latent(q.references, q.mask), z_video);
  } else {
    b.z_input = z_video;
  }
  b.prompt = q.prompt;
  b.reference_count = q.references.frames;
  b.present = q.present;
  return b;
}

}  // namespace giv
