#pragma once

#include "giv/array4.hpp"
#include "giv/conditioning.hpp"
#include "giv/diffusion.hpp"
#include "giv/rng.hpp"

namespace giv {

class GivTransformer;

struct GuidanceConfig {
  double s1 = 6.0;   // text scale
  double s2 = 1.5;   // image scale
  int steps = 50;

  void validate() const;
};

// eps_uncond + s1 (eps_text - eps_uncond)
LatentBlock cfg_epsilon(const LatentBlock& eps_uncond, const LatentBlock& eps_text, double s1);

// eps_00 + s1 (eps_t0 - eps_00) + s2 (eps_ti - eps_t0)
LatentBlock dual_cfg_epsilon(const LatentBlock& eps_null_null, const LatentBlock& eps_text_null,
                             const LatentBlock& eps_text_img, double s1, double s2);

class EpsilonModel {
 public:
  virtual ~EpsilonModel() = default;
  virtual LatentBlock predict(const ConditionBundle& bundle, int t) const = 0;
};

class TransformerEpsilon final : public EpsilonModel {
 public:
  explicit TransformerEpsilon(const GivTransformer& model) : model_(model) {}
  LatentBlock predict(const ConditionBundle& bundle, int t) const override;

 private:
  const GivTransformer& model_;
};

// Everything the sampler needs to rebuild a bundle around a new z_t. The
// null image condition zeroes the reference latents and the mask channels;
// the null text condition is the EMPTY prompt.
struct SamplingConditions {
  LatentBlock condition;   // f x c x h x w
  LatentBlock references;  // n x c x h x w, n may be 0
  Video mask;              // 1 x 1 x H x W; all zeros when omitted
  Tokens prompt;

  ConditionBundle bundle(const LatentBlock& z_t, bool with_text, bool with_image) const;
};

// Runs the plan's DDIM steps, combining (null, null), (text, null) and
// (text, image) predictions with dual guidance at every step.
LatentBlock sample(const EpsilonModel& model, const SamplingConditions& conditions,
                   const DdimPlan& plan, const NoiseSchedule& sched,
                   const GuidanceConfig& guidance, const LatentBlock& initial_noise);

LatentBlock sample(const EpsilonModel& model, const SamplingConditions& conditions,
                   const DdimPlan& plan, const NoiseSchedule& sched,
                   const GuidanceConfig& guidance, Rng& rng);

}  // namespace giv
