#include "giv/sampler.hpp"

#include <algorithm>

#include "giv/error.hpp"
#include "giv/model.hpp"

namespace giv {

namespace {

// Evaluated as a weighted sum so that the identity settings of the scales
// reproduce their reduced forms bit-exactly.
LatentBlock weighted(std::initializer_list<std::pair<const LatentBlock*, double>> terms) {
  const LatentBlock& first = *terms.begin()->first;
  LatentBlock out(first.frames, first.channels, first.height, first.width);
  for (const auto& [block, w] : terms) {
    if (!block->same_dims(first)) throw ContractError("guidance: epsilon shapes differ");
  }
  for (const auto& [block, w] : terms) {
    const auto wf = static_cast<float>(w);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += wf * block->data[i];
  }
  return out;
}

}  // namespace

void GuidanceConfig::validate() const {
  if (!(s1 >= 0.0) || !(s2 >= 0.0)) throw ContractError("guidance scales must be >= 0");
  if (steps < 1) throw ContractError("guidance needs at least one step");
}

LatentBlock cfg_epsilon(const LatentBlock& eps_uncond, const LatentBlock& eps_text, double s1) {
  return weighted({{&eps_uncond, 1.0 - s1}, {&eps_text, s1}});
}

LatentBlock dual_cfg_epsilon(const LatentBlock& eps_null_null, const LatentBlock& eps_text_null,
                             const LatentBlock& eps_text_img, double s1, double s2) {
  return weighted({{&eps_null_null, 1.0 - s1}, {&eps_text_null, s1 - s2}, {&eps_text_img, s2}});
}

LatentBlock TransformerEpsilon::predict(const ConditionBundle& bundle, int t) const {
  return model_.predict(bundle, t);
}

ConditionBundle SamplingConditions::bundle(const LatentBlock& z_t, bool with_text,
                                           bool with_image) const {
  LatentQuintuple q;
  q.prompt = with_text ? prompt : Tokens{};
  q.condition = condition;
  q.references = references;
  q.mask = mask;
  if (!with_image) {
    std::fill(q.references.data.begin(), q.references.data.end(), 0.0f);
    std::fill(q.mask.data.begin(), q.mask.data.end(), 0.0f);
  }
  q.present = {with_text, with_image, with_image};
  return build_bundle(z_t, q);
}

LatentBlock sample(const EpsilonModel& model, const SamplingConditions& conditions,
                   const DdimPlan& plan, const NoiseSchedule& sched,
                   const GuidanceConfig& guidance, const LatentBlock& initial_noise) {
  guidance.validate();
  if (plan.timesteps.empty()) throw ContractError("sample: empty DDIM plan");
  if (!initial_noise.same_dims(conditions.condition)) {
    throw ContractError("sample: initial noise must match the condition latent");
  }
  LatentBlock z = initial_noise;
  for (std::size_t i = 0; i < plan.timesteps.size(); ++i) {
    const int t = plan.timesteps[i];
    const auto eps_nn = model.predict(conditions.bundle(z, false, false), t);
    const auto eps_tn = model.predict(conditions.bundle(z, true, false), t);
    // With s2 = 0 the image-conditioned term carries zero weight.
    const auto eps_ti =
        guidance.s2 == 0.0 ? eps_tn : model.predict(conditions.bundle(z, true, true), t);
    const auto eps = dual_cfg_epsilon(eps_nn, eps_tn, eps_ti, guidance.s1, guidance.s2);
    z = ddim_step(z, eps, t, plan.previous(i), sched);
  }
  return z;
}

LatentBlock sample(const EpsilonModel& model, const SamplingConditions& conditions,
                   const DdimPlan& plan, const NoiseSchedule& sched,
                   const GuidanceConfig& guidance, Rng& rng) {
  const auto& c = conditions.condition;
  const auto noise = gaussian_block(c.frames, c.channels, c.height, c.width, rng);
  return sample(model, conditions, plan, sched, guidance, noise);
}

}  // namespace giv
