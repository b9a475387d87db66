#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "giv/array4.hpp"
#include "giv/rng.hpp"

namespace giv {

enum class ScheduleKind { kScaledLinear, kLinear, kCosine, kCustom };

std::string schedule_kind_name(ScheduleKind kind);
ScheduleKind parse_schedule_kind(const std::string& name);

// Cumulative signal-retention table. Timesteps are 1-based; alpha_bar(0)
// is defined as 1.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  NoiseSchedule(ScheduleKind kind, std::vector<float> alpha_bar);

  int steps() const { return static_cast<int>(alpha_bar_.size()); }
  ScheduleKind kind() const { return kind_; }
  double alpha_bar(int t) const;
  const std::vector<float>& table() const { return alpha_bar_; }

 private:
  ScheduleKind kind_ = ScheduleKind::kScaledLinear;
  std::vector<float> alpha_bar_;
};

struct ScheduleParams {
  double beta_start = 8.5e-4;
  double beta_end = 1.2e-2;
};

NoiseSchedule make_schedule(int total_steps, ScheduleKind kind = ScheduleKind::kScaledLinear,
                            ScheduleParams params = {});
NoiseSchedule make_schedule_from_betas(const std::vector<double>& betas);

// Descending timesteps for deterministic sampling.
struct DdimPlan {
  std::vector<int> timesteps;
  int previous(std::size_t i) const {
    return i + 1 < timesteps.size() ? timesteps[i + 1] : 0;
  }
};

// t_k = 1 + floor(k (T-1) / (S-1)), k = 0..S-1, listed from T down to 1.
DdimPlan make_ddim_plan(int total_steps, int inference_steps);

// sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
LatentBlock add_noise(const LatentBlock& z0, const LatentBlock& eps, int t,
                      const NoiseSchedule& sched);

// Mean squared error over all elements.
double training_loss(const LatentBlock& eps_true, const LatentBlock& eps_pred);

// Deterministic (eta = 0) DDIM update from t to t_prev.
LatentBlock ddim_step(const LatentBlock& z_t, const LatentBlock& eps_pred, int t, int t_prev,
                      const NoiseSchedule& sched);

// The clean-sample estimate used inside ddim_step.
LatentBlock predict_x0(const LatentBlock& z_t, const LatentBlock& eps_pred, int t,
                       const NoiseSchedule& sched);

LatentBlock gaussian_block(std::int64_t f, std::int64_t c, std::int64_t h, std::int64_t w,
                           Rng& rng);

}  // namespace giv
