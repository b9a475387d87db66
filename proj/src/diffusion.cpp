#include "giv/diffusion.hpp"

#include <cmath>
#include <numbers>

#include "giv/error.hpp"

namespace giv {

namespace {

void require_same(const LatentBlock& a, const LatentBlock& b, const char* op) {
  if (!a.same_dims(b)) throw ContractError(std::string(op) + ": latent shapes differ");
}

NoiseSchedule from_betas(ScheduleKind kind, const std::vector<double>& betas) {
  std::vector<float> table;
  table.reserve(betas.size());
  double prod = 1.0;
  for (double b : betas) {
    prod *= 1.0 - b;
    table.push_back(static_cast<float>(prod));
  }
  return NoiseSchedule(kind, std::move(table));
}

}  // namespace

std::string schedule_kind_name(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::kScaledLinear: return "scaled_linear";
    case ScheduleKind::kLinear: return "linear";
    case ScheduleKind::kCosine: return "cosine";
    case ScheduleKind::kCustom: return "custom";
  }
  return "custom";
}

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "scaled_linear") return ScheduleKind::kScaledLinear;
  if (name == "linear") return ScheduleKind::kLinear;
  if (name == "cosine") return ScheduleKind::kCosine;
  if (name == "custom") return ScheduleKind::kCustom;
  throw ContractError("unknown schedule kind '" + name + "'");
}

NoiseSchedule::NoiseSchedule(ScheduleKind kind, std::vector<float> alpha_bar)
    : kind_(kind), alpha_bar_(std::move(alpha_bar)) {
  if (alpha_bar_.size() < 2) throw ContractError("schedule needs T >= 2");
  for (std::size_t i = 0; i < alpha_bar_.size(); ++i) {
    if (!(alpha_bar_[i] > 0.0f && alpha_bar_[i] <= 1.0f)) {
      throw ContractError("alpha_bar must lie in (0, 1]");
    }
    if (i > 0 && !(alpha_bar_[i] < alpha_bar_[i - 1])) {
      throw ContractError("alpha_bar must be strictly decreasing");
    }
  }
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  if (t < 0 || t > steps()) {
    throw ContractError("timestep " + std::to_string(t) + " outside [0, " +
                        std::to_string(steps()) + "]");
  }
  return alpha_bar_[static_cast<std::size_t>(t - 1)];
}

NoiseSchedule make_schedule(int total_steps, ScheduleKind kind, ScheduleParams params) {
  if (total_steps < 2) throw ContractError("make_schedule: T must be >= 2");
  const auto T = static_cast<std::size_t>(total_steps);
  std::vector<double> betas(T);
  switch (kind) {
    case ScheduleKind::kScaledLinear: {
      const double a = std::sqrt(params.beta_start), b = std::sqrt(params.beta_end);
      for (std::size_t i = 0; i < T; ++i) {
        const double r = a + (b - a) * static_cast<double>(i) / static_cast<double>(T - 1);
        betas[i] = r * r;
      }
      break;
    }
    case ScheduleKind::kLinear:
      for (std::size_t i = 0; i < T; ++i) {
        betas[i] = params.beta_start + (params.beta_end - params.beta_start) *
                                           static_cast<double>(i) / static_cast<double>(T - 1);
      }
      break;
    case ScheduleKind::kCosine: {
      constexpr double s = 0.008;
      auto f = [&](double t) {
        const double v = std::cos((t / static_cast<double>(T) + s) / (1.0 + s) *
                                  std::numbers::pi / 2.0);
        return v * v;
      };
      for (std::size_t i = 0; i < T; ++i) {
        const double b = 1.0 - f(static_cast<double>(i + 1)) / f(static_cast<double>(i));
        betas[i] = std::min(b, 0.999);
      }
      break;
    }
    case ScheduleKind::kCustom:
      throw ContractError("make_schedule: custom schedules come from explicit betas");
  }
  return from_betas(kind, betas);
}

NoiseSchedule make_schedule_from_betas(const std::vector<double>& betas) {
  for (double b : betas) {
    if (!(b > 0.0 && b < 1.0)) throw ContractError("betas must lie in (0, 1)");
  }
  return from_betas(ScheduleKind::kCustom, betas);
}

DdimPlan make_ddim_plan(int total_steps, int inference_steps) {
  if (inference_steps < 1 || inference_steps > total_steps) {
    throw ContractError("DDIM plan needs 1 <= S <= T");
  }
  DdimPlan plan;
  if (inference_steps == 1) {
    plan.timesteps = {total_steps};
    return plan;
  }
  const auto S = static_cast<std::int64_t>(inference_steps);
  for (std::int64_t k = S - 1; k >= 0; --k) {
    plan.timesteps.push_back(static_cast<int>(1 + k * (total_steps - 1) / (S - 1)));
  }
  return plan;
}

LatentBlock add_noise(const LatentBlock& z0, const LatentBlock& eps, int t,
                      const NoiseSchedule& sched) {
  require_same(z0, eps, "add_noise");
  if (t < 1 || t > sched.steps()) {
    throw ContractError("add_noise: timestep " + std::to_string(t) + " outside [1, " +
                        std::to_string(sched.steps()) + "]");
  }
  const double ab = sched.alpha_bar(t);
  const auto a = static_cast<float>(std::sqrt(ab));
  const auto b = static_cast<float>(std::sqrt(1.0 - ab));
  LatentBlock out = z0;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a * z0.data[i] + b * eps.data[i];
  return out;
}

double training_loss(const LatentBlock& eps_true, const LatentBlock& eps_pred) {
  require_same(eps_true, eps_pred, "training_loss");
  if (eps_true.data.empty()) throw ContractError("training_loss: empty latent");
  double total = 0.0;
  for (std::size_t i = 0; i < eps_true.data.size(); ++i) {
    const double d = static_cast<double>(eps_true.data[i]) - eps_pred.data[i];
    total += d * d;
  }
  return total / static_cast<double>(eps_true.data.size());
}

LatentBlock predict_x0(const LatentBlock& z_t, const LatentBlock& eps_pred, int t,
                       const NoiseSchedule& sched) {
  require_same(z_t, eps_pred, "predict_x0");
  const double ab = sched.alpha_bar(t);
  const auto inv_a = static_cast<float>(1.0 / std::sqrt(ab));
  const auto b = static_cast<float>(std::sqrt(1.0 - ab));
  LatentBlock out = z_t;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = (z_t.data[i] - b * eps_pred.data[i]) * inv_a;
  }
  return out;
}

LatentBlock ddim_step(const LatentBlock& z_t, const LatentBlock& eps_pred, int t, int t_prev,
                      const NoiseSchedule& sched) {
  if (!(t > t_prev && t_prev >= 0)) {
    throw ContractError("ddim_step: need t > t_prev >= 0, got t=" + std::to_string(t) +
                        " t_prev=" + std::to_string(t_prev));
  }
  if (t > sched.steps()) throw ContractError("ddim_step: t beyond schedule");
  LatentBlock x0 = predict_x0(z_t, eps_pred, t, sched);
  const double ab_prev = sched.alpha_bar(t_prev);
  const auto a = static_cast<float>(std::sqrt(ab_prev));
  const auto b = static_cast<float>(std::sqrt(1.0 - ab_prev));
  for (std::size_t i = 0; i < x0.data.size(); ++i) {
    x0.data[i] = a * x0.data[i] + b * eps_pred.data[i];
  }
  return x0;
}

LatentBlock gaussian_block(std::int64_t f, std::int64_t c, std::int64_t h, std::int64_t w,
                           Rng& rng) {
  LatentBlock out(f, c, h, w);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (auto& v : out.data) v = normal(rng);
  return out;
}

}  // namespace giv
