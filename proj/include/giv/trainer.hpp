#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "giv/checkpoint.hpp"
#include "giv/conditioning.hpp"
#include "giv/diffusion.hpp"
#include "giv/model.hpp"
#include "giv/run_config.hpp"

namespace giv {

// AdamW with decoupled weight decay: p <- p (1 - lr wd), then the
// bias-corrected Adam update.
class AdamW {
 public:
  AdamW(AdamWConfig cfg, std::vector<std::pair<std::string, ag::Tensor>> params);

  // Applies one update from the parameters' accumulated gradients, then
  // clears them.
  void step();
  std::int64_t steps_taken() const { return t_; }

  std::vector<NamedArray> state() const;
  void load_state(const std::vector<NamedArray>& records);

 private:
  AdamWConfig cfg_;
  std::vector<std::pair<std::string, ag::Tensor>> params_;
  std::vector<std::vector<float>> m_, v_;
  std::int64_t t_ = 0;
};

// Record for one training step: mean loss over the batch.
struct StepResult {
  std::int64_t step;
  double loss;
  double grad_norm;
};

// Owns the model, optimizer and encoded dataset. Step k draws all of its
// randomness from (seed, k), so a restored checkpoint replays the same
// trajectory as an uninterrupted run.
class Trainer {
 public:
  Trainer(RunConfig cfg, std::vector<LatentQuintuple> data);

  StepResult train_step();
  std::vector<StepResult> train(std::int64_t steps,
                                const std::function<void(const StepResult&)>& on_step = {});

  const GivTransformer& model() const { return model_; }
  GivTransformer& model() { return model_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  const RunConfig& config() const { return cfg_; }
  std::int64_t step() const { return step_; }

  std::vector<NamedArray> checkpoint() const;
  void save(const std::filesystem::path& path) const;
  void restore(const std::vector<NamedArray>& records);

 private:
  RunConfig cfg_;
  std::uint64_t seed_;
  std::vector<LatentQuintuple> data_;
  NoiseSchedule schedule_;
  GivTransformer model_;
  AdamW optimizer_;
  std::int64_t step_ = 0;
};

// Loss of one quintuple at a given timestep and noise, recorded on the
// current tape when one is installed.
ag::Tensor diffusion_loss(const GivTransformer& model, const LatentQuintuple& q, int t,
                          const LatentBlock& eps, const NoiseSchedule& sched);

std::vector<NamedArray> schedule_records(const NoiseSchedule& sched);
NoiseSchedule schedule_from_records(const std::vector<NamedArray>& records);
std::vector<NamedArray> codec_records(const CodecConfig& codec);
CodecConfig codec_from_records(const std::vector<NamedArray>& records);

// Runs `cfg.max_steps` steps over a manifest, writing loss.csv, periodic
// checkpoints, final.ckpt and the resolved config into cfg.out_dir.
void run_training(const RunConfig& cfg);

}  // namespace giv
