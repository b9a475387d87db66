#include "giv/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "giv/error.hpp"
#include "giv/ops.hpp"
#include "giv/pipeline.hpp"
#include "giv/synth.hpp"
#include "giv/video_io.hpp"

namespace giv {

namespace {

constexpr char kStepRecord[] = "train/step";

}  // namespace

AdamW::AdamW(AdamWConfig cfg, std::vector<std::pair<std::string, ag::Tensor>> params)
    : cfg_(cfg), params_(std::move(params)) {
  for (const auto& [name, p] : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
    v_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const auto b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
  const auto decay = static_cast<float>(1.0 - cfg_.lr * cfg_.weight_decay);
  const auto step_size = static_cast<float>(cfg_.lr / bc1);
  const auto inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const auto eps = static_cast<float>(cfg_.eps);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k].second;
    if (!p.has_grad()) continue;
    auto w = p.mutable_data();
    const auto g = p.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      w[i] *= decay;
      w[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
    }
    p.zero_grad();
  }
}

std::vector<NamedArray> AdamW::state() const {
  std::vector<NamedArray> out;
  out.push_back({"adam/t", {1}, {static_cast<float>(t_)}});
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto& [name, p] = params_[k];
    out.push_back({"adam/m/" + name, p.shape(), m_[k]});
    out.push_back({"adam/v/" + name, p.shape(), v_[k]});
  }
  return out;
}

void AdamW::load_state(const std::vector<NamedArray>& records) {
  t_ = static_cast<std::int64_t>(find_record(records, "adam/t").data.at(0));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto& name = params_[k].first;
    const auto& m = find_record(records, "adam/m/" + name);
    const auto& v = find_record(records, "adam/v/" + name);
    if (m.data.size() != m_[k].size() || v.data.size() != v_[k].size()) {
      throw ShapeError("optimizer state for '" + name + "' has the wrong size");
    }
    m_[k] = m.data;
    v_[k] = v.data;
  }
}

ag::Tensor diffusion_loss(const GivTransformer& model, const LatentQuintuple& q, int t,
                          const LatentBlock& eps, const NoiseSchedule& sched) {
  const auto z_t = add_noise(q.target, eps, t, sched);
  const auto bundle = build_bundle(z_t, q);
  return ag::mse(model.forward(bundle, t), latent_tokens(eps));
}

Trainer::Trainer(RunConfig cfg, std::vector<LatentQuintuple> data)
    : cfg_(std::move(cfg)),
      seed_(cfg_.require_seed()),
      data_(std::move(data)),
      schedule_(make_schedule(cfg_.schedule_steps, cfg_.schedule_kind)),
      model_(GivTransformer::create(cfg_.model, cfg_.model_seed)),
      optimizer_(cfg_.optimizer, model_.named_parameters()) {
  cfg_.validate();
  if (data_.empty()) throw ContractError("trainer: empty dataset");
}

StepResult Trainer::train_step() {
  const auto step = step_ + 1;
  Rng rng = derive_rng(seed_, {static_cast<std::uint64_t>(step)});
  std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
  std::uniform_int_distribution<int> timestep(1, schedule_.steps());
  const float inv_batch = 1.0f / static_cast<float>(cfg_.batch_size);
  double total = 0.0;
  for (int b = 0; b < cfg_.batch_size; ++b) {
    const auto& record = data_[pick(rng)];
    const auto q = apply_condition_dropout(record, cfg_.dropout, rng);
    const int t = timestep(rng);
    const auto& z0 = q.target;
    const auto eps = gaussian_block(z0.frames, z0.channels, z0.height, z0.width, rng);
    ag::Tape tape;
    ag::TapeScope scope(tape);
    const auto loss = diffusion_loss(model_, q, t, eps, schedule_);
    total += loss.item();
    tape.backward(ag::scale(loss, inv_batch));
  }
  const double mean_loss = total / cfg_.batch_size;
  double sq = 0.0;
  for (const auto& [name, p] : model_.named_parameters()) {
    for (float g : p.grad()) sq += static_cast<double>(g) * g;
  }
  const double grad_norm = std::sqrt(sq);
  if (!std::isfinite(mean_loss) || !std::isfinite(grad_norm)) {
    std::ostringstream os;
    os << "non-finite loss at step " << step << " (loss " << mean_loss << ", grad norm "
       << grad_norm << ")";
    for (const auto& [name, p] : model_.named_parameters()) {
      double s = 0.0;
      for (float g : p.grad()) s += static_cast<double>(g) * g;
      os << "\n  " << name << " grad norm " << std::sqrt(s);
    }
    throw NumericError(os.str());
  }
  optimizer_.step();
  step_ = step;
  return {step, mean_loss, grad_norm};
}

std::vector<StepResult> Trainer::train(std::int64_t steps,
                                       const std::function<void(const StepResult&)>& on_step) {
  std::vector<StepResult> out;
  for (std::int64_t i = 0; i < steps; ++i) {
    out.push_back(train_step());
    if (on_step) on_step(out.back());
  }
  return out;
}

std::vector<NamedArray> schedule_records(const NoiseSchedule& sched) {
  return {{"schedule/kind", {1}, {static_cast<float>(static_cast<int>(sched.kind()))}},
          {"schedule/alpha_bar", {sched.steps()}, sched.table()}};
}

NoiseSchedule schedule_from_records(const std::vector<NamedArray>& records) {
  const auto kind = static_cast<ScheduleKind>(
      static_cast<int>(find_record(records, "schedule/kind").data.at(0)));
  return NoiseSchedule(kind, find_record(records, "schedule/alpha_bar").data);
}

std::vector<NamedArray> codec_records(const CodecConfig& codec) {
  // f32 holds integers exactly up to 2^24, so the 64-bit seed goes in as
  // four 16-bit pieces.
  std::vector<float> v = {static_cast<float>(codec.spatial_factor),
                          static_cast<float>(codec.temporal_factor),
                          static_cast<float>(codec.channels),
                          codec.mode == CodecMode::kLosslessPacking ? 0.0f : 1.0f};
  for (int k = 0; k < 4; ++k) {
    v.push_back(static_cast<float>((codec.projection_seed >> (16 * k)) & 0xffffu));
  }
  return {{"manifest/codec", {static_cast<std::int64_t>(v.size())}, v}};
}

CodecConfig codec_from_records(const std::vector<NamedArray>& records) {
  const auto& v = find_record(records, "manifest/codec").data;
  if (v.size() != 8) throw IoError("codec manifest has unexpected length");
  CodecConfig c;
  c.spatial_factor = static_cast<std::int64_t>(v[0]);
  c.temporal_factor = static_cast<std::int64_t>(v[1]);
  c.channels = static_cast<std::int64_t>(v[2]);
  c.mode = v[3] == 0.0f ? CodecMode::kLosslessPacking : CodecMode::kProjected;
  c.projection_seed = 0;
  for (int k = 0; k < 4; ++k) {
    c.projection_seed |= static_cast<std::uint64_t>(v[4 + k]) << (16 * k);
  }
  validate_codec(c);
  return c;
}

std::vector<NamedArray> Trainer::checkpoint() const {
  auto out = model_.state();
  for (auto& r : schedule_records(schedule_)) out.push_back(std::move(r));
  for (auto& r : codec_records(cfg_.codec)) out.push_back(std::move(r));
  out.push_back({kStepRecord, {1}, {static_cast<float>(step_)}});
  for (auto& r : optimizer_.state()) out.push_back(std::move(r));
  return out;
}

void Trainer::save(const std::filesystem::path& path) const { write_checkpoint(path, checkpoint()); }

void Trainer::restore(const std::vector<NamedArray>& records) {
  auto loaded = GivTransformer::from_state(records);
  if (!(loaded.config() == model_.config())) {
    throw ContractError("checkpoint model config does not match the run config");
  }
  if (!(codec_from_records(records) == cfg_.codec)) {
    throw ContractError("checkpoint codec does not match the run config");
  }
  const auto params = model_.named_parameters();
  const auto src = loaded.named_parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = ag::Tensor(params[i].second).mutable_data();
    std::copy(src[i].second.data().begin(), src[i].second.data().end(), dst.begin());
  }
  schedule_ = schedule_from_records(records);
  optimizer_.load_state(records);
  step_ = static_cast<std::int64_t>(find_record(records, kStepRecord).data.at(0));
}

void run_training(const RunConfig& cfg) {
  cfg.validate();
  cfg.require_seed();
  const auto manifest = load_manifest(cfg.data_dir);
  validate_manifest(manifest, cfg.codec);
  std::vector<LatentQuintuple> data;
  data.reserve(manifest.records.size());
  for (const auto& r : manifest.records) {
    data.push_back(encode_quintuple(load_record(manifest, r).quintuple, cfg.codec));
  }
  std::filesystem::create_directories(cfg.out_dir);
  write_file(cfg.out_dir / "config.ini", format_run_config(cfg));
  Trainer trainer(cfg, std::move(data));
  std::ofstream curve(cfg.out_dir / "loss.csv", std::ios::trunc);
  if (!curve) throw IoError("cannot write loss curve in " + cfg.out_dir.string());
  curve << "step,loss\n" << std::setprecision(9);
  trainer.train(cfg.max_steps, [&](const StepResult& r) {
    curve << r.step << ',' << r.loss << '\n';
    curve.flush();
    if (cfg.checkpoint_every > 0 && r.step % cfg.checkpoint_every == 0) {
      std::ostringstream name;
      name << "ckpt_" << std::setw(6) << std::setfill('0') << r.step << ".ckpt";
      trainer.save(cfg.out_dir / name.str());
    }
  });
  trainer.save(cfg.out_dir / "final.ckpt");
}

}  // namespace giv
