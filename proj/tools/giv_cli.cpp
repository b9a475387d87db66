#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "giv/error.hpp"
#include "giv/grad_suite.hpp"
#include "giv/pipeline.hpp"
#include "giv/run_config.hpp"
#include "giv/synth.hpp"
#include "giv/runtime.hpp"
#include "giv/trainer.hpp"
#include "giv/video_io.hpp"

namespace fs = std::filesystem;

namespace {

struct SynthArgs {
  std::uint64_t count = 0;
  std::uint64_t seed = 0;
  fs::path out;
  std::int64_t height = 32, width = 32, frames = 9;
};

struct TrainArgs {
  fs::path config, data, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> steps;
  std::optional<fs::path> resume;
};

struct EditArgs {
  fs::path ckpt, cond, out, data;
  std::vector<fs::path> refs;
  std::string prompt;
  std::optional<fs::path> mask;
  double s1 = 6.0, s2 = 1.5;
  int steps = 50;
  std::uint64_t seed = 0;
  bool frames = false;
};

struct EvalArgs {
  fs::path gen, target, prompts, out;
};

// Accepts .givvid containers or a directory of PPM/PGM frames.
giv::Video load_video(const fs::path& p) {
  return fs::is_directory(p) ? giv::read_frames(p) : giv::read_video(p);
}

int run_synth(const SynthArgs& a) {
  giv::SynthOptions opts{a.height, a.width, a.frames};
  const auto manifest = giv::build_dataset(a.count, a.seed, a.out, opts);
  std::cout << "wrote " << manifest.records.size() << " records to " << a.out.string() << '\n';
  return 0;
}

int run_train(const TrainArgs& a) {
  auto cfg = giv::load_run_config(a.config);
  cfg.data_dir = a.data;
  cfg.out_dir = a.out;
  if (a.seed) cfg.seed = *a.seed;
  if (a.steps) cfg.max_steps = *a.steps;
  cfg.validate();
  if (!a.resume) {
    giv::run_training(cfg);
  } else {
    // Resume continues the step counter and appends to the loss curve.
    const auto manifest = giv::load_manifest(cfg.data_dir);
    giv::validate_manifest(manifest, cfg.codec);
    std::vector<giv::LatentQuintuple> data;
    for (const auto& r : manifest.records) {
      data.push_back(giv::encode_quintuple(giv::load_record(manifest, r).quintuple, cfg.codec));
    }
    giv::Trainer trainer(cfg, std::move(data));
    trainer.restore(giv::read_checkpoint(*a.resume));
    fs::create_directories(cfg.out_dir);
    giv::write_file(cfg.out_dir / "config.ini", giv::format_run_config(cfg));
    std::ofstream curve(cfg.out_dir / "loss.csv", std::ios::app);
    if (!curve) throw giv::IoError("cannot append to " + (cfg.out_dir / "loss.csv").string());
    curve << std::setprecision(9);
    const auto remaining = cfg.max_steps - trainer.step();
    trainer.train(remaining > 0 ? remaining : 0, [&](const giv::StepResult& r) {
      curve << r.step << ',' << r.loss << '\n';
    });
    trainer.save(cfg.out_dir / "final.ckpt");
  }
  std::cout << "training finished; outputs in " << a.out.string() << '\n';
  return 0;
}

int run_edit(const EditArgs& a) {
  const auto model = giv::EditModel::load(a.ckpt);
  giv::GuidanceConfig guidance{a.s1, a.s2, a.steps};
  if (!a.data.empty()) {
    const auto manifest = giv::load_manifest(a.data);
    giv::validate_manifest(manifest, model.codec);
    const auto ids = giv::edit_manifest(model, manifest, guidance, a.seed, a.out);
    std::cout << "edited " << ids.size() << " records into " << a.out.string() << '\n';
    return 0;
  }
  if (a.cond.empty()) throw giv::ContractError("edit needs --cond (or --data for a manifest)");
  giv::EditRequest req;
  req.condition = load_video(a.cond);
  for (const auto& r : a.refs) req.references.push_back(load_video(r));
  if (a.mask) req.mask = load_video(*a.mask);
  req.prompt = a.prompt;
  req.guidance = guidance;
  req.seed = a.seed;
  const auto video = giv::edit_video(model, req);
  if (a.frames) {
    giv::write_frames(a.out, video);
  } else {
    if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
    giv::write_video(a.out, video);
  }
  std::cout << "wrote " << a.out.string() << '\n';
  return 0;
}

int run_eval(const EvalArgs& a) {
  const auto report = giv::evaluate_directories(a.gen, a.target, a.prompts);
  const auto json = report.to_json();
  std::cout << json << '\n' << report.to_table();
  if (!a.out.empty()) {
    if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
    giv::write_file(a.out, json + "\n");
  }
  return 0;
}

int run_grad_check(std::uint64_t seed) {
  bool ok = true;
  auto show = [&](const giv::GradCheckResult& r) {
    std::printf("%-20s %.3e  (< %.0e) %s\n", r.name.c_str(), r.error, r.tolerance,
                r.passed() ? "ok" : "FAIL");
    ok = ok && r.passed();
  };
  for (const auto& r : giv::primitive_grad_checks(seed)) show(r);
  show(giv::model_input_grad_check(seed));
  show(giv::model_grad_check(seed, 1));
  show(giv::model_grad_check(seed, 2));
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  giv::tune_allocator();
  CLI::App app{"Reference-guided video insertion toolkit"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic quintuple dataset");
  s->add_option("--count", synth.count, "number of records")->required();
  s->add_option("--seed", synth.seed, "dataset seed")->required();
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--height", synth.height);
  s->add_option("--width", synth.width);
  s->add_option("--frames", synth.frames);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train a model on a dataset");
  t->add_option("--config", train.config, "run config (INI)")->required()->check(CLI::ExistingFile);
  t->add_option("--data", train.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  t->add_option("--out", train.out, "output directory")->required();
  t->add_option("--seed", train.seed, "overrides the config seed");
  t->add_option("--steps", train.steps, "overrides max steps");
  t->add_option("--resume", train.resume, "checkpoint to continue from")->check(CLI::ExistingFile);

  EditArgs edit;
  auto* e = app.add_subcommand("edit", "insert a reference subject into a video");
  e->add_option("--ckpt", edit.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  e->add_option("--cond", edit.cond, "condition video (.givvid or frame directory)");
  e->add_option("--ref", edit.refs, "reference image(s)");
  e->add_option("--prompt", edit.prompt, "text prompt");
  e->add_option("--mask", edit.mask, "first-frame mask (optional)");
  e->add_option("--s1", edit.s1, "text guidance scale");
  e->add_option("--s2", edit.s2, "image guidance scale");
  e->add_option("--steps", edit.steps, "sampling steps");
  e->add_option("--seed", edit.seed, "sampling seed")->required();
  e->add_option("--out", edit.out, "output video or directory")->required();
  e->add_option("--data", edit.data, "edit every record of this dataset instead");
  e->add_flag("--frames", edit.frames, "write PPM frames instead of a .givvid file");

  EvalArgs eval;
  auto* v = app.add_subcommand("eval", "score generated videos against targets");
  v->add_option("--gen", eval.gen, "generated videos")->required()->check(CLI::ExistingDirectory);
  v->add_option("--target", eval.target, "target videos")->required()->check(CLI::ExistingDirectory);
  v->add_option("--prompts", eval.prompts, "JSON lines with id and prompt")
      ->required()
      ->check(CLI::ExistingFile);
  v->add_option("--out", eval.out, "report path");

  std::uint64_t grad_seed = 0;
  auto* g = app.add_subcommand("grad-check", "finite-difference check of every primitive");
  g->add_option("--seed", grad_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*s) return run_synth(synth);
    if (*t) return run_train(train);
    if (*e) return run_edit(edit);
    if (*v) return run_eval(eval);
    if (*g) return run_grad_check(grad_seed);
  } catch (const giv::ShapeError& ex) {
    std::cerr << "error[shape]: " << ex.what() << '\n';
    return 3;
  } catch (const giv::ContractError& ex) {
    std::cerr << "error[contract]: " << ex.what() << '\n';
    return 4;
  } catch (const giv::IoError& ex) {
    std::cerr << "error[io]: " << ex.what() << '\n';
    return 5;
  } catch (const giv::NumericError& ex) {
    std::cerr << "error[numeric]: " << ex.what() << '\n';
    return 6;
  } catch (const std::exception& ex) {
    std::cerr << "error[internal]: " << ex.what() << '\n';
    return 7;
  }
  return 0;
}
