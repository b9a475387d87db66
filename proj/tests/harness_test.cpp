#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include <sys/wait.h>

#include "giv/checkpoint.hpp"
#include "giv/error.hpp"
#include "giv/pipeline.hpp"
#include "giv/run_config.hpp"
#include "giv/trainer.hpp"
#include "giv/video_io.hpp"
#include "test_util.hpp"

using namespace giv;
namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig tiny_config() {
  RunConfig cfg;
  cfg.frames = 5;
  cfg.height = 16;
  cfg.width = 16;
  cfg.model.depth = 1;
  cfg.model.width = 16;
  cfg.model.heads = 2;
  cfg.model.max_video_frames = 3;
  cfg.derive_model_shape();
  cfg.optimizer.lr = 1e-3;
  cfg.batch_size = 2;
  cfg.max_steps = 4;
  cfg.checkpoint_every = 2;
  cfg.seed = 21;
  return cfg;
}

std::vector<LatentQuintuple> tiny_data(const RunConfig& cfg, int count) {
  std::vector<LatentQuintuple> out;
  for (int i = 0; i < count; ++i) {
    const auto r = synthesize_record(5, static_cast<std::uint64_t>(i),
                                     {cfg.height, cfg.width, cfg.frames});
    Quintuple q;
    q.prompt = r.prompt;
    q.references = {r.reference};
    q.condition = r.condition;
    q.target = r.target;
    q.mask = Video(1, 1, cfg.height, cfg.width);
    std::copy_n(r.mask.data.begin(), q.mask.data.size(), q.mask.data.begin());
    out.push_back(encode_quintuple(q, cfg.codec));
  }
  return out;
}

#ifdef GIV_CLI_PATH
int run_cli(const std::string& args) {
  const std::string cmd = std::string(GIV_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}
#endif

}  // namespace

TEST_SUITE("run_config") {

TEST_CASE("desk config parses") {
  const auto cfg = load_run_config(fs::path(GIV_SOURCE_DIR) / "configs" / "desk.ini");
  CHECK(cfg.frames == 9);
  CHECK(cfg.model.depth == 4);
  CHECK(cfg.model.latent_channels == 24);
  CHECK(cfg.model.latent_height == 16);
  CHECK(cfg.optimizer.beta2 == 0.95);
  CHECK(cfg.guidance.s1 == 6.0);
  CHECK(cfg.guidance.s2 == 1.5);
  CHECK(cfg.dropout.p_mask == 0.5);
  CHECK(cfg.seed == std::optional<std::uint64_t>(7));
  cfg.validate();
}

TEST_CASE("formatting round trips") {
  auto cfg = tiny_config();
  cfg.schedule_kind = ScheduleKind::kCosine;
  cfg.guidance.s2 = 0.0;
  const auto text = format_run_config(cfg);
  CHECK(format_run_config(parse_run_config(text)) == text);
}

TEST_CASE("unknown keys and bad values are errors") {
  CHECK_THROWS_AS(parse_run_config("[model]\ndepht = 3\n"), ContractError);
  CHECK_THROWS_AS(parse_run_config("[optimizer]\nlr = fast\n"), ContractError);
  CHECK_THROWS_AS(parse_run_config("[codec]\nmode = lossy\n"), ContractError);
  auto cfg = parse_run_config("[train]\nbatch_size = 2\n");
  CHECK_FALSE(cfg.seed.has_value());
  CHECK_THROWS_AS(cfg.require_seed(), ContractError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/config.ini"), IoError);
}

}  // TEST_SUITE

TEST_SUITE("trainer") {

TEST_CASE("AdamW settles at the bottom of a quadratic bowl") {
  const std::vector<float> target{1.5f, -2.0f, 0.25f, 3.0f};
  ag::Tensor p = ag::Tensor::zeros({4}, true);
  AdamWConfig cfg;
  cfg.lr = 0.01;
  cfg.beta2 = 0.999;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg, {{"p", p}});
  int steps = 0;
  auto worst = [&] {
    double w = 0.0;
    for (std::size_t i = 0; i < 4; ++i) w = std::max(w, std::fabs(p.data()[i] - target[i]) + 0.0);
    return w;
  };
  while (steps < 2000 && worst() > 1e-3) {
    auto g = p.mutable_grad();
    for (std::size_t i = 0; i < 4; ++i) g[i] = 2.0f * (p.data()[i] - target[i]);
    opt.step();
    ++steps;
  }
  CHECK(worst() <= 1e-3);
  CHECK(opt.steps_taken() == steps);
}

TEST_CASE("zero learning rate leaves parameters untouched") {
  ag::Tensor p({3}, {1.0f, -1.0f, 2.0f}, true);
  AdamWConfig cfg;
  cfg.lr = 0.0;
  AdamW opt(cfg, {{"p", p}});
  for (int i = 0; i < 5; ++i) {
    auto g = p.mutable_grad();
    for (auto& v : g) v = 3.0f;
    opt.step();
  }
  CHECK(std::vector<float>(p.data().begin(), p.data().end()) == std::vector<float>{1, -1, 2});
}

TEST_CASE("weight decay is decoupled from the gradient") {
  ag::Tensor p({1}, {2.0f}, true);
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  AdamW opt(cfg, {{"p", p}});
  p.mutable_grad()[0] = 0.0f;
  opt.step();
  // Zero gradient: only the decay acts, 2 * (1 - 0.1 * 0.5).
  CHECK(p.data()[0] == doctest::Approx(1.9).epsilon(1e-6));
}

TEST_CASE("resumed training matches an uninterrupted run bit for bit") {
  const auto cfg = tiny_config();
  const auto data = tiny_data(cfg, 3);

  Trainer straight(cfg, data);
  const auto full = straight.train(6);

  Trainer first(cfg, data);
  first.train(3);
  const auto ckpt = first.checkpoint();
  Trainer second(cfg, data);
  second.restore(ckpt);
  CHECK(second.step() == 3);
  const auto rest = second.train(3);

  for (int i = 0; i < 3; ++i) {
    CHECK(rest[static_cast<std::size_t>(i)].step == full[static_cast<std::size_t>(3 + i)].step);
    CHECK(rest[static_cast<std::size_t>(i)].loss == full[static_cast<std::size_t>(3 + i)].loss);
  }
  const auto a = straight.model().state(), b = second.model().state();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(a[i].data == b[i].data);
  }
}

TEST_CASE("a non-finite loss stops training") {
  const auto cfg = tiny_config();
  auto data = tiny_data(cfg, 1);
  data[0].target.data[0] = std::numeric_limits<float>::quiet_NaN();
  Trainer trainer(cfg, data);
  CHECK_THROWS_AS(trainer.train_step(), NumericError);
}

TEST_CASE("training loop writes its outputs") {
  test::TempDir dir("train_run");
  auto cfg = tiny_config();
  build_dataset(3, 5, dir.path() / "data", {cfg.height, cfg.width, cfg.frames});
  cfg.data_dir = dir.path() / "data";
  cfg.out_dir = dir.path() / "run";
  run_training(cfg);
  CHECK(fs::exists(cfg.out_dir / "final.ckpt"));
  CHECK(fs::exists(cfg.out_dir / "config.ini"));
  const auto curve = read_text(cfg.out_dir / "loss.csv");
  CHECK(std::count(curve.begin(), curve.end(), '\n') >= cfg.max_steps);

  const auto m = EditModel::load(cfg.out_dir / "final.ckpt");
  CHECK(m.model.config() == cfg.model);
  CHECK(m.schedule.steps() == cfg.schedule_steps);
}

}  // TEST_SUITE

TEST_SUITE("pipeline") {

TEST_CASE("editing is deterministic and accepts an omitted mask") {
  const auto cfg = tiny_config();
  Trainer trainer(cfg, tiny_data(cfg, 1));
  const auto m = EditModel::from_checkpoint(trainer.checkpoint());
  const auto rec = synthesize_record(8, 0, {cfg.height, cfg.width, cfg.frames});

  EditRequest req;
  req.condition = rec.condition;
  req.references = {rec.reference};
  req.prompt = rec.prompt;
  req.guidance = GuidanceConfig{6.0, 1.5, 3};
  req.seed = 4;
  const auto a = edit_video(m, req);
  CHECK(a.same_dims(rec.condition));
  CHECK(a == edit_video(m, req));
  req.seed = 5;
  CHECK_FALSE(a == edit_video(m, req));

  req.references.clear();
  CHECK(edit_video(m, req).same_dims(rec.condition));

  req.condition = Video(5, 3, 8, 8, 0.5f);
  CHECK_THROWS_AS(edit_video(m, req), ShapeError);
}

TEST_CASE("masked mean squared error") {
  Video a(1, 3, 1, 2, 0.0f), b(1, 3, 1, 2, 0.0f), mask(1, 1, 1, 2, 0.0f);
  b.at(0, 0, 0, 0) = 1.0f;
  b.at(0, 0, 0, 1) = 0.5f;
  mask.at(0, 0, 0, 0) = 1.0f;
  CHECK(masked_mse(a, b, mask) == doctest::Approx(1.0 / 3.0));
  mask.at(0, 0, 0, 1) = 1.0f;
  CHECK(masked_mse(a, b, mask) == doctest::Approx(1.25 / 6.0));
  CHECK(masked_mse(a, b, Video(1, 1, 1, 2, 0.0f)) == 0.0);
}

TEST_CASE("evaluation pairs videos by id") {
  test::TempDir dir("eval_pairs");
  Rng rng = derive_rng(3, {});
  fs::create_directories(dir.path() / "gen");
  fs::create_directories(dir.path() / "tgt");
  for (const std::string id : {"a", "b", "c"}) {
    write_video(dir.path() / "gen" / (id + ".givvid"), test::random_video(3, 3, 8, 8, rng));
    write_video(dir.path() / "tgt" / (id + "_target.givvid"), test::random_video(3, 3, 8, 8, rng));
  }
  {
    std::ofstream p(dir.path() / "prompts.jsonl");
    p << R"({"id": "a", "prompt": "a red circle"})" << "\n"
      << R"({"id": "b", "prompt": "a blue square"})" << "\n"
      << R"({"id": "c", "prompt": "a cyan triangle"})" << "\n";
  }
  const auto r =
      evaluate_directories(dir.path() / "gen", dir.path() / "tgt", dir.path() / "prompts.jsonl");
  CHECK(r.count == 3);

  write_video(dir.path() / "gen" / "d.givvid", test::random_video(3, 3, 8, 8, rng));
  try {
    evaluate_directories(dir.path() / "gen", dir.path() / "tgt", dir.path() / "prompts.jsonl");
    FAIL("unmatched id accepted");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("d") != std::string::npos);
  }
}

#ifdef GIV_CLI_PATH
TEST_CASE("command line exit codes") {
  test::TempDir dir("cli");
  CHECK(run_cli("synth --count 2 --seed 3 --out " + (dir.path() / "data").string()) == 0);
  CHECK(fs::exists(dir.path() / "data" / kManifestName));
  CHECK(run_cli("") != 0);
  CHECK(run_cli("bogus") != 0);

  fs::create_directories(dir.path() / "empty");
  fs::create_directories(dir.path() / "gen");
  write_video(dir.path() / "gen" / "x.givvid", Video(3, 3, 8, 8, 0.5f));
  {
    std::ofstream p(dir.path() / "p.jsonl");
    p << R"({"id": "x", "prompt": "a red circle"})" << "\n";
  }
  const auto data = (dir.path() / "data").string();
  // A generated video without a target is an I/O error.
  CHECK(run_cli("eval --gen " + (dir.path() / "gen").string() + " --target " +
                (dir.path() / "empty").string() + " --prompts " +
                (dir.path() / "p.jsonl").string()) == 5);

  {
    std::ofstream cfg(dir.path() / "bad.ini");
    cfg << "[model]\nlayers = 3\n";
  }
  CHECK(run_cli("train --config " + (dir.path() / "bad.ini").string() + " --data " + data +
                " --out " + (dir.path() / "run").string()) == 4);
}
#endif

}  // TEST_SUITE
