#include "giv/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "giv/error.hpp"
#include "giv/rng.hpp"
#include "giv/trainer.hpp"
#include "giv/video_io.hpp"

namespace giv {

namespace {

LatentBlock stack_references(const std::vector<Video>& refs, const CodecConfig& codec,
                             std::int64_t h, std::int64_t w) {
  LatentBlock out;
  out.frames = static_cast<std::int64_t>(refs.size());
  out.channels = codec.channels;
  out.height = h;
  out.width = w;
  for (const auto& r : refs) {
    if (r.frames != 1 || r.channels != 3) {
      throw ShapeError("reference images must be 1 x 3 x H x W, got " +
                       std::to_string(r.frames) + " x " + std::to_string(r.channels));
    }
    const auto z = encode(r, codec);
    if (z.height != h || z.width != w) {
      throw ShapeError("reference image size does not match the condition video");
    }
    out.data.insert(out.data.end(), z.data.begin(), z.data.end());
  }
  return out;
}

}  // namespace

LatentQuintuple encode_quintuple(const Quintuple& q, const CodecConfig& codec) {
  LatentQuintuple out;
  out.prompt = tokenize(q.prompt);
  out.condition = encode(q.condition, codec);
  out.target = encode(q.target, codec);
  out.references = stack_references(q.references, codec, out.target.height, out.target.width);
  out.mask = q.mask;
  out.present = q.present;
  return out;
}

EditModel EditModel::from_checkpoint(const std::vector<NamedArray>& records) {
  EditModel m{GivTransformer::from_state(records), schedule_from_records(records),
              codec_from_records(records)};
  if (m.model.config().latent_channels != m.codec.channels) {
    throw ContractError("checkpoint model expects " +
                        std::to_string(m.model.config().latent_channels) +
                        " latent channels but its codec produces " +
                        std::to_string(m.codec.channels));
  }
  return m;
}

EditModel EditModel::load(const std::filesystem::path& path) {
  return from_checkpoint(read_checkpoint(path));
}

Video edit_video(const EditModel& m, const EditRequest& request) {
  request.guidance.validate();
  const auto& cfg = m.model.config();
  const auto& cond = request.condition;
  if (cond.channels != 3) throw ShapeError("condition video must have 3 channels");
  SamplingConditions sc;
  sc.condition = encode(cond, m.codec);
  if (sc.condition.height != cfg.latent_height || sc.condition.width != cfg.latent_width) {
    throw ShapeError("condition video encodes to a " + std::to_string(sc.condition.height) + "x" +
                     std::to_string(sc.condition.width) + " latent grid but the checkpoint expects " +
                     std::to_string(cfg.latent_height) + "x" + std::to_string(cfg.latent_width));
  }
  if (sc.condition.frames > cfg.max_video_frames) {
    throw ShapeError("condition video has more latent frames than the checkpoint supports");
  }
  sc.references =
      stack_references(request.references, m.codec, sc.condition.height, sc.condition.width);
  if (request.mask) {
    const auto& mk = *request.mask;
    if (mk.frames != 1 || mk.channels != 1 || mk.height != cond.height ||
        mk.width != cond.width) {
      throw ShapeError("mask must be 1 x 1 x H x W matching the condition video");
    }
    sc.mask = mk;
  } else {
    sc.mask.frames = 1;
    sc.mask.channels = 1;
    sc.mask.height = cond.height;
    sc.mask.width = cond.width;
    sc.mask.data.assign(static_cast<std::size_t>(cond.height * cond.width), 0.0f);
  }
  sc.prompt = tokenize(request.prompt);
  if (static_cast<std::int64_t>(sc.prompt.size()) > cfg.max_prompt_tokens) {
    throw ShapeError("prompt has " + std::to_string(sc.prompt.size()) +
                     " tokens, the checkpoint allows " + std::to_string(cfg.max_prompt_tokens));
  }
  Rng rng = derive_rng(request.seed, {0});
  const auto plan = make_ddim_plan(m.schedule.steps(), request.guidance.steps);
  const TransformerEpsilon eps(m.model);
  const auto z0 = sample(eps, sc, plan, m.schedule, request.guidance, rng);
  return decode(z0, m.codec);
}

std::vector<std::string> edit_manifest(const EditModel& m, const Manifest& manifest,
                                       const GuidanceConfig& guidance, std::uint64_t seed,
                                       const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& rec = manifest.records[i];
    const auto loaded = load_record(manifest, rec);
    EditRequest req;
    req.condition = loaded.quintuple.condition;
    req.references = loaded.quintuple.references;
    req.mask = loaded.quintuple.mask;
    req.prompt = loaded.quintuple.prompt;
    req.guidance = guidance;
    req.seed = derive_rng(seed, {static_cast<std::uint64_t>(i)})();
    write_video(out_dir / (rec.id + ".givvid"), edit_video(m, req));
    ids.push_back(rec.id);
  }
  return ids;
}

double masked_mse(const Video& a, const Video& b, const Video& mask) {
  if (!a.same_dims(b)) throw ShapeError("masked_mse: videos differ in shape");
  if (mask.frames != a.frames || mask.channels != 1 || mask.height != a.height ||
      mask.width != a.width) {
    throw ShapeError("masked_mse: mask must be F x 1 x H x W");
  }
  double sum = 0.0;
  std::int64_t count = 0;
  for (std::int64_t f = 0; f < a.frames; ++f) {
    for (std::int64_t y = 0; y < a.height; ++y) {
      for (std::int64_t x = 0; x < a.width; ++x) {
        if (mask.at(f, 0, y, x) <= 0.5f) continue;
        for (std::int64_t c = 0; c < a.channels; ++c) {
          const double d = static_cast<double>(a.at(f, c, y, x)) - b.at(f, c, y, x);
          sum += d * d;
          ++count;
        }
      }
    }
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

std::map<std::string, Video> read_video_set(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::map<std::string, Video> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".givvid") continue;
    auto id = entry.path().stem().string();
    const std::string suffix = "_target";
    if (id.size() > suffix.size() && id.ends_with(suffix)) {
      id.resize(id.size() - suffix.size());
    } else if (id.find('_') != std::string::npos) {
      continue;  // condition, reference and mask files of a dataset
    }
    out.emplace(id, read_video(entry.path()));
  }
  return out;
}

std::map<std::string, std::string> read_prompts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read prompts from " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out[j.at("id").get<std::string>()] = j.at("prompt").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

MetricReport evaluate_directories(const std::filesystem::path& generated,
                                  const std::filesystem::path& target,
                                  const std::filesystem::path& prompts,
                                  const EmbedderSuite& embedders) {
  const auto gen = read_video_set(generated);
  const auto tgt = read_video_set(target);
  const auto text = read_prompts(prompts);
  std::vector<std::string> unmatched;
  for (const auto& [id, v] : gen) {
    if (!tgt.count(id)) unmatched.push_back(id + " (no target)");
    if (!text.count(id)) unmatched.push_back(id + " (no prompt)");
  }
  for (const auto& [id, v] : tgt) {
    if (!gen.count(id)) unmatched.push_back(id + " (no generated video)");
  }
  if (!unmatched.empty()) {
    std::ostringstream os;
    os << "unpaired ids:";
    for (const auto& u : unmatched) os << ' ' << u;
    throw IoError(os.str());
  }
  if (gen.empty()) throw IoError("no videos found in " + generated.string());
  std::vector<Video> a, b;
  std::vector<std::string> p;
  for (const auto& [id, v] : gen) {
    a.push_back(v);
    b.push_back(tgt.at(id));
    p.push_back(text.at(id));
  }
  return evaluate_sets(a, b, p, embedders);
}

}  // namespace giv
