#include "giv/run_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "giv/error.hpp"
#include "giv/video_io.hpp"

namespace giv {

namespace pt = boost::property_tree;

namespace {

template <class T>
void read(const pt::ptree& tree, const std::string& key, T& out, std::set<std::string>& seen) {
  if (auto v = tree.get_optional<std::string>(key)) {
    seen.insert(key);
    try {
      out = tree.get<T>(key);
    } catch (const pt::ptree_error&) {
      throw ContractError("config: bad value for " + key + ": '" + *v + "'");
    }
  }
}

}  // namespace

void RunConfig::derive_model_shape() {
  const auto shape = latent_shape(frames, height, width, codec);
  model.latent_channels = shape.channels;
  model.latent_height = shape.height;
  model.latent_width = shape.width;
  model.max_video_frames = std::max(model.max_video_frames, shape.frames);
}

void RunConfig::validate() const {
  validate_codec(codec);
  const auto shape = latent_shape(frames, height, width, codec);
  model.validate();
  if (model.latent_channels != shape.channels || model.latent_height != shape.height ||
      model.latent_width != shape.width || model.max_video_frames < shape.frames) {
    throw ContractError("config: model latent grid does not match the codec");
  }
  guidance.validate();
  if (batch_size < 1 || max_steps < 0) throw ContractError("config: bad batch/steps");
  if (optimizer.lr < 0.0 || optimizer.weight_decay < 0.0 || optimizer.beta1 < 0.0 ||
      optimizer.beta1 >= 1.0 || optimizer.beta2 < 0.0 || optimizer.beta2 >= 1.0) {
    throw ContractError("config: optimizer hyperparameters out of range");
  }
  for (double p : {dropout.p_prompt, dropout.p_ref, dropout.p_mask}) {
    if (p < 0.0 || p > 1.0) throw ContractError("config: dropout probability outside [0,1]");
  }
}

std::uint64_t RunConfig::require_seed() const {
  if (!seed) throw ContractError("config: train.seed is mandatory");
  return *seed;
}

RunConfig parse_run_config(const std::string& text) {
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ContractError(std::string("config: ") + e.what());
  }
  RunConfig cfg;
  std::set<std::string> seen;
  read(tree, "video.frames", cfg.frames, seen);
  read(tree, "video.height", cfg.height, seen);
  read(tree, "video.width", cfg.width, seen);

  read(tree, "codec.spatial_factor", cfg.codec.spatial_factor, seen);
  read(tree, "codec.temporal_factor", cfg.codec.temporal_factor, seen);
  std::string mode = codec_mode_name(cfg.codec.mode);
  read(tree, "codec.mode", mode, seen);
  if (mode == "lossless") {
    cfg.codec.mode = CodecMode::kLosslessPacking;
    cfg.codec.channels = cfg.codec.packed_channels();
  } else if (mode == "projected") {
    cfg.codec.mode = CodecMode::kProjected;
  } else {
    throw ContractError("config: codec.mode must be lossless or projected");
  }
  read(tree, "codec.channels", cfg.codec.channels, seen);
  read(tree, "codec.projection_seed", cfg.codec.projection_seed, seen);

  read(tree, "model.depth", cfg.model.depth, seen);
  read(tree, "model.width", cfg.model.width, seen);
  read(tree, "model.heads", cfg.model.heads, seen);
  read(tree, "model.max_prompt_tokens", cfg.model.max_prompt_tokens, seen);
  read(tree, "model.vocab_size", cfg.model.vocab_size, seen);
  read(tree, "model.ffn_multiplier", cfg.model.ffn_multiplier, seen);
  read(tree, "model.max_video_frames", cfg.model.max_video_frames, seen);
  read(tree, "model.positional_encoding", cfg.model.positional_encoding, seen);
  read(tree, "model.seed", cfg.model_seed, seen);

  read(tree, "schedule.steps", cfg.schedule_steps, seen);
  std::string kind = schedule_kind_name(cfg.schedule_kind);
  read(tree, "schedule.kind", kind, seen);
  cfg.schedule_kind = parse_schedule_kind(kind);

  read(tree, "optimizer.lr", cfg.optimizer.lr, seen);
  read(tree, "optimizer.beta1", cfg.optimizer.beta1, seen);
  read(tree, "optimizer.beta2", cfg.optimizer.beta2, seen);
  read(tree, "optimizer.eps", cfg.optimizer.eps, seen);
  read(tree, "optimizer.weight_decay", cfg.optimizer.weight_decay, seen);

  read(tree, "dropout.prompt", cfg.dropout.p_prompt, seen);
  read(tree, "dropout.reference", cfg.dropout.p_ref, seen);
  read(tree, "dropout.mask", cfg.dropout.p_mask, seen);

  read(tree, "guidance.s1", cfg.guidance.s1, seen);
  read(tree, "guidance.s2", cfg.guidance.s2, seen);
  read(tree, "guidance.steps", cfg.guidance.steps, seen);

  read(tree, "train.batch_size", cfg.batch_size, seen);
  read(tree, "train.max_steps", cfg.max_steps, seen);
  read(tree, "train.checkpoint_every", cfg.checkpoint_every, seen);
  std::uint64_t seed = 0;
  std::set<std::string> seed_seen;
  read(tree, "train.seed", seed, seed_seen);
  if (!seed_seen.empty()) {
    cfg.seed = seed;
    seen.insert("train.seed");
  }

  std::string data, out;
  read(tree, "paths.data", data, seen);
  read(tree, "paths.out", out, seen);
  cfg.data_dir = data;
  cfg.out_dir = out;

  for (const auto& [section, body] : tree) {
    for (const auto& [key, value] : body) {
      if (!seen.count(section + "." + key)) {
        throw ContractError("config: unknown key " + section + "." + key);
      }
    }
  }
  cfg.derive_model_shape();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_file(path));
}

std::string format_run_config(const RunConfig& cfg) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "[video]\nframes = " << cfg.frames << "\nheight = " << cfg.height
     << "\nwidth = " << cfg.width << "\n\n";
  os << "[codec]\nspatial_factor = " << cfg.codec.spatial_factor
     << "\ntemporal_factor = " << cfg.codec.temporal_factor
     << "\nmode = " << codec_mode_name(cfg.codec.mode) << "\nchannels = " << cfg.codec.channels
     << "\nprojection_seed = " << cfg.codec.projection_seed << "\n\n";
  os << "[model]\ndepth = " << cfg.model.depth << "\nwidth = " << cfg.model.width
     << "\nheads = " << cfg.model.heads << "\nmax_prompt_tokens = " << cfg.model.max_prompt_tokens
     << "\nvocab_size = " << cfg.model.vocab_size
     << "\nffn_multiplier = " << cfg.model.ffn_multiplier
     << "\nmax_video_frames = " << cfg.model.max_video_frames
     << "\npositional_encoding = " << (cfg.model.positional_encoding ? "true" : "false")
     << "\nseed = " << cfg.model_seed << "\n\n";
  os << "[schedule]\nsteps = " << cfg.schedule_steps
     << "\nkind = " << schedule_kind_name(cfg.schedule_kind) << "\n\n";
  os << "[optimizer]\nlr = " << cfg.optimizer.lr << "\nbeta1 = " << cfg.optimizer.beta1
     << "\nbeta2 = " << cfg.optimizer.beta2 << "\neps = " << cfg.optimizer.eps
     << "\nweight_decay = " << cfg.optimizer.weight_decay << "\n\n";
  os << "[dropout]\nprompt = " << cfg.dropout.p_prompt << "\nreference = " << cfg.dropout.p_ref
     << "\nmask = " << cfg.dropout.p_mask << "\n\n";
  os << "[guidance]\ns1 = " << cfg.guidance.s1 << "\ns2 = " << cfg.guidance.s2
     << "\nsteps = " << cfg.guidance.steps << "\n\n";
  os << "[train]\nbatch_size = " << cfg.batch_size << "\nmax_steps = " << cfg.max_steps
     << "\ncheckpoint_every = " << cfg.checkpoint_every << "\n";
  if (cfg.seed) os << "seed = " << *cfg.seed << "\n";
  os << "\n[paths]\ndata = " << cfg.data_dir.string() << "\nout = " << cfg.out_dir.string()
     << "\n";
  return os.str();
}

}  // namespace giv
