#include "giv/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "giv/error.hpp"
#include "giv/rng.hpp"
#include "giv/synth.hpp"

namespace giv {

namespace {

constexpr double kSymmetryTol = 1e-6;
constexpr double kEigenFloor = -1e-8;
constexpr double kResidueTol = 1e-6;

std::vector<Eigen::VectorXd> embed_frames(const std::vector<Video>& videos,
                                          const FrameEmbedder& e) {
  std::vector<Eigen::VectorXd> out;
  for (const auto& v : videos) {
    for (std::int64_t f = 0; f < v.frames; ++f) out.push_back(e.embed(v, f));
  }
  return out;
}

std::uint64_t word_key(const std::string& w) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : w) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Eigen::MatrixXd psd_matrix_sqrt(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw ContractError("psd_matrix_sqrt: matrix is not square");
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > kSymmetryTol) {
    throw ContractError("psd_matrix_sqrt: matrix is not symmetric");
  }
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) throw ContractError("psd_matrix_sqrt: eigensolver failed");
  Eigen::VectorXd lambda = eig.eigenvalues();
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda(i) < kEigenFloor) {
      throw ContractError("psd_matrix_sqrt: matrix has negative eigenvalue " +
                          std::to_string(lambda(i)));
    }
    lambda(i) = std::sqrt(std::max(lambda(i), 0.0));
  }
  const auto& v = eig.eigenvectors();
  return v * lambda.asDiagonal() * v.transpose();
}

double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& cov1,
                        const Eigen::VectorXd& mu2, const Eigen::MatrixXd& cov2) {
  const auto d = mu1.size();
  if (mu2.size() != d || cov1.rows() != d || cov1.cols() != d || cov2.rows() != d ||
      cov2.cols() != d) {
    throw ContractError("frechet_distance: dimension mismatch");
  }
  const Eigen::MatrixXd s1 = psd_matrix_sqrt(cov1);
  Eigen::MatrixXd inner = s1 * cov2 * s1;
  inner = 0.5 * (inner + inner.transpose());
  const double trace_term = cov1.trace() + cov2.trace() - 2.0 * psd_matrix_sqrt(inner).trace();
  double value = (mu1 - mu2).squaredNorm() + trace_term;
  if (value < 0.0) {
    if (-value >= kResidueTol) {
      throw ContractError("frechet_distance: negative residue " + std::to_string(value));
    }
    value = 0.0;
  }
  return value;
}

FeatureStats feature_statistics(const std::vector<Eigen::VectorXd>& features,
                                bool allow_shrinkage) {
  if (features.size() < 2) throw ContractError("feature_statistics: need at least 2 samples");
  const auto d = features.front().size();
  FeatureStats s;
  s.count = features.size();
  s.mean = Eigen::VectorXd::Zero(d);
  for (const auto& f : features) s.mean += f;
  s.mean /= static_cast<double>(features.size());
  s.cov = Eigen::MatrixXd::Zero(d, d);
  for (const auto& f : features) {
    const Eigen::VectorXd c = f - s.mean;
    s.cov.noalias() += c * c.transpose();
  }
  s.cov /= static_cast<double>(features.size() - 1);
  if (static_cast<Eigen::Index>(features.size()) < d + 1) {
    if (!allow_shrinkage) {
      throw ContractError("feature_statistics: " + std::to_string(features.size()) +
                          " samples for " + std::to_string(d) + " dims needs shrinkage");
    }
    const double lambda = 1e-6 * s.cov.trace() / static_cast<double>(d);
    s.cov += lambda * Eigen::MatrixXd::Identity(d, d);
    s.shrunk = true;
  }
  return s;
}

const Eigen::MatrixXd& FrameEmbedder::projection(std::int64_t inputs) const {
  if (proj_.cols() != inputs) {
    Rng rng = derive_rng(seed_, {static_cast<std::uint64_t>(inputs)});
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(inputs)));
    proj_.resize(dim_, inputs);
    for (Eigen::Index j = 0; j < proj_.cols(); ++j) {
      for (Eigen::Index i = 0; i < proj_.rows(); ++i) proj_(i, j) = normal(rng);
    }
  }
  return proj_;
}

Eigen::VectorXd FrameEmbedder::embed(const Video& video, std::int64_t frame) const {
  const auto n = video.frame_stride();
  const auto& p = projection(n);
  Eigen::VectorXd x(n);
  const float* src = video.data.data() + frame * n;
  for (std::int64_t i = 0; i < n; ++i) x(i) = static_cast<double>(src[i]) - 0.5;
  return p * x;
}

Eigen::VectorXd FrameEmbedder::embed_pooled(const Video& video) const {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(dim_);
  for (std::int64_t f = 0; f < video.frames; ++f) acc += embed(video, f);
  return acc / static_cast<double>(video.frames);
}

std::string FrameEmbedder::describe() const {
  return "frame(d=" + std::to_string(dim_) + ",seed=" + std::to_string(seed_) + ")";
}

Eigen::VectorXd ClipEmbedder::embed(const Video& clip) const {
  const auto d = frames_.dim();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(2 * d);
  Eigen::VectorXd prev;
  for (std::int64_t f = 0; f < clip.frames; ++f) {
    const auto e = frames_.embed(clip, f);
    out.head(d) += e;
    if (f > 0) out.tail(d) += e - prev;
    prev = e;
  }
  out.head(d) /= static_cast<double>(clip.frames);
  if (clip.frames > 1) out.tail(d) /= static_cast<double>(clip.frames - 1);
  return out;
}

std::string ClipEmbedder::describe() const { return "clip[" + frames_.describe() + "]"; }

Eigen::VectorXd TextEmbedder::embed(const std::string& text) const {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(dim_);
  std::istringstream is(text);
  std::string word;
  int words = 0;
  while (is >> word) {
    Rng rng = derive_rng(seed_, {word_key(word)});
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < acc.size(); ++i) acc(i) += normal(rng);
    ++words;
  }
  if (words > 0) acc /= static_cast<double>(words);
  return acc;
}

std::string TextEmbedder::describe() const {
  return "text(d=" + std::to_string(dim_) + ",seed=" + std::to_string(seed_) + ")";
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw ContractError("cosine_similarity: dimension mismatch");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

double fid(const std::vector<Video>& frames_a, const std::vector<Video>& frames_b,
           const FrameEmbedder& embedder, bool allow_shrinkage) {
  const auto a = feature_statistics(embed_frames(frames_a, embedder), allow_shrinkage);
  const auto b = feature_statistics(embed_frames(frames_b, embedder), allow_shrinkage);
  return frechet_distance(a.mean, a.cov, b.mean, b.cov);
}

double fvd(const std::vector<Video>& clips_a, const std::vector<Video>& clips_b,
           const ClipEmbedder& embedder, bool allow_shrinkage) {
  std::vector<Eigen::VectorXd> ea, eb;
  for (const auto& c : clips_a) ea.push_back(embedder.embed(c));
  for (const auto& c : clips_b) eb.push_back(embedder.embed(c));
  const auto a = feature_statistics(ea, allow_shrinkage);
  const auto b = feature_statistics(eb, allow_shrinkage);
  return frechet_distance(a.mean, a.cov, b.mean, b.cov);
}

SimilarityScores similarity_scores(const std::vector<Video>& generated,
                                   const std::vector<Video>& target,
                                   const std::vector<std::string>& prompts,
                                   const FrameEmbedder& clip_image,
                                   const FrameEmbedder& dino_image, const TextEmbedder& text) {
  if (generated.size() != target.size() || generated.size() != prompts.size()) {
    throw ContractError("similarity_scores: generated/target/prompt counts differ");
  }
  if (generated.empty()) throw ContractError("similarity_scores: empty sets");
  if (text.dim() != clip_image.dim()) {
    throw ContractError("similarity_scores: text and image embedders must share a space");
  }
  SimilarityScores s;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    const auto g_clip = clip_image.embed_pooled(generated[i]);
    s.clip_i += cosine_similarity(g_clip, clip_image.embed_pooled(target[i]));
    s.dino_i += cosine_similarity(dino_image.embed_pooled(generated[i]),
                                  dino_image.embed_pooled(target[i]));
    s.clip_t += cosine_similarity(g_clip, text.embed(prompts[i]));
  }
  const auto n = static_cast<double>(generated.size());
  s.clip_i /= n;
  s.dino_i /= n;
  s.clip_t /= n;
  return s;
}

std::string EmbedderSuite::config_hash() const {
  return fnv1a_hex(fid_frames.describe() + ";" + fvd_clips.describe() + ";" +
                   clip_image.describe() + ";" + dino_image.describe() + ";" + text.describe());
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["FID"] = fid;
  j["FVD"] = fvd;
  j["CLIP-I"] = clip_i;
  j["DINO-I"] = dino_i;
  j["CLIP-T"] = clip_t;
  j["count"] = count;
  j["embedder_hash"] = embedder_hash;
  return j.dump();
}

std::string MetricReport::to_table() const {
  std::ostringstream os;
  os << std::left << std::setw(12) << "FID (lower)" << std::setw(12) << "FVD (lower)"
     << std::setw(13) << "CLIP-I (up)" << std::setw(13) << "DINO-I (up)" << std::setw(13)
     << "CLIP-T (up)" << '\n';
  os << std::fixed << std::setprecision(4) << std::setw(12) << fid << std::setw(12) << fvd
     << std::setw(13) << clip_i << std::setw(13) << dino_i << std::setw(13) << clip_t << '\n';
  return os.str();
}

MetricReport evaluate_sets(const std::vector<Video>& generated, const std::vector<Video>& target,
                           const std::vector<std::string>& prompts,
                           const EmbedderSuite& embedders) {
  if (generated.size() != target.size()) {
    throw ContractError("evaluate: generated and target sets differ in size");
  }
  MetricReport r;
  r.fid = fid(generated, target, embedders.fid_frames);
  r.fvd = fvd(generated, target, embedders.fvd_clips);
  const auto s = similarity_scores(generated, target, prompts, embedders.clip_image,
                                   embedders.dino_image, embedders.text);
  r.clip_i = s.clip_i;
  r.dino_i = s.dino_i;
  r.clip_t = s.clip_t;
  r.count = generated.size();
  r.embedder_hash = embedders.config_hash();
  return r;
}

}  // namespace giv
