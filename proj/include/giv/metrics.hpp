#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "giv/array4.hpp"

namespace giv {

// Symmetric PSD square root via eigendecomposition; eigenvalues down to
// -1e-8 are clamped to zero. Throws ContractError if M is asymmetric
// beyond 1e-6 or has a more negative eigenvalue.
Eigen::MatrixXd psd_matrix_sqrt(const Eigen::MatrixXd& m);

// |mu1 - mu2|^2 + tr(C1 + C2 - 2 sqrt(C1^1/2 C2 C1^1/2)), clamped at zero.
double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& cov1,
                        const Eigen::VectorXd& mu2, const Eigen::MatrixXd& cov2);

struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  std::size_t count = 0;
  bool shrunk = false;
};

// Mean and unbiased covariance of row features. With fewer than dim+1
// samples the covariance gets lambda*I, lambda = 1e-6 * trace / dim, when
// shrinkage is allowed, otherwise ContractError.
FeatureStats feature_statistics(const std::vector<Eigen::VectorXd>& features,
                                bool allow_shrinkage = true);

// Seeded Gaussian random projection of a single frame (pixels centred at 0.5).
class FrameEmbedder {
 public:
  FrameEmbedder(std::int64_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {}
  std::int64_t dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }
  Eigen::VectorXd embed(const Video& video, std::int64_t frame) const;
  // Mean frame embedding.
  Eigen::VectorXd embed_pooled(const Video& video) const;
  std::string describe() const;

 private:
  const Eigen::MatrixXd& projection(std::int64_t inputs) const;

  std::int64_t dim_;
  std::uint64_t seed_;
  mutable Eigen::MatrixXd proj_;
};

// concat(mean of frame embeddings, mean of adjacent-frame differences).
class ClipEmbedder {
 public:
  explicit ClipEmbedder(FrameEmbedder frames) : frames_(std::move(frames)) {}
  std::int64_t dim() const { return 2 * frames_.dim(); }
  Eigen::VectorXd embed(const Video& clip) const;
  std::string describe() const;

 private:
  FrameEmbedder frames_;
};

// Mean of per-word seeded Gaussian vectors.
class TextEmbedder {
 public:
  TextEmbedder(std::int64_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {}
  std::int64_t dim() const { return dim_; }
  Eigen::VectorXd embed(const std::string& text) const;
  std::string describe() const;

 private:
  std::int64_t dim_;
  std::uint64_t seed_;
};

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

double fid(const std::vector<Video>& frames_a, const std::vector<Video>& frames_b,
           const FrameEmbedder& embedder, bool allow_shrinkage = true);
double fvd(const std::vector<Video>& clips_a, const std::vector<Video>& clips_b,
           const ClipEmbedder& embedder, bool allow_shrinkage = true);

struct SimilarityScores {
  double clip_i = 0.0;
  double dino_i = 0.0;
  double clip_t = 0.0;
};

SimilarityScores similarity_scores(const std::vector<Video>& generated,
                                   const std::vector<Video>& target,
                                   const std::vector<std::string>& prompts,
                                   const FrameEmbedder& clip_image,
                                   const FrameEmbedder& dino_image, const TextEmbedder& text);

// Proxy feature extractors standing in for the benchmark's networks.
struct EmbedderSuite {
  FrameEmbedder fid_frames{32, 101};
  ClipEmbedder fvd_clips{FrameEmbedder{16, 102}};
  FrameEmbedder clip_image{64, 103};
  FrameEmbedder dino_image{96, 104};
  TextEmbedder text{64, 105};

  std::string config_hash() const;
};

struct MetricReport {
  double fid = 0.0;
  double fvd = 0.0;
  double clip_i = 0.0;
  double dino_i = 0.0;
  double clip_t = 0.0;
  std::size_t count = 0;
  std::string embedder_hash;

  // Single-line JSON, keys in column order FID, FVD, CLIP-I, DINO-I, CLIP-T.
  std::string to_json() const;
  // Aligned plain-text table with the same column order.
  std::string to_table() const;
};

MetricReport evaluate_sets(const std::vector<Video>& generated, const std::vector<Video>& target,
                           const std::vector<std::string>& prompts,
                           const EmbedderSuite& embedders = {});

}  // namespace giv
