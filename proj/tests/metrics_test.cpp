#include <doctest.h>

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "giv/error.hpp"
#include "giv/metrics.hpp"
#include "test_util.hpp"

using namespace giv;

namespace {

Eigen::MatrixXd random_psd(int d, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd a(d + 2, d);
  for (int i = 0; i < a.size(); ++i) a.data()[i] = n(rng);
  return a.transpose() * a / static_cast<double>(d);
}

Eigen::VectorXd random_vec(int d, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd v(d);
  for (int i = 0; i < d; ++i) v[i] = n(rng);
  return v;
}

// Plain two-pass mean and unbiased covariance.
void two_pass(const std::vector<Eigen::VectorXd>& xs, Eigen::VectorXd& mean,
              Eigen::MatrixXd& cov) {
  const auto d = xs.front().size();
  mean = Eigen::VectorXd::Zero(d);
  for (const auto& x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  cov = Eigen::MatrixXd::Zero(d, d);
  for (const auto& x : xs) {
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) cov(i, j) += (x[i] - mean[i]) * (x[j] - mean[j]);
    }
  }
  cov /= static_cast<double>(xs.size() - 1);
}

std::vector<Video> random_set(int count, std::int64_t frames, Rng& rng) {
  std::vector<Video> out;
  for (int i = 0; i < count; ++i) out.push_back(test::random_video(frames, 3, 8, 8, rng));
  return out;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("matrix square roots") {
  CHECK(psd_matrix_sqrt(Eigen::MatrixXd::Identity(3, 3)).isApprox(Eigen::MatrixXd::Identity(3, 3)));
  Eigen::MatrixXd d = Eigen::Vector2d(4, 9).asDiagonal();
  const auto s = psd_matrix_sqrt(d);
  CHECK(s(0, 0) == doctest::Approx(2.0));
  CHECK(s(1, 1) == doctest::Approx(3.0));
  CHECK(std::fabs(s(0, 1)) < 1e-12);

  Rng rng = derive_rng(1, {});
  for (int i = 0; i < 5; ++i) {
    const auto m = random_psd(6, rng);
    const auto r = psd_matrix_sqrt(m);
    CHECK((r * r - m).norm() < 1e-5);
  }
  Eigen::Matrix2d bad;
  bad << 1, 0.5, 0.4, 1;
  CHECK_THROWS_AS(psd_matrix_sqrt(bad), ContractError);
  Eigen::Matrix2d negative;
  negative << -1, 0, 0, 1;
  CHECK_THROWS_AS(psd_matrix_sqrt(negative), ContractError);
}

TEST_CASE("Frechet distance closed forms") {
  Rng rng = derive_rng(2, {});
  const auto mu = random_vec(4, rng);
  const auto c = random_psd(4, rng);
  CHECK(std::fabs(frechet_distance(mu, c, mu, c)) < 1e-6);

  Eigen::VectorXd m1(1), m2(1);
  Eigen::MatrixXd c1(1, 1), c2(1, 1);
  m1 << 0;
  m2 << 1;
  c1 << 1;
  c2 << 4;
  CHECK(frechet_distance(m1, c1, m2, c2) == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("Frechet distance is symmetric and non-negative") {
  Rng rng = derive_rng(3, {});
  for (int i = 0; i < 10; ++i) {
    const auto ma = random_vec(5, rng), mb = random_vec(5, rng);
    const auto ca = random_psd(5, rng), cb = random_psd(5, rng);
    const double ab = frechet_distance(ma, ca, mb, cb);
    CHECK(ab >= 0.0);
    CHECK(std::fabs(ab - frechet_distance(mb, cb, ma, ca)) < 1e-6);
  }
}

TEST_CASE("feature statistics and shrinkage") {
  Rng rng = derive_rng(4, {});
  std::vector<Eigen::VectorXd> xs;
  for (int i = 0; i < 3; ++i) xs.push_back(random_vec(4, rng));
  const auto s = feature_statistics(xs);
  CHECK(s.shrunk);
  CHECK(s.count == 3);
  CHECK_THROWS_AS(feature_statistics(xs, false), ContractError);
  for (int i = 0; i < 10; ++i) xs.push_back(random_vec(4, rng));
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  two_pass(xs, mean, cov);
  const auto full = feature_statistics(xs, false);
  CHECK_FALSE(full.shrunk);
  CHECK((full.mean - mean).norm() < 1e-12);
  CHECK((full.cov - cov).norm() < 1e-12);
}

TEST_CASE("fid matches a two-pass oracle and ignores ordering") {
  Rng rng = derive_rng(5, {});
  const FrameEmbedder e(6, 77);
  auto a = random_set(5, 3, rng);
  const auto b = random_set(4, 3, rng);
  CHECK(std::fabs(fid(a, a, e)) < 1e-5);

  std::vector<Eigen::VectorXd> ea, eb;
  for (const auto& v : a) {
    for (std::int64_t f = 0; f < v.frames; ++f) ea.push_back(e.embed(v, f));
  }
  for (const auto& v : b) {
    for (std::int64_t f = 0; f < v.frames; ++f) eb.push_back(e.embed(v, f));
  }
  Eigen::VectorXd ma, mb;
  Eigen::MatrixXd ca, cb;
  two_pass(ea, ma, ca);
  two_pass(eb, mb, cb);
  const double direct = fid(a, b, e);
  CHECK(std::fabs(direct - frechet_distance(ma, ca, mb, cb)) < 1e-6);

  std::reverse(a.begin(), a.end());
  CHECK(std::fabs(fid(a, b, e) - direct) < 1e-6);
  CHECK(fid(a, b, e) == fid(a, b, FrameEmbedder(6, 77)));
}

TEST_CASE("constant color sets are far apart") {
  std::vector<Video> red, blue;
  for (int i = 0; i < 4; ++i) {
    Video r(2, 3, 8, 8, 0.0f), b(2, 3, 8, 8, 0.0f);
    for (std::int64_t f = 0; f < 2; ++f) {
      for (std::int64_t y = 0; y < 8; ++y) {
        for (std::int64_t x = 0; x < 8; ++x) {
          r.at(f, 0, y, x) = 0.25f * static_cast<float>(i);
          b.at(f, 2, y, x) = 1.0f - 0.125f * static_cast<float>(i);
        }
      }
    }
    red.push_back(r);
    blue.push_back(b);
  }
  CHECK(fid(red, blue, FrameEmbedder(4, 1)) > 0.0);
}

TEST_CASE("fvd sees frame order") {
  Rng rng = derive_rng(6, {});
  const ClipEmbedder e(FrameEmbedder(4, 9));
  const auto clips = random_set(12, 5, rng);
  CHECK(std::fabs(fvd(clips, clips, e)) < 1e-6);

  auto shuffled = clips;
  for (auto& v : shuffled) {
    const auto plane = static_cast<std::size_t>(v.channels * v.height * v.width);
    std::vector<std::int64_t> order{4, 2, 0, 3, 1};
    Video out = v;
    for (std::size_t f = 0; f < order.size(); ++f) {
      std::copy_n(v.data.begin() + order[f] * static_cast<std::int64_t>(plane), plane,
                  out.data.begin() + static_cast<std::int64_t>(f * plane));
    }
    v = out;
  }
  CHECK(fvd(clips, shuffled, e) > 0.0);

  std::vector<Eigen::VectorXd> ea, eb;
  for (const auto& v : clips) ea.push_back(e.embed(v));
  for (const auto& v : shuffled) eb.push_back(e.embed(v));
  Eigen::VectorXd ma, mb;
  Eigen::MatrixXd ca, cb;
  two_pass(ea, ma, ca);
  two_pass(eb, mb, cb);
  CHECK(std::fabs(fvd(clips, shuffled, e) - frechet_distance(ma, ca, mb, cb)) < 1e-6);
}

TEST_CASE("cosine similarity") {
  Eigen::VectorXd a(2), b(2);
  a << 1, 0;
  b << 0, 3;
  CHECK(cosine_similarity(a, b) == 0.0);
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0));
  CHECK(cosine_similarity(a, -a) == doctest::Approx(-1.0));
}

TEST_CASE("similarity scores of identical sets") {
  Rng rng = derive_rng(7, {});
  const auto set = random_set(3, 2, rng);
  const EmbedderSuite e;
  const auto s = similarity_scores(set, set, {"a", "b", "c"}, e.clip_image, e.dino_image, e.text);
  CHECK(s.clip_i == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(s.dino_i == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(std::fabs(s.clip_t) <= 1.0);
  CHECK_THROWS_AS(similarity_scores(set, set, {"a"}, e.clip_image, e.dino_image, e.text),
                  ContractError);
}

TEST_CASE("text embedder is a bag of words") {
  const TextEmbedder t(16, 3);
  CHECK((t.embed("red circle") - t.embed("circle red")).norm() < 1e-12);
  CHECK((t.embed("red circle") - t.embed("blue circle")).norm() > 1e-3);
}

TEST_CASE("report columns follow the benchmark order") {
  Rng rng = derive_rng(8, {});
  const auto gen = random_set(3, 3, rng), tgt = random_set(3, 3, rng);
  const auto r = evaluate_sets(gen, tgt, {"x", "y", "z"});
  CHECK(r.count == 3);
  CHECK(r.fid >= 0.0);
  CHECK(r.fvd >= 0.0);
  CHECK(r.embedder_hash == EmbedderSuite{}.config_hash());

  const auto j = nlohmann::ordered_json::parse(r.to_json());
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  REQUIRE(keys.size() >= 5);
  CHECK(std::vector<std::string>(keys.begin(), keys.begin() + 5) ==
        std::vector<std::string>{"FID", "FVD", "CLIP-I", "DINO-I", "CLIP-T"});
  const auto table = r.to_table();
  CHECK(table.find("FID") < table.find("FVD"));
  CHECK(table.find("FVD") < table.find("CLIP-I"));
  CHECK(table.find("DINO-I") < table.find("CLIP-T"));
  CHECK_THROWS_AS(evaluate_sets(gen, random_set(2, 3, rng), {"x", "y", "z"}), ContractError);
}

}  // TEST_SUITE
