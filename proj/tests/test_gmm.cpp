#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "vvv/audio.hpp"
#include "vvv/errors.hpp"
#include "vvv/gmm.hpp"
#include "vvv/rng.hpp"

using namespace vvv;

namespace {

audio::FeatureMatrix gaussian_blobs(std::uint64_t seed, std::size_t frames_per_blob,
                                    const std::vector<std::vector<double>>& centers,
                                    double sigma) {
  audio::FeatureMatrix f;
  f.dim = centers.front().size();
  rng::Engine eng(seed);
  for (const auto& c : centers)
    for (std::size_t i = 0; i < frames_per_blob; ++i) {
      std::vector<double> row(f.dim);
      for (std::size_t d = 0; d < f.dim; ++d) row[d] = c[d] + sigma * rng::gaussian(eng);
      f.frames.push_back(std::move(row));
    }
  return f;
}

// Independent likelihood oracle: direct per-frame mixture density.
double naive_log_likelihood(const gmm::PhraseModel& m, const audio::FeatureMatrix& f) {
  double total = 0.0;
  for (const auto& x : f.frames) {
    double density = 0.0;
    for (const auto& c : m.components) {
      double log_g = 0.0;
      for (std::size_t d = 0; d < x.size(); ++d) {
        const double diff = x[d] - c.mean[d];
        log_g += -0.5 * std::log(2.0 * std::numbers::pi * c.variance[d]) -
                 diff * diff / (2.0 * c.variance[d]);
      }
      density += c.weight * std::exp(log_g);
    }
    total += std::log(density);
  }
  return total;
}

gmm::PhraseModel point_model(const std::vector<std::vector<double>>& means, double variance,
                             const std::string& transcription = "t") {
  gmm::PhraseModel m;
  m.feature_dim = means.front().size();
  m.transcription = transcription;
  const double w = 1.0 / static_cast<double>(means.size());
  for (const auto& mu : means)
    m.components.push_back({w, mu, std::vector<double>(m.feature_dim, variance)});
  return m;
}

}  // namespace

TEST_CASE("single-component training recovers sample moments exactly") {
  auto f = gaussian_blobs(11, 500, {{1.5, -2.0, 0.25}}, 0.7);
  gmm::TrainConfig cfg;
  cfg.num_components = 1;
  cfg.rng_seed = 3;
  auto model = gmm::train_model(f, "one", cfg);
  REQUIRE(model.components.size() == 1);
  CHECK(model.components[0].weight == doctest::Approx(1.0).epsilon(1e-15));

  const std::size_t n = f.frames.size();
  for (std::size_t d = 0; d < f.dim; ++d) {
    double mean = 0.0;
    for (const auto& x : f.frames) mean += x[d];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& x : f.frames) var += (x[d] - mean) * (x[d] - mean);
    var /= static_cast<double>(n);
    var = std::max(var, cfg.variance_floor);
    CHECK(std::abs(model.components[0].mean[d] - mean) < 1e-12);
    CHECK(std::abs(model.components[0].variance[d] - var) < 1e-12);
  }
}

TEST_CASE("EM log-likelihood never decreases") {
  auto f = gaussian_blobs(5, 300, {{0.0, 0.0}, {4.0, 4.0}, {-4.0, 2.0}}, 0.6);
  gmm::TrainConfig cfg;
  cfg.num_components = 3;
  cfg.rng_seed = 17;
  gmm::TrainDiagnostics diag;
  auto model = gmm::train_model(f, "blobs", cfg, &diag);
  REQUIRE(static_cast<int>(diag.log_likelihoods.size()) == cfg.em_iterations);
  for (std::size_t i = 1; i < diag.log_likelihoods.size(); ++i) {
    const double prev = diag.log_likelihoods[i - 1];
    CHECK(diag.log_likelihoods[i] >= prev - 1e-9 * (1.0 + std::abs(prev)));
  }
  // It also recovers the planted structure: three well-separated means.
  REQUIRE(model.components.size() == 3);
  for (const auto& want : {std::vector<double>{0.0, 0.0}, {4.0, 4.0}, {-4.0, 2.0}}) {
    double best = 1e300;
    for (const auto& c : model.components) {
      double d = std::hypot(c.mean[0] - want[0], c.mean[1] - want[1]);
      best = std::min(best, d);
    }
    CHECK(best < 0.25);
  }
}

TEST_CASE("training is deterministic per seed and varies across seeds") {
  auto f = gaussian_blobs(8, 200, {{0.0, 1.0}, {3.0, -1.0}}, 0.5);
  gmm::TrainConfig cfg;
  cfg.num_components = 4;
  cfg.rng_seed = 42;
  auto a = gmm::train_model(f, "p", cfg);
  auto b = gmm::train_model(f, "p", cfg);
  REQUIRE(a.components.size() == b.components.size());
  for (std::size_t c = 0; c < a.components.size(); ++c) {
    CHECK(a.components[c].weight == b.components[c].weight);
    CHECK(a.components[c].mean == b.components[c].mean);
    CHECK(a.components[c].variance == b.components[c].variance);
  }
  cfg.rng_seed = 43;
  auto c = gmm::train_model(f, "p", cfg);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.components.size() && !any_diff; ++i)
    any_diff = a.components[i].mean != c.components[i].mean;
  CHECK(any_diff);
}

TEST_CASE("components come out in canonical order") {
  auto f = gaussian_blobs(23, 150, {{0.0}, {5.0}, {10.0}, {-5.0}}, 0.4);
  gmm::TrainConfig cfg;
  cfg.num_components = 4;
  cfg.rng_seed = 9;
  auto model = gmm::train_model(f, "p", cfg);
  for (std::size_t i = 1; i < model.components.size(); ++i) {
    const auto& a = model.components[i - 1];
    const auto& b = model.components[i];
    const bool ordered = a.weight > b.weight || (a.weight == b.weight && a.mean <= b.mean);
    CHECK(ordered);
  }
}

TEST_CASE("variance floor holds even on degenerate data") {
  audio::FeatureMatrix f;
  f.dim = 3;
  f.frames.assign(50, std::vector<double>{1.0, 2.0, 3.0});  // zero variance everywhere
  gmm::TrainConfig cfg;
  cfg.num_components = 2;
  cfg.rng_seed = 1;
  auto model = gmm::train_model(f, "flat", cfg);
  gmm::validate(model);
  for (const auto& c : model.components)
    for (double v : c.variance) CHECK(v >= cfg.variance_floor);
}

TEST_CASE("training rejects bad configs") {
  auto f = gaussian_blobs(2, 10, {{0.0, 0.0}}, 1.0);
  gmm::TrainConfig cfg;
  cfg.num_components = 0;
  CHECK_THROWS_AS(gmm::train_model(f, "p", cfg), ValueError);
  cfg.num_components = 50;  // more components than frames
  CHECK_THROWS_AS(gmm::train_model(f, "p", cfg), ValueError);
  cfg.num_components = 2;
  cfg.variance_floor = 0.0;
  CHECK_THROWS_AS(gmm::train_model(f, "p", cfg), ValueError);
}

TEST_CASE("log_likelihood matches a direct density computation") {
  auto f = gaussian_blobs(31, 120, {{0.5, -0.5}, {2.0, 2.0}}, 0.8);
  gmm::TrainConfig cfg;
  cfg.num_components = 2;
  cfg.rng_seed = 12;
  auto model = gmm::train_model(f, "p", cfg);
  auto probe = gaussian_blobs(32, 40, {{0.5, -0.5}}, 0.8);
  CHECK(gmm::log_likelihood(model, probe) ==
        doctest::Approx(naive_log_likelihood(model, probe)).epsilon(1e-10));
}

TEST_CASE("model distance: identical models are at distance zero") {
  auto m = point_model({{1.0, 2.0}, {3.0, 4.0}}, 0.5);
  CHECK(gmm::model_distance(m, m, gmm::ScoreDirection::GalleryVariance) == 0.0);
  CHECK(gmm::model_distance(m, m, gmm::ScoreDirection::ProbeVariance) == 0.0);
}

TEST_CASE("model distance: one sigma of separation scores exactly one") {
  // Single-component models, unit variance, means one apart in every dim.
  auto a = point_model({{0.0, 0.0}}, 1.0);
  auto b = point_model({{1.0, 1.0}}, 1.0);
  CHECK(gmm::model_distance(a, b, gmm::ScoreDirection::GalleryVariance) ==
        doctest::Approx(1.0).epsilon(1e-13));

  // Direction picks whose variance normalizes: widen the gallery and the
  // gallery-normalized distance shrinks while the probe-normalized one
  // stays put.
  auto wide = point_model({{1.0, 1.0}}, 4.0);
  CHECK(gmm::model_distance(a, wide, gmm::ScoreDirection::GalleryVariance) ==
        doctest::Approx(0.5).epsilon(1e-13));
  CHECK(gmm::model_distance(a, wide, gmm::ScoreDirection::ProbeVariance) ==
        doctest::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("model distance takes the closest gallery component per probe component") {
  auto probe = point_model({{0.0}}, 1.0);
  auto gallery = point_model({{10.0}, {0.5}}, 1.0);
  CHECK(gmm::model_distance(probe, gallery, gmm::ScoreDirection::GalleryVariance) ==
        doctest::Approx(0.5).epsilon(1e-13));
}

TEST_CASE("model distance weights probe components") {
  gmm::PhraseModel probe;
  probe.feature_dim = 1;
  probe.transcription = "t";
  probe.components.push_back({0.9, {0.0}, {1.0}});
  probe.components.push_back({0.1, {5.0}, {1.0}});
  auto gallery = point_model({{0.0}}, 1.0);
  // 0.9 * 0 + 0.1 * 5 = 0.5
  CHECK(gmm::model_distance(probe, gallery, gmm::ScoreDirection::GalleryVariance) ==
        doctest::Approx(0.5).epsilon(1e-13));
}

TEST_CASE("distance requires matching dimensions") {
  auto a = point_model({{0.0, 0.0}}, 1.0);
  auto b = point_model({{0.0}}, 1.0);
  CHECK_THROWS_AS(gmm::model_distance(a, b, gmm::ScoreDirection::GalleryVariance), ValueError);
}

TEST_CASE("choose_closer picks the nearer model and sends ties to Second") {
  auto probe = point_model({{0.0, 0.0}}, 1.0);
  auto near = point_model({{0.5, 0.5}}, 1.0);
  auto far = point_model({{3.0, 3.0}}, 1.0);
  CHECK(gmm::choose_closer(probe, near, far, gmm::ScoreDirection::GalleryVariance) ==
        gmm::Choice::First);
  CHECK(gmm::choose_closer(probe, far, near, gmm::ScoreDirection::GalleryVariance) ==
        gmm::Choice::Second);
  // Exact tie: same candidate twice.
  CHECK(gmm::choose_closer(probe, near, near, gmm::ScoreDirection::GalleryVariance) ==
        gmm::Choice::Second);
}

TEST_CASE("serialization round-trips bit-exactly") {
  auto f = gaussian_blobs(64, 100, {{0.1, 0.2, 0.3}, {1.0, -1.0, 2.0}}, 0.33);
  gmm::TrainConfig cfg;
  cfg.num_components = 2;
  cfg.rng_seed = 5;
  auto model = gmm::train_model(f, "round trip phrase", cfg);
  auto bytes = gmm::serialize_model(model);
  CHECK(bytes.size() >= 4);
  CHECK(bytes[0] == 'V');
  CHECK(bytes[1] == 'V');
  CHECK(bytes[2] == 'M');
  CHECK(bytes[3] == '1');

  auto back = gmm::parse_model(bytes);
  CHECK(back.transcription == model.transcription);
  CHECK(back.feature_dim == model.feature_dim);
  REQUIRE(back.components.size() == model.components.size());
  for (std::size_t c = 0; c < model.components.size(); ++c) {
    CHECK(back.components[c].weight == model.components[c].weight);
    CHECK(back.components[c].mean == model.components[c].mean);
    CHECK(back.components[c].variance == model.components[c].variance);
  }
  // Identical bytes on re-serialization.
  CHECK(gmm::serialize_model(back) == bytes);
}

TEST_CASE("parse_model rejects corrupted bytes") {
  auto model = point_model({{1.0, 2.0}}, 0.5, "p");
  auto bytes = gmm::serialize_model(model);
  SUBCASE("bad magic") {
    bytes[0] = 'X';
    CHECK_THROWS_AS(gmm::parse_model(bytes), ParseError);
  }
  SUBCASE("truncated") {
    bytes.resize(bytes.size() - 5);
    CHECK_THROWS_AS(gmm::parse_model(bytes), ParseError);
  }
  SUBCASE("trailing garbage") {
    bytes.push_back(0);
    CHECK_THROWS_AS(gmm::parse_model(bytes), ParseError);
  }
}

TEST_CASE("two voices separate: own probe is closer than the other voice") {
  // Mimics the evaluation setup in miniature: two distinct sources, two
  // samples each; the matching sample must be closer in both directions.
  auto va1 = gaussian_blobs(101, 200, {{0.0, 0.0}, {1.0, 1.0}}, 0.3);
  auto va2 = gaussian_blobs(102, 200, {{0.05, -0.05}, {1.05, 0.95}}, 0.3);
  auto vb = gaussian_blobs(103, 200, {{2.5, 2.5}, {4.0, 4.0}}, 0.3);
  gmm::TrainConfig cfg;
  cfg.num_components = 2;
  cfg.rng_seed = 7;
  auto gallery = gmm::train_model(va1, "p", cfg);
  cfg.rng_seed = 8;
  auto genuine = gmm::train_model(va2, "p", cfg);
  cfg.rng_seed = 9;
  auto imposter = gmm::train_model(vb, "p", cfg);
  for (auto dir : {gmm::ScoreDirection::GalleryVariance, gmm::ScoreDirection::ProbeVariance}) {
    CHECK(gmm::model_distance(genuine, gallery, dir) <
          gmm::model_distance(imposter, gallery, dir));
    CHECK(gmm::choose_closer(genuine, gallery, imposter, dir) == gmm::Choice::First);
  }
}
