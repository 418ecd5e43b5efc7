#include "vvv/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "vvv/bytes.hpp"
#include "vvv/rng.hpp"

namespace vvv::gmm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)

double log_gauss_diag(const std::vector<double>& x, const GaussianComponent& c) {
  double acc = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double diff = x[d] - c.mean[d];
    acc += -0.5 * (kLog2Pi + std::log(c.variance[d])) - diff * diff / (2.0 * c.variance[d]);
  }
  return acc;
}

double logsumexp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - m);
  return m + std::log(acc);
}

}  // namespace

void canonicalize(PhraseModel& model) {
  std::stable_sort(model.components.begin(), model.components.end(),
                   [](const GaussianComponent& a, const GaussianComponent& b) {
                     if (a.weight != b.weight) return a.weight > b.weight;
                     return a.mean < b.mean;
                   });
}

void validate(const PhraseModel& model) {
  if (model.components.empty()) throw ValueError("model has no components");
  if (model.feature_dim == 0) throw ValueError("model feature dimension is zero");
  double wsum = 0.0;
  for (const auto& c : model.components) {
    if (!(c.weight > 0.0) || c.weight > 1.0) throw ValueError("component weight out of (0, 1]");
    if (c.mean.size() != model.feature_dim || c.variance.size() != model.feature_dim)
      throw ValueError("component dimension mismatch");
    for (double m : c.mean)
      if (!std::isfinite(m)) throw ValueError("non-finite component mean");
    for (double v : c.variance)
      if (!std::isfinite(v) || v <= 0.0) throw ValueError("non-positive component variance");
    wsum += c.weight;
  }
  if (std::abs(wsum - 1.0) > 1e-6) throw ValueError("component weights do not sum to 1");
}

double log_likelihood(const PhraseModel& model, const audio::FeatureMatrix& features) {
  double total = 0.0;
  std::vector<double> terms(model.components.size());
  for (const auto& frame : features.frames) {
    for (std::size_t k = 0; k < model.components.size(); ++k)
      terms[k] = std::log(model.components[k].weight) + log_gauss_diag(frame, model.components[k]);
    total += logsumexp(terms);
  }
  return total;
}

namespace {

// Lloyd iterations with deterministic empty-cluster reseeding (the frame
// farthest from its assigned centroid takes over the empty slot).
std::vector<std::size_t> kmeans_assign(const std::vector<std::vector<double>>& frames,
                                       const std::vector<std::vector<double>>& centroids) {
  std::vector<std::size_t> assign(frames.size(), 0);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < centroids.size(); ++k) {
      double d = 0.0;
      for (std::size_t j = 0; j < frames[i].size(); ++j) {
        const double diff = frames[i][j] - centroids[k][j];
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        assign[i] = k;
      }
    }
  }
  return assign;
}

struct InitStats {
  std::vector<GaussianComponent> components;
};

InitStats kmeans_init(const audio::FeatureMatrix& features, const TrainConfig& cfg,
                      rng::Engine& eng) {
  const auto& frames = features.frames;
  const std::size_t n = frames.size();
  const std::size_t dim = features.dim;
  const std::size_t k = cfg.num_components;

  std::vector<std::vector<double>> centroids;
  for (std::size_t idx : rng::sample_indices(eng, n, k)) centroids.push_back(frames[idx]);

  std::vector<std::size_t> assign;
  for (int it = 0; it < cfg.kmeans_init_iterations; ++it) {
    assign = kmeans_assign(frames, centroids);
    std::vector<std::size_t> counts(k, 0);
    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      counts[assign[i]]++;
      for (std::size_t d = 0; d < dim; ++d) sums[assign[i]][d] += frames[i][d];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // reseed with the globally worst-fit frame
        double worst = -1.0;
        std::size_t worst_i = 0;
        for (std::size_t i = 0; i < n; ++i) {
          double d = 0.0;
          for (std::size_t j = 0; j < dim; ++j) {
            const double diff = frames[i][j] - centroids[assign[i]][j];
            d += diff * diff;
          }
          if (d > worst) {
            worst = d;
            worst_i = i;
          }
        }
        centroids[c] = frames[worst_i];
      } else {
        for (std::size_t d = 0; d < dim; ++d)
          centroids[c][d] = sums[c][d] / static_cast<double>(counts[c]);
      }
    }
  }

  assign = kmeans_assign(frames, centroids);
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t a : assign) counts[a]++;

  InitStats stats;
  stats.components.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    auto& comp = stats.components[c];
    comp.mean.assign(dim, 0.0);
    comp.variance.assign(dim, 0.0);
    if (counts[c] == 0) {
      // degenerate data (e.g. every frame identical): keep the centroid,
      // give the empty slot a vanishing but valid weight
      comp.weight = 1e-6;
      comp.mean = centroids[c];
      comp.variance.assign(dim, cfg.variance_floor);
      continue;
    }
    comp.weight = static_cast<double>(counts[c]) / static_cast<double>(frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i)
      if (assign[i] == c)
        for (std::size_t d = 0; d < dim; ++d) comp.mean[d] += frames[i][d];
    for (std::size_t d = 0; d < dim; ++d) comp.mean[d] /= static_cast<double>(counts[c]);
    for (std::size_t i = 0; i < frames.size(); ++i)
      if (assign[i] == c)
        for (std::size_t d = 0; d < dim; ++d) {
          const double diff = frames[i][d] - comp.mean[d];
          comp.variance[d] += diff * diff;
        }
    for (std::size_t d = 0; d < dim; ++d) {
      comp.variance[d] /= static_cast<double>(counts[c]);
      if (comp.variance[d] < cfg.variance_floor) comp.variance[d] = cfg.variance_floor;
    }
  }
  // renormalize weights (empty-slot epsilon may have nudged the sum)
  double wsum = 0.0;
  for (const auto& c : stats.components) wsum += c.weight;
  for (auto& c : stats.components) c.weight /= wsum;
  return stats;
}

}  // namespace

PhraseModel train_model(const audio::FeatureMatrix& features, std::string transcription,
                        const TrainConfig& cfg, TrainDiagnostics* diag) {
  audio::validate(features);
  if (cfg.num_components == 0) throw ValueError("num_components must be >= 1");
  if (cfg.em_iterations < 1) throw ValueError("em_iterations must be >= 1");
  if (cfg.variance_floor <= 0.0) throw ValueError("variance floor must be positive");
  if (features.frames.size() < cfg.num_components)
    throw ValueError("too few frames for the requested component count");

  rng::Engine eng(cfg.rng_seed);
  PhraseModel model;
  model.feature_dim = features.dim;
  model.transcription = std::move(transcription);
  model.training_frame_count = features.frames.size();
  model.components = kmeans_init(features, cfg, eng).components;

  const std::size_t n = features.frames.size();
  const std::size_t k = cfg.num_components;
  const std::size_t dim = features.dim;
  std::vector<std::vector<double>> resp(n, std::vector<double>(k, 0.0));
  std::vector<double> terms(k);
  double prev_ll = -std::numeric_limits<double>::infinity();

  for (int it = 0; it < cfg.em_iterations; ++it) {
    // E step; the per-frame normalizers sum to the current log-likelihood
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < k; ++c)
        terms[c] =
            std::log(model.components[c].weight) + log_gauss_diag(features.frames[i], model.components[c]);
      const double norm = logsumexp(terms);
      ll += norm;
      for (std::size_t c = 0; c < k; ++c) resp[i][c] = std::exp(terms[c] - norm);
    }
    if (ll < prev_ll - 1e-9 * (1.0 + std::abs(prev_ll)))
      throw std::logic_error("EM log-likelihood decreased");
    prev_ll = ll;
    if (diag) diag->log_likelihoods.push_back(ll);

    // M step
    for (std::size_t c = 0; c < k; ++c) {
      double nk = 0.0;
      for (std::size_t i = 0; i < n; ++i) nk += resp[i][c];
      if (nk < 1e-12) continue;  // keep the previous parameters for a dead component
      auto& comp = model.components[c];
      comp.weight = nk / static_cast<double>(n);
      std::vector<double> mean(dim, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < dim; ++d) mean[d] += resp[i][c] * features.frames[i][d];
      for (std::size_t d = 0; d < dim; ++d) mean[d] /= nk;
      std::vector<double> var(dim, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < dim; ++d) {
          const double diff = features.frames[i][d] - mean[d];
          var[d] += resp[i][c] * diff * diff;
        }
      for (std::size_t d = 0; d < dim; ++d) {
        var[d] /= nk;
        if (var[d] < cfg.variance_floor) var[d] = cfg.variance_floor;
      }
      comp.mean = std::move(mean);
      comp.variance = std::move(var);
    }
    double wsum = 0.0;
    for (const auto& c : model.components) wsum += c.weight;
    for (auto& c : model.components) c.weight /= wsum;
  }

  canonicalize(model);
  validate(model);
  return model;
}

namespace {

double component_dissimilarity(const GaussianComponent& probe, const GaussianComponent& gal,
                               ScoreDirection dir) {
  double acc = 0.0;
  for (std::size_t d = 0; d < probe.mean.size(); ++d) {
    const double sigma =
        std::sqrt(dir == ScoreDirection::GalleryVariance ? gal.variance[d] : probe.variance[d]);
    acc += std::abs(probe.mean[d] - gal.mean[d]) / sigma;
  }
  return acc / static_cast<double>(probe.mean.size());
}

}  // namespace

double model_distance(const PhraseModel& probe, const PhraseModel& gallery, ScoreDirection dir) {
  validate(probe);
  validate(gallery);
  if (probe.feature_dim != gallery.feature_dim)
    throw ValueError("model feature dimensions differ");
  double total = 0.0;
  double wsum = 0.0;
  for (const auto& pc : probe.components) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& gc : gallery.components)
      best = std::min(best, component_dissimilarity(pc, gc, dir));
    total += pc.weight * best;
    wsum += pc.weight;
  }
  return total / wsum;
}

Choice choose_closer(const PhraseModel& probe, const PhraseModel& a, const PhraseModel& b,
                     ScoreDirection dir) {
  return model_distance(probe, a, dir) < model_distance(probe, b, dir) ? Choice::First
                                                                       : Choice::Second;
}

std::vector<std::uint8_t> serialize_model(const PhraseModel& model) {
  validate(model);
  bytes::Writer w;
  w.raw(std::string_view(kModelMagic));
  w.u32(static_cast<std::uint32_t>(model.feature_dim));
  w.u32(static_cast<std::uint32_t>(model.components.size()));
  w.str(model.transcription);
  for (const auto& c : model.components) {
    w.f64(c.weight);
    for (double m : c.mean) w.f64(m);
    for (double v : c.variance) w.f64(v);
  }
  return w.take();
}

PhraseModel parse_model(std::span<const std::uint8_t> b) {
  bytes::Reader r(b);
  r.expect_magic(kModelMagic, "model");
  PhraseModel model;
  model.feature_dim = r.u32();
  const std::uint32_t count = r.u32();
  if (model.feature_dim == 0 || model.feature_dim > 4096)
    throw ParseError("model: implausible feature dimension");
  if (count == 0 || count > 4096) throw ParseError("model: implausible component count");
  model.transcription = r.str();
  model.components.resize(count);
  for (auto& c : model.components) {
    c.weight = r.f64();
    c.mean.resize(model.feature_dim);
    for (auto& m : c.mean) m = r.f64();
    c.variance.resize(model.feature_dim);
    for (auto& v : c.variance) v = r.f64();
  }
  r.expect_done("model");
  try {
    validate(model);
  } catch (const ValueError& e) {
    throw ParseError(std::string("model: ") + e.what());
  }
  return model;
}

}  // namespace vvv::gmm
