#pragma once
// Diagonal-covariance Gaussian mixture phrase models: seeded k-means + EM
// training, the z-score model distance, and the VVM1 byte format.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vvv/audio.hpp"

namespace vvv::gmm {

struct GaussianComponent {
  double weight = 0.0;
  std::vector<double> mean;
  std::vector<double> variance;  // diagonal, floored
};

struct PhraseModel {
  std::vector<GaussianComponent> components;  // canonical order, see below
  std::size_t feature_dim = 0;
  std::string transcription;
  std::size_t training_frame_count = 0;  // informational; not serialized
};

// Canonical order: descending weight, ties broken by lexicographically
// ascending mean vector.
void canonicalize(PhraseModel& model);
void validate(const PhraseModel& model);

struct TrainConfig {
  std::size_t num_components = 8;
  int em_iterations = 25;
  int kmeans_init_iterations = 10;
  double variance_floor = 1e-4;
  std::uint64_t rng_seed = 0;
};

struct TrainDiagnostics {
  std::vector<double> log_likelihoods;  // one per EM iteration
};

// Seeded k-means initialization followed by EM. Deterministic for a given
// seed. The per-iteration training log-likelihood never decreases (checked
// internally with 1e-9 slack).
PhraseModel train_model(const audio::FeatureMatrix& features, std::string transcription,
                        const TrainConfig& cfg, TrainDiagnostics* diag = nullptr);

double log_likelihood(const PhraseModel& model, const audio::FeatureMatrix& features);

// Which side supplies the normalizing sigma for the z-score distance.
enum class ScoreDirection { GalleryVariance, ProbeVariance };

// Weighted mean over probe components of the smallest per-component
// dissimilarity against the gallery: mean over dims of |mu_pr - mu_g| / sigma.
// Symmetric inputs give exactly zero. Lower is closer.
double model_distance(const PhraseModel& probe, const PhraseModel& gallery, ScoreDirection dir);

enum class Choice { First, Second };

// First iff probe is strictly closer to a than to b; ties go to Second.
Choice choose_closer(const PhraseModel& probe, const PhraseModel& a, const PhraseModel& b,
                     ScoreDirection dir);

// "VVM1" | dim u32 | count u32 | transcription (u32 len + UTF-8) |
// per component: weight f64, dim means f64, dim variances f64. Little-endian.
std::vector<std::uint8_t> serialize_model(const PhraseModel& model);
PhraseModel parse_model(std::span<const std::uint8_t> bytes);

inline constexpr char kModelMagic[] = "VVM1";

}  // namespace vvv::gmm
