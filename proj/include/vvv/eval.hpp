#pragma once
// Evaluation harness: corpus loading and synthesis, gallery/probe splitting,
// baseline and vaulted experiments, ROC/EER computation, and the security
// arithmetic report.

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vvv/audio.hpp"
#include "vvv/gmm.hpp"

namespace vvv::eval {

// ------------------------------------------------------------------ corpus

// Every speaker records the shared phrase list in three sessions: two
// enrollment sessions (the verification split draws from both) and one
// imposter session used when this speaker impersonates someone else.
enum class Session : std::size_t { Enroll1 = 0, Enroll2 = 1, Imposter = 2 };

inline constexpr std::array<std::string_view, 3> kSessionNames = {
    "enroll-1", "enroll-2", "imposter"};

struct SpeakerData {
  // phrase -> takes per session, indexed by Session
  std::map<std::string, std::array<std::vector<audio::AudioClip>, 3>> takes;
};

struct Corpus {
  int sample_rate = 0;
  std::vector<std::string> phrases;  // shared across speakers, sorted
  std::map<std::string, SpeakerData> speakers;
  std::map<std::string, std::string> imposter_of;  // dedicated imposter
};

constexpr std::size_t kMinSpeakers = 2;
constexpr std::size_t kMinPhrases = 8;
constexpr std::size_t kMinEnrollTakes = 6;  // across both enrollment sessions

// Enforces the corpus invariants: speaker/phrase/take minimums, uniform
// phrase list, uniform sample rate, imposter mapping complete and never
// self-referential. Throws ValueError naming the offending speaker or file.
void validate_corpus(const Corpus& corpus);

// Directory tree <root>/<speaker>/<session>/<phrase>_<take>.wav with a
// manifest.tsv (speaker<TAB>imposter_id) at the root. Ordering is by path
// sort, so loading is deterministic.
Corpus load_mit_layout(const std::string& root);

// Writes the same layout (including the manifest), creating directories.
void write_corpus_tree(const Corpus& corpus, const std::string& root);

struct SynthParams {
  std::size_t speakers = 10;
  std::size_t phrases = 10;
  std::size_t takes = 8;  // per session
  // Controls how cleanly voices separate: every stochastic ingredient
  // (per-take jitter, additive noise, per-session drift) scales with
  // 1/separation, so separation = infinity yields identical takes.
  double separation = 4.0;
  std::uint64_t rng_seed = 42;
  int sample_rate = 16000;
  double duration_seconds = 1.0;
};

// Each (speaker, phrase) gets a formant-like signature: three sinusoids with
// hash-derived frequencies plus a slow amplitude envelope. A per-(speaker,
// phrase) condition multiplier spreads the jitter scale so that no single
// global distance threshold separates everyone even though each individual
// real-vs-chaff comparison stays decidable. Deterministic per seed.
Corpus synth_corpus(const SynthParams& params);

// ------------------------------------------------------------------- split

struct TakeSplit {
  // indices into the concatenation of enroll-1 then enroll-2 takes
  std::vector<std::size_t> gallery;
  std::vector<std::size_t> probe;
};

struct SplitPlan {
  std::uint64_t rng_seed = 0;
  std::map<std::pair<std::string, std::string>, TakeSplit> takes;  // (speaker, phrase)
};

// Seeded 60/40 split per (speaker, phrase), rounding toward gallery.
// Imposter-session takes are never split: they are all probe material.
SplitPlan make_split(const Corpus& corpus, std::uint64_t rng_seed);

// --------------------------------------------------------------- training

struct ModelSet {
  // speaker -> phrase -> model
  std::map<std::string, std::map<std::string, gmm::PhraseModel>> gallery;
  std::map<std::string, std::map<std::string, gmm::PhraseModel>> probe;
  std::map<std::string, std::map<std::string, gmm::PhraseModel>> imposter;
};

// Trains gallery and probe models from the split's take sets and imposter
// models from the imposter session. Training seeds derive from the config
// seed plus role, speaker, and phrase, so the set is reproducible.
ModelSet train_models(const Corpus& corpus, const SplitPlan& split,
                      const audio::MfccConfig& mfcc_cfg, const gmm::TrainConfig& train_cfg);

// ------------------------------------------------------------------ trials

struct TrialOutcome {
  std::string trial_id;
  bool genuine = false;  // ground truth, never derived from the score
  double score = 0.0;    // distance for baselines, bit accuracy for vaulted
  std::string speaker;   // claimed identity
  std::string phrase;    // "*" for whole-session trials
  gmm::ScoreDirection direction = gmm::ScoreDirection::GalleryVariance;
};

struct RocPoint {
  double threshold = 0.0;
  double far = 0.0;
  double frr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // ordered loose to tight
  double eer = 0.0;
  double eer_threshold = 0.0;
};

// Whether small scores (distances) or large scores (accuracies) mean accept.
enum class ScoreSense { LowerAccepts, HigherAccepts };

// Sweeps every distinct score plus midpoints and sentinels; FAR is the
// accepted fraction of imposter trials, FRR the rejected fraction of genuine
// trials; EER by linear interpolation at the FAR/FRR crossing. Requires at
// least one trial of each class.
RocCurve compute_roc(std::span<const TrialOutcome> outcomes, ScoreSense sense);

struct EvalResult {
  std::vector<TrialOutcome> outcomes;
  RocCurve roc;
  std::vector<std::string> warnings;  // skipped trials, one line each
};

// Global-threshold experiment: per (speaker, phrase), the probe model and
// the dedicated imposter's model are each scored against the gallery model
// and pooled into one ROC over raw distances.
EvalResult run_baseline(const Corpus& corpus, const ModelSet& models,
                        gmm::ScoreDirection direction);

enum class VaultedMode { Dedicated, AllVsAll };

// Challenge-style experiment: per enrolled speaker, each claimant answers
// one real-vs-chaff comparison per phrase (chaff = the dedicated imposter's
// model, presentation order seeded); the trial score is the fraction of
// comparisons answered correctly. Dedicated mode's negatives come from the
// chaff-source speaker; all-vs-all adds every other speaker's probe models
// as claimants.
EvalResult run_vaulted(const Corpus& corpus, const ModelSet& models,
                       gmm::ScoreDirection direction, VaultedMode mode,
                       std::uint64_t rng_seed);

// --------------------------------------------------- pairwise vs threshold

// Fraction of (genuine, imposter) score pairs where the genuine side wins
// the head-to-head comparison.
double pairwise_decision_accuracy(std::span<const std::pair<double, double>> pairs,
                                  ScoreSense sense);

// Best classification accuracy a single global threshold can reach over the
// same pooled scores (labels known, threshold chosen in hindsight).
double best_global_threshold_accuracy(std::span<const std::pair<double, double>> pairs,
                                      ScoreSense sense);

// Monte-Carlo acceptance rate of a responder that guesses uniform bits
// against freshly drawn n-bit challenge strings at the given threshold.
double random_attacker_acceptance(std::size_t n_bits, std::size_t trials, double threshold,
                                  std::uint64_t rng_seed);

// ---------------------------------------------------------------- security

struct SecurityReport {
  std::size_t num_phrases = 0;
  std::uint8_t bits_per_question = 1;
  bool keys_compromised = false;
  double attacker_success = 0.0;    // 2^-(num_phrases * bits_per_question)
  std::string success_percent;      // two-decimal percentage string
  std::string statement;
};

SecurityReport security_report(std::size_t num_phrases, std::uint8_t bits_per_question,
                               bool keys_compromised);
std::string to_text(const SecurityReport& report);

// Reference operating points reported for the full 48-speaker corpus; the
// synthetic desk corpus does not reproduce them. They are emitted as CSV
// annotations only.
constexpr double kReferenceBaselineGalleryEer = 0.08;
constexpr double kReferenceBaselineProbeEer = 0.06;
constexpr double kReferenceDedicatedEer = 0.00;
constexpr double kReferenceAllVsAllEer = 0.06;
constexpr double kReferencePriorPhraseEer = 0.11;

// ------------------------------------------------------------------ output

// Header `threshold,far,frr`, one row per point, then `# summary:` lines
// with the EER and any annotation strings passed in.
std::string roc_csv(const RocCurve& roc, std::span<const std::string> annotations);

// Header `trial_id,genuine,score,speaker,phrase,direction`.
std::string outcomes_csv(std::span<const TrialOutcome> outcomes);

}  // namespace vvv::eval
