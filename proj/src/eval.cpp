#include "vvv/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vvv/errors.hpp"
#include "vvv/protocol.hpp"
#include "vvv/rng.hpp"

namespace vvv::eval {

namespace fs = std::filesystem;
using rng::derive_seed;
using rng::hash_str;

namespace {

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

std::string take_filename(const std::string& phrase, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "_%02zu.wav", index);
  return phrase + buf;
}

const char* direction_name(gmm::ScoreDirection dir) {
  return dir == gmm::ScoreDirection::GalleryVariance ? "gallery-variance" : "probe-variance";
}

}  // namespace

// ------------------------------------------------------------------ corpus

void validate_corpus(const Corpus& corpus) {
  if (corpus.speakers.size() < kMinSpeakers)
    throw ValueError("corpus has " + std::to_string(corpus.speakers.size()) +
                     " speakers; need at least " + std::to_string(kMinSpeakers));
  if (corpus.phrases.size() < kMinPhrases)
    throw ValueError("corpus has " + std::to_string(corpus.phrases.size()) +
                     " phrases; need at least " + std::to_string(kMinPhrases));
  if (!std::is_sorted(corpus.phrases.begin(), corpus.phrases.end()) ||
      std::adjacent_find(corpus.phrases.begin(), corpus.phrases.end()) != corpus.phrases.end())
    throw ValueError("corpus phrase list must be sorted and unique");
  if (corpus.sample_rate < 8000)
    throw ValueError("corpus sample rate must be at least 8000 Hz");

  for (const auto& [id, imp] : corpus.imposter_of)
    if (!corpus.speakers.contains(id))
      throw ValueError("imposter mapping names unknown speaker " + id);

  for (const auto& [id, data] : corpus.speakers) {
    auto imp = corpus.imposter_of.find(id);
    if (imp == corpus.imposter_of.end()) throw ValueError("speaker " + id + ": no imposter assigned");
    if (imp->second == id) throw ValueError("speaker " + id + " is their own imposter");
    if (!corpus.speakers.contains(imp->second))
      throw ValueError("speaker " + id + ": imposter " + imp->second + " is not in the corpus");

    if (data.takes.size() != corpus.phrases.size())
      throw ValueError("speaker " + id + ": phrase set differs from the corpus phrase list");
    for (const std::string& phrase : corpus.phrases) {
      auto ph = data.takes.find(phrase);
      if (ph == data.takes.end())
        throw ValueError("speaker " + id + ": missing phrase " + phrase);
      const auto& sessions = ph->second;
      std::size_t enroll = sessions[0].size() + sessions[1].size();
      if (enroll < kMinEnrollTakes)
        throw ValueError("speaker " + id + ", phrase " + phrase + ": " + std::to_string(enroll) +
                         " enrollment takes; need at least " + std::to_string(kMinEnrollTakes));
      if (sessions[2].empty())
        throw ValueError("speaker " + id + ", phrase " + phrase + ": no imposter-session takes");
      for (const auto& session : sessions)
        for (const audio::AudioClip& clip : session) {
          if (clip.samples.empty())
            throw ValueError("speaker " + id + ", phrase " + phrase + ": empty take");
          if (clip.sample_rate != corpus.sample_rate)
            throw ValueError("speaker " + id + ", phrase " + phrase + ": sample rate " +
                             std::to_string(clip.sample_rate) + " differs from corpus rate " +
                             std::to_string(corpus.sample_rate));
        }
    }
  }
}

Corpus load_mit_layout(const std::string& root) {
  const fs::path rootp(root);
  if (!fs::is_directory(rootp)) throw ValueError("corpus root is not a directory: " + root);

  Corpus corpus;

  // manifest: speaker<TAB>imposter per line
  const fs::path manifest_path = rootp / "manifest.tsv";
  std::ifstream manifest(manifest_path);
  if (!manifest) throw ValueError("missing manifest: " + manifest_path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size() ||
        line.find('\t', tab + 1) != std::string::npos)
      throw ParseError(manifest_path.string() + " line " + std::to_string(line_no) +
                       ": expected speaker<TAB>imposter");
    const std::string speaker = line.substr(0, tab);
    if (!corpus.imposter_of.emplace(speaker, line.substr(tab + 1)).second)
      throw ParseError(manifest_path.string() + ": duplicate speaker " + speaker);
  }

  std::vector<std::string> speaker_dirs;
  for (const auto& entry : fs::directory_iterator(rootp)) {
    const std::string name = entry.path().filename().string();
    if (name.starts_with(".")) continue;
    if (entry.is_directory()) {
      speaker_dirs.push_back(name);
    } else if (name != "manifest.tsv") {
      throw ValueError("unexpected entry in corpus root: " + entry.path().string());
    }
  }
  std::sort(speaker_dirs.begin(), speaker_dirs.end());

  for (const std::string& speaker : speaker_dirs)
    if (!corpus.imposter_of.contains(speaker))
      throw ValueError("speaker directory " + speaker + " has no manifest entry");
  for (const auto& [speaker, imposter] : corpus.imposter_of)
    if (std::find(speaker_dirs.begin(), speaker_dirs.end(), speaker) == speaker_dirs.end())
      throw ValueError("manifest names speaker " + speaker + " but there is no such directory");

  std::vector<std::string> rate_mismatches;
  for (const std::string& speaker : speaker_dirs) {
    const fs::path spk_dir = rootp / speaker;
    SpeakerData data;
    for (std::size_t s = 0; s < kSessionNames.size(); ++s) {
      const fs::path sess_dir = spk_dir / std::string(kSessionNames[s]);
      if (!fs::is_directory(sess_dir))
        throw ValueError("speaker " + speaker + ": missing session directory " +
                         std::string(kSessionNames[s]));
      std::vector<std::string> files;
      for (const auto& entry : fs::directory_iterator(sess_dir)) {
        const std::string name = entry.path().filename().string();
        if (name.starts_with(".")) continue;
        if (!entry.is_regular_file() || !name.ends_with(".wav"))
          throw ValueError("unexpected entry in session directory: " + entry.path().string());
        files.push_back(name);
      }
      std::sort(files.begin(), files.end());
      for (const std::string& name : files) {
        const std::string stem = name.substr(0, name.size() - 4);
        const std::size_t us = stem.rfind('_');
        if (us == std::string::npos || us == 0)
          throw ParseError("take filename is not <phrase>_<take>.wav: " +
                           (sess_dir / name).string());
        const std::string phrase = stem.substr(0, us);
        audio::AudioClip clip = audio::read_wav_file(sess_dir / name);
        if (corpus.sample_rate == 0)
          corpus.sample_rate = clip.sample_rate;
        else if (clip.sample_rate != corpus.sample_rate)
          rate_mismatches.push_back((sess_dir / name).string());
        data.takes[phrase][s].push_back(std::move(clip));
      }
    }
    corpus.speakers.emplace(speaker, std::move(data));
  }

  if (!rate_mismatches.empty()) {
    std::string msg = "mixed sample rates; offending files:";
    for (const std::string& p : rate_mismatches) msg += "\n  " + p;
    throw ValueError(msg);
  }

  if (!corpus.speakers.empty())
    for (const auto& [phrase, sessions] : corpus.speakers.begin()->second.takes)
      corpus.phrases.push_back(phrase);

  validate_corpus(corpus);
  return corpus;
}

void write_corpus_tree(const Corpus& corpus, const std::string& root) {
  const fs::path rootp(root);
  fs::create_directories(rootp);

  std::ofstream manifest(rootp / "manifest.tsv");
  if (!manifest) throw ValueError("cannot write manifest under " + root);
  for (const auto& [speaker, imposter] : corpus.imposter_of)
    manifest << speaker << '\t' << imposter << '\n';
  manifest.close();
  if (!manifest) throw ValueError("failed writing manifest under " + root);

  for (const auto& [speaker, data] : corpus.speakers)
    for (std::size_t s = 0; s < kSessionNames.size(); ++s) {
      const fs::path sess_dir = rootp / speaker / std::string(kSessionNames[s]);
      fs::create_directories(sess_dir);
      for (const auto& [phrase, sessions] : data.takes)
        for (std::size_t i = 0; i < sessions[s].size(); ++i)
          audio::write_wav_file(sessions[s][i], sess_dir / take_filename(phrase, i));
    }
}

// ----------------------------------------------------------------- synthesis

namespace {

constexpr double kTau = 6.283185307179586476925287;

// Formant anchor bands (Hz) and fixed partial amplitudes.
constexpr double kBandLo[3] = {300.0, 1000.0, 2100.0};
constexpr double kBandHi[3] = {450.0, 1500.0, 2800.0};
constexpr double kPartialAmp[3] = {0.25, 0.15, 0.10};
constexpr double kEnvDepth = 0.3;

// Speakers sit on a per-phrase relative frequency grid: distinct speakers
// differ by at least rel_step on every formant, so a voice and its chaff stay
// decidable, while the step size varies per phrase (some phrases separate
// voices far less cleanly than others). Grid slots are shuffled per phrase;
// otherwise a third voice would sit on the same side of every real/chaff
// pair and answer whole challenge sessions correctly by accident of layout.
constexpr double kRelStepLo = 0.010;
constexpr double kRelStepHi = 0.040;

constexpr double kDriftHz = 12.0;    // per-session wobble bound, / separation
constexpr double kJitterHz = 8.0;    // per-take formant jitter, * m / separation
constexpr double kAmpJitter = 0.06;  // relative amplitude jitter, * m / separation
constexpr double kNoiseAmp = 0.004;  // additive sample noise, * m / separation

std::string indexed_name(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s-%02zu", prefix, i);
  return buf;
}

}  // namespace

Corpus synth_corpus(const SynthParams& params) {
  if (params.speakers < kMinSpeakers)
    throw ValueError("synthetic corpus needs at least " + std::to_string(kMinSpeakers) +
                     " speakers");
  if (params.phrases == 0 || params.takes == 0) throw ValueError("phrases and takes must be positive");
  if (!(params.separation > 0.0)) throw ValueError("separation must be positive");
  if (params.sample_rate < 8000) throw ValueError("sample rate must be at least 8000 Hz");
  if (!(params.duration_seconds * 1000.0 >= 35.0))
    throw ValueError("duration too short to frame");

  // 1/inf is exactly zero, so infinite separation turns every stochastic
  // ingredient off and takes come out identical.
  const double inv_sep = 1.0 / params.separation;
  const std::size_t num_samples =
      static_cast<std::size_t>(params.duration_seconds * params.sample_rate);
  const double dt = 1.0 / params.sample_rate;

  Corpus corpus;
  corpus.sample_rate = params.sample_rate;
  std::vector<std::string> speaker_names(params.speakers);
  for (std::size_t i = 0; i < params.speakers; ++i) speaker_names[i] = indexed_name("spk", i);
  std::sort(speaker_names.begin(), speaker_names.end());
  for (std::size_t i = 0; i < params.phrases; ++i)
    corpus.phrases.push_back(indexed_name("phrase", i));
  std::sort(corpus.phrases.begin(), corpus.phrases.end());

  for (std::size_t s = 0; s < params.speakers; ++s)
    corpus.imposter_of[speaker_names[s]] = speaker_names[(s + 1) % params.speakers];

  const double mid_rank = (static_cast<double>(params.speakers) - 1.0) / 2.0;

  for (const std::string& phrase : corpus.phrases) {
    rng::Engine pe(derive_seed(params.rng_seed, {hash_str("synth-phrase"), hash_str(phrase)}));
    double anchor[3];
    for (int k = 0; k < 3; ++k) anchor[k] = kBandLo[k] + rng::unit(pe) * (kBandHi[k] - kBandLo[k]);
    const double rel_step = kRelStepLo + rng::unit(pe) * (kRelStepHi - kRelStepLo);
    std::vector<std::size_t> slot(params.speakers);
    std::iota(slot.begin(), slot.end(), std::size_t{0});
    rng::shuffle(slot, pe);

    for (std::size_t rank = 0; rank < params.speakers; ++rank) {
      const std::string& speaker = speaker_names[rank];
      rng::Engine se(derive_seed(params.rng_seed,
                                 {hash_str("synth-sig"), hash_str(speaker), hash_str(phrase)}));
      // Per-(speaker, phrase) recording-condition multiplier, log-uniform in
      // [0.5, 2]: it scales jitter and noise but not the session drift, so
      // normalized genuine distances spread apart across pairs and overlap
      // the easy imposter distances under any single global threshold.
      const double m = std::exp2(rng::unit(se) * 2.0 - 1.0);
      double freq[3], phase[3];
      for (int k = 0; k < 3; ++k) {
        freq[k] = anchor[k] * (1.0 + rel_step * (static_cast<double>(slot[rank]) - mid_rank));
        phase[k] = rng::unit(se) * kTau;
      }
      const double env_rate = 2.0 + rng::unit(se) * 2.0;
      const double env_phase = rng::unit(se) * kTau;

      auto& sessions = corpus.speakers[speaker].takes[phrase];
      for (std::size_t sess = 0; sess < kSessionNames.size(); ++sess) {
        rng::Engine ge(derive_seed(params.rng_seed, {hash_str("synth-session"), hash_str(speaker),
                                                     hash_str(phrase), sess}));
        double drift[3];
        for (int k = 0; k < 3; ++k)
          drift[k] = (rng::unit(ge) * 2.0 - 1.0) * kDriftHz * inv_sep;

        for (std::size_t take = 0; take < params.takes; ++take) {
          rng::Engine te(derive_seed(params.rng_seed, {hash_str("synth-take"), hash_str(speaker),
                                                       hash_str(phrase), sess, take}));
          double f[3], a[3], ph[3];
          for (int k = 0; k < 3; ++k) f[k] = freq[k] + drift[k] + rng::gaussian(te) * kJitterHz * m * inv_sep;
          for (int k = 0; k < 3; ++k)
            a[k] = kPartialAmp[k] *
                   std::clamp(1.0 + rng::gaussian(te) * kAmpJitter * m * inv_sep, 0.7, 1.3);
          for (int k = 0; k < 3; ++k)
            ph[k] = phase[k] + (rng::unit(te) * 2.0 - 1.0) * std::numbers::pi *
                                   std::min(1.0, m * inv_sep);
          const double env_ph = env_phase + (rng::unit(te) * 2.0 - 1.0) * std::numbers::pi *
                                                std::min(1.0, m * inv_sep);
          const double noise = kNoiseAmp * m * inv_sep;

          audio::AudioClip clip;
          clip.sample_rate = params.sample_rate;
          clip.samples.resize(num_samples);
          for (std::size_t i = 0; i < num_samples; ++i) {
            const double t = static_cast<double>(i) * dt;
            double x = 0.0;
            for (int k = 0; k < 3; ++k) x += a[k] * std::sin(kTau * f[k] * t + ph[k]);
            x *= 1.0 + kEnvDepth * std::sin(kTau * env_rate * t + env_ph);
            if (noise > 0.0) x += noise * rng::gaussian(te);
            clip.samples[i] = std::clamp(x, -1.0, 1.0);
          }
          sessions[sess].push_back(std::move(clip));
        }
      }
    }
  }
  return corpus;
}

// ------------------------------------------------------------------- split

SplitPlan make_split(const Corpus& corpus, std::uint64_t rng_seed) {
  SplitPlan plan;
  plan.rng_seed = rng_seed;
  for (const auto& [speaker, data] : corpus.speakers)
    for (const auto& [phrase, sessions] : data.takes) {
      const std::size_t k = sessions[0].size() + sessions[1].size();
      if (k < 2)
        throw ValueError("speaker " + speaker + ", phrase " + phrase +
                         ": need at least 2 enrollment takes to split");
      const std::size_t gallery_n = (3 * k + 4) / 5;  // ceil(0.6 k): round toward gallery
      std::vector<std::size_t> idx(k);
      for (std::size_t i = 0; i < k; ++i) idx[i] = i;
      rng::Engine eng(derive_seed(rng_seed, {hash_str("split"), hash_str(speaker), hash_str(phrase)}));
      rng::shuffle(idx, eng);
      TakeSplit split;
      split.gallery.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(gallery_n));
      split.probe.assign(idx.begin() + static_cast<std::ptrdiff_t>(gallery_n), idx.end());
      std::sort(split.gallery.begin(), split.gallery.end());
      std::sort(split.probe.begin(), split.probe.end());
      plan.takes.emplace(std::make_pair(speaker, phrase), std::move(split));
    }
  return plan;
}

// --------------------------------------------------------------- training

ModelSet train_models(const Corpus& corpus, const SplitPlan& split,
                      const audio::MfccConfig& mfcc_cfg, const gmm::TrainConfig& train_cfg) {
  ModelSet models;
  for (const auto& [speaker, data] : corpus.speakers)
    for (const auto& [phrase, sessions] : data.takes) {
      std::vector<audio::FeatureMatrix> enroll;
      enroll.reserve(sessions[0].size() + sessions[1].size());
      for (std::size_t s = 0; s < 2; ++s)
        for (const audio::AudioClip& clip : sessions[s])
          enroll.push_back(audio::compute_mfcc(clip, mfcc_cfg));

      auto plan = split.takes.find(std::make_pair(speaker, phrase));
      if (plan == split.takes.end())
        throw ValueError("split plan does not cover speaker " + speaker + ", phrase " + phrase);

      auto gather = [&](const std::vector<std::size_t>& indices) {
        std::vector<audio::FeatureMatrix> sel;
        sel.reserve(indices.size());
        for (std::size_t i : indices) {
          if (i >= enroll.size())
            throw ValueError("split index out of range for speaker " + speaker + ", phrase " +
                             phrase);
          sel.push_back(enroll[i]);
        }
        return audio::concat(sel);
      };

      auto train = [&](const audio::FeatureMatrix& features, const char* role) {
        gmm::TrainConfig cfg = train_cfg;
        cfg.rng_seed = derive_seed(train_cfg.rng_seed,
                                   {hash_str(role), hash_str(speaker), hash_str(phrase)});
        return gmm::train_model(features, phrase, cfg);
      };

      models.gallery[speaker][phrase] = train(gather(plan->second.gallery), "gallery");
      models.probe[speaker][phrase] = train(gather(plan->second.probe), "probe");

      std::vector<audio::FeatureMatrix> imposter;
      imposter.reserve(sessions[2].size());
      for (const audio::AudioClip& clip : sessions[2])
        imposter.push_back(audio::compute_mfcc(clip, mfcc_cfg));
      models.imposter[speaker][phrase] = train(audio::concat(imposter), "imposter");
    }
  return models;
}

// ------------------------------------------------------------------ trials

namespace {

const gmm::PhraseModel* find_model(
    const std::map<std::string, std::map<std::string, gmm::PhraseModel>>& set,
    const std::string& speaker, const std::string& phrase) {
  auto s = set.find(speaker);
  if (s == set.end()) return nullptr;
  auto p = s->second.find(phrase);
  return p == s->second.end() ? nullptr : &p->second;
}

}  // namespace

EvalResult run_baseline(const Corpus& corpus, const ModelSet& models,
                        gmm::ScoreDirection direction) {
  EvalResult result;
  for (const auto& [speaker, data] : corpus.speakers) {
    const std::string& imposter = corpus.imposter_of.at(speaker);
    for (const std::string& phrase : corpus.phrases) {
      const gmm::PhraseModel* gallery = find_model(models.gallery, speaker, phrase);
      const gmm::PhraseModel* probe = find_model(models.probe, speaker, phrase);
      const gmm::PhraseModel* attack = find_model(models.imposter, imposter, phrase);
      if (gallery == nullptr || probe == nullptr || attack == nullptr) {
        result.warnings.push_back("skipped " + speaker + "/" + phrase + ": missing trained model");
        continue;
      }
      result.outcomes.push_back({"baseline:" + speaker + ":" + phrase + ":genuine", true,
                                 gmm::model_distance(*probe, *gallery, direction), speaker, phrase,
                                 direction});
      result.outcomes.push_back({"baseline:" + speaker + ":" + phrase + ":imposter", false,
                                 gmm::model_distance(*attack, *gallery, direction), speaker, phrase,
                                 direction});
    }
  }
  result.roc = compute_roc(result.outcomes, ScoreSense::LowerAccepts);
  return result;
}

EvalResult run_vaulted(const Corpus& corpus, const ModelSet& models,
                       gmm::ScoreDirection direction, VaultedMode mode, std::uint64_t rng_seed) {
  EvalResult result;
  struct Claimant {
    std::string id;
    const std::map<std::string, gmm::PhraseModel>* live;
    bool genuine;
    const char* source;
  };

  for (const auto& [speaker, data] : corpus.speakers) {
    const std::string& imposter = corpus.imposter_of.at(speaker);

    std::vector<Claimant> claimants;
    auto probe_of = [&](const std::string& id) -> const std::map<std::string, gmm::PhraseModel>* {
      auto it = models.probe.find(id);
      return it == models.probe.end() ? nullptr : &it->second;
    };
    if (const auto* live = probe_of(speaker)) claimants.push_back({speaker, live, true, "probe"});
    if (auto it = models.imposter.find(imposter); it != models.imposter.end())
      claimants.push_back({imposter, &it->second, false, "imposter-session"});
    if (mode == VaultedMode::AllVsAll)
      for (const auto& [other, other_data] : corpus.speakers) {
        if (other == speaker) continue;
        if (const auto* live = probe_of(other)) claimants.push_back({other, live, false, "probe"});
      }

    for (const Claimant& claimant : claimants) {
      rng::Engine eng(derive_seed(rng_seed, {hash_str("vaulted"), hash_str(speaker),
                                             hash_str(claimant.id), hash_str(claimant.source)}));
      std::size_t correct = 0;
      std::size_t total = 0;
      for (const std::string& phrase : corpus.phrases) {
        const gmm::PhraseModel* real = find_model(models.gallery, speaker, phrase);
        const gmm::PhraseModel* chaff = find_model(models.imposter, imposter, phrase);
        auto live = claimant.live->find(phrase);
        if (real == nullptr || chaff == nullptr || live == claimant.live->end()) {
          result.warnings.push_back("skipped " + speaker + "/" + phrase + " for claimant " +
                                    claimant.id + ": missing trained model");
          continue;
        }
        // bit 0 presents the real model first
        const std::uint64_t bit = rng::below(eng, 2);
        const gmm::PhraseModel& first = bit ? *chaff : *real;
        const gmm::PhraseModel& second = bit ? *real : *chaff;
        const gmm::Choice choice = gmm::choose_closer(live->second, first, second, direction);
        const bool picked_real = (choice == gmm::Choice::First) == (bit == 0);
        correct += picked_real ? 1 : 0;
        ++total;
      }
      if (total == 0) {
        result.warnings.push_back("skipped claimant " + claimant.id + " against " + speaker +
                                  ": no usable phrases");
        continue;
      }
      result.outcomes.push_back(
          {"vaulted:" + speaker + ":" + claimant.id + ":" + claimant.source, claimant.genuine,
           static_cast<double>(correct) / static_cast<double>(total), speaker, "*", direction});
    }
  }
  result.roc = compute_roc(result.outcomes, ScoreSense::HigherAccepts);
  return result;
}

// --------------------------------------------------------------------- roc

namespace {

// Normalized key space: accept iff key <= t. Candidates are every distinct
// key, the midpoints between neighbours, and sentinels past both ends.
std::vector<double> threshold_candidates(const std::vector<double>& sorted_keys) {
  std::vector<double> distinct;
  for (double k : sorted_keys)
    if (distinct.empty() || k != distinct.back()) distinct.push_back(k);
  std::vector<double> cand;
  cand.reserve(distinct.size() * 2 + 2);
  cand.push_back(distinct.front() - 1.0);
  for (std::size_t i = 0; i < distinct.size(); ++i) {
    if (i > 0) cand.push_back(distinct[i - 1] + (distinct[i] - distinct[i - 1]) / 2.0);
    cand.push_back(distinct[i]);
  }
  cand.push_back(distinct.back() + 1.0);
  return cand;
}

double fraction_at_most(const std::vector<double>& sorted, double t) {
  const auto it = std::upper_bound(sorted.begin(), sorted.end(), t);
  return static_cast<double>(it - sorted.begin()) / static_cast<double>(sorted.size());
}

}  // namespace

RocCurve compute_roc(std::span<const TrialOutcome> outcomes, ScoreSense sense) {
  std::vector<double> genuine, imposter, all;
  for (const TrialOutcome& o : outcomes) {
    if (!std::isfinite(o.score)) throw ValueError("non-finite trial score in " + o.trial_id);
    const double key = sense == ScoreSense::LowerAccepts ? o.score : -o.score;
    (o.genuine ? genuine : imposter).push_back(key);
    all.push_back(key);
  }
  if (genuine.empty() || imposter.empty())
    throw ValueError("ROC needs at least one genuine and one imposter trial");
  std::sort(genuine.begin(), genuine.end());
  std::sort(imposter.begin(), imposter.end());
  std::sort(all.begin(), all.end());

  std::vector<double> cand = threshold_candidates(all);
  // loose (accept everything) to tight (accept nothing)
  std::sort(cand.begin(), cand.end(), std::greater<>());

  RocCurve roc;
  roc.points.reserve(cand.size());
  for (double t : cand) {
    RocPoint p;
    p.threshold = sense == ScoreSense::LowerAccepts ? t : -t;
    p.far = fraction_at_most(imposter, t);
    p.frr = 1.0 - fraction_at_most(genuine, t);
    roc.points.push_back(p);
  }

  // FAR falls and FRR rises along the sweep, so far - frr crosses zero once;
  // interpolate linearly inside the crossing segment.
  roc.eer = roc.points.front().far;
  roc.eer_threshold = roc.points.front().threshold;
  for (std::size_t i = 0; i < roc.points.size(); ++i) {
    const double d = roc.points[i].far - roc.points[i].frr;
    if (d > 0.0) continue;
    if (d == 0.0 || i == 0) {
      roc.eer = roc.points[i].far;
      roc.eer_threshold = roc.points[i].threshold;
    } else {
      const RocPoint& a = roc.points[i - 1];
      const RocPoint& b = roc.points[i];
      const double da = a.far - a.frr;
      const double alpha = da / (da - d);
      roc.eer = a.far + alpha * (b.far - a.far);
      roc.eer_threshold = a.threshold + alpha * (b.threshold - a.threshold);
    }
    return roc;
  }
  return roc;  // unreachable for non-empty classes; keeps the compiler happy
}

// --------------------------------------------------- pairwise vs threshold

double pairwise_decision_accuracy(std::span<const std::pair<double, double>> pairs,
                                  ScoreSense sense) {
  if (pairs.empty()) throw ValueError("no score pairs");
  std::size_t wins = 0;
  for (const auto& [genuine, imposter] : pairs)
    wins += (sense == ScoreSense::LowerAccepts ? genuine < imposter : genuine > imposter) ? 1 : 0;
  return static_cast<double>(wins) / static_cast<double>(pairs.size());
}

double best_global_threshold_accuracy(std::span<const std::pair<double, double>> pairs,
                                      ScoreSense sense) {
  if (pairs.empty()) throw ValueError("no score pairs");
  std::vector<double> genuine, imposter, all;
  for (const auto& [g, i] : pairs) {
    const double kg = sense == ScoreSense::LowerAccepts ? g : -g;
    const double ki = sense == ScoreSense::LowerAccepts ? i : -i;
    genuine.push_back(kg);
    imposter.push_back(ki);
    all.push_back(kg);
    all.push_back(ki);
  }
  std::sort(genuine.begin(), genuine.end());
  std::sort(imposter.begin(), imposter.end());
  std::sort(all.begin(), all.end());

  double best = 0.0;
  const double total = static_cast<double>(all.size());
  for (double t : threshold_candidates(all)) {
    const double correct = fraction_at_most(genuine, t) * static_cast<double>(genuine.size()) +
                           (1.0 - fraction_at_most(imposter, t)) * static_cast<double>(imposter.size());
    best = std::max(best, correct / total);
  }
  return best;
}

double random_attacker_acceptance(std::size_t n_bits, std::size_t trials, double threshold,
                                  std::uint64_t rng_seed) {
  if (n_bits == 0 || trials == 0) throw ValueError("need at least one bit and one trial");
  if (!(threshold > 0.0) || threshold > 1.0) throw ValueError("threshold must be in (0, 1]");
  rng::Engine eng(derive_seed(rng_seed, {hash_str("attacker")}));
  std::size_t accepted = 0;
  std::vector<std::uint8_t> guess(n_bits);
  for (std::size_t t = 0; t < trials; ++t) {
    const protocol::ChallengeBitstring expected =
        protocol::draw_challenge_bitstring(n_bits, 1, eng);
    for (std::uint8_t& b : guess) b = static_cast<std::uint8_t>(rng::below(eng, 2));
    if (protocol::score_bits(expected.bits, guess, threshold).accept) ++accepted;
  }
  return static_cast<double>(accepted) / static_cast<double>(trials);
}

// ---------------------------------------------------------------- security

SecurityReport security_report(std::size_t num_phrases, std::uint8_t bits_per_question,
                               bool keys_compromised) {
  if (num_phrases == 0) throw ValueError("need at least one phrase");
  if (bits_per_question < 1 || bits_per_question > 8)
    throw ValueError("bits per question must be in [1, 8]");
  const std::size_t total_bits = num_phrases * bits_per_question;
  if (total_bits > 1024) throw ValueError("challenge space too large to report");

  SecurityReport report;
  report.num_phrases = num_phrases;
  report.bits_per_question = bits_per_question;
  report.keys_compromised = keys_compromised;
  report.attacker_success = std::ldexp(1.0, -static_cast<int>(total_bits));
  report.success_percent = fmt("%.2f", report.attacker_success * 100.0);
  if (keys_compromised) {
    report.statement =
        "Even with every stored layer stripped, an attacker must still answer the live "
        "challenge: guessing all " +
        std::to_string(total_bits) + " bits succeeds with probability 2^-" +
        std::to_string(total_bits) + " (" + report.success_percent + "% per attempt).";
  } else {
    report.statement =
        "Records and transcripts are doubly encrypted; an attacker who has compromised "
        "neither key cannot tell real models from chaff and learns nothing from captured "
        "traffic, so there is nothing to guess against.";
  }
  return report;
}

std::string to_text(const SecurityReport& report) {
  const std::size_t total_bits =
      report.num_phrases * static_cast<std::size_t>(report.bits_per_question);
  std::string out;
  out += "security summary\n";
  out += "phrases: " + std::to_string(report.num_phrases) +
         ", bits per question: " + std::to_string(report.bits_per_question) + "\n";
  out += std::string("keys compromised: ") + (report.keys_compromised ? "yes" : "no") + "\n";
  out += "random-guess success: 2^-" + std::to_string(total_bits) + " = " +
         fmt("%.6g", report.attacker_success) + " (" + report.success_percent +
         "% per attempt)\n";
  out += report.statement + "\n";
  return out;
}

// ------------------------------------------------------------------ output

std::string roc_csv(const RocCurve& roc, std::span<const std::string> annotations) {
  std::string out = "threshold,far,frr\n";
  for (const RocPoint& p : roc.points)
    out += fmt("%.12g", p.threshold) + "," + fmt("%.12g", p.far) + "," + fmt("%.12g", p.frr) + "\n";
  out += "# summary: eer=" + fmt("%.12g", roc.eer) +
         " eer_threshold=" + fmt("%.12g", roc.eer_threshold) + "\n";
  for (const std::string& a : annotations) out += "# " + a + "\n";
  return out;
}

std::string outcomes_csv(std::span<const TrialOutcome> outcomes) {
  std::string out = "trial_id,genuine,score,speaker,phrase,direction\n";
  for (const TrialOutcome& o : outcomes) {
    out += o.trial_id + "," + (o.genuine ? "1" : "0") + "," + fmt("%.12g", o.score) + "," +
           o.speaker + "," + o.phrase + "," + direction_name(o.direction) + "\n";
  }
  return out;
}

}  // namespace vvv::eval
