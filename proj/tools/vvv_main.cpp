// vvv: command-line front end for enrollment, verification, revocation, and
// the evaluation harness. Exit codes are a stable contract: 0 accept/success,
// 1 reject, 2 usage or input errors, 3 integrity/authentication errors.

#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <termios.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "vvv/audio.hpp"
#include "vvv/bytes.hpp"
#include "vvv/errors.hpp"
#include "vvv/eval.hpp"
#include "vvv/gmm.hpp"
#include "vvv/protocol.hpp"
#include "vvv/rng.hpp"
#include "vvv/vault.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vvv;

namespace {

constexpr int kOk = 0;
constexpr int kReject = 1;
constexpr int kUsage = 2;
constexpr int kIntegrity = 3;

constexpr char kKeyMagic[4] = {'V', 'V', 'K', '1'};
constexpr char kSealKeyMagic[4] = {'V', 'V', 'S', '1'};

// ------------------------------------------------------------------- files

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValueError("cannot read " + path.string());
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  return data;
}

// Temp-then-rename so an interrupted run never leaves a half-written file.
void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> data) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValueError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size()));
    if (!out) throw ValueError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()),
                                    text.size()));
}

std::string hex(std::span<const std::uint8_t> data) {
  static const char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(data.size() * 2);
  for (std::uint8_t b : data) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0xf]);
  }
  return out;
}

// ----------------------------------------------------------------- keyfile

std::vector<std::uint8_t> serialize_server_key(const vault::ServerKey& key) {
  bytes::Writer w;
  w.raw(std::string_view(kKeyMagic, 4));
  w.raw(std::span(key.key.data(), key.key.size()));
  w.str(key.key_id);
  return w.take();
}

vault::ServerKey parse_server_key(std::span<const std::uint8_t> data) {
  bytes::Reader r(data);
  r.expect_magic(std::string_view(kKeyMagic, 4), "server key file");
  vault::ServerKey key;
  auto raw = r.raw(key.key.size());
  std::copy(raw.begin(), raw.end(), key.key.begin());
  key.key_id = r.str();
  r.expect_done("server key file");
  return key;
}

vault::ServerKey load_server_key(const fs::path& path) {
  return parse_server_key(read_file(path));
}

std::vector<std::uint8_t> serialize_seal_key(const vault::KeyBytes& key) {
  bytes::Writer w;
  w.raw(std::string_view(kSealKeyMagic, 4));
  w.raw(std::span(key.data(), key.size()));
  return w.take();
}

vault::KeyBytes parse_seal_key(std::span<const std::uint8_t> data) {
  bytes::Reader r(data);
  r.expect_magic(std::string_view(kSealKeyMagic, 4), "seal key file");
  vault::KeyBytes key{};
  auto raw = r.raw(key.size());
  std::copy(raw.begin(), raw.end(), key.begin());
  r.expect_done("seal key file");
  return key;
}

// ------------------------------------------------------------------- store

fs::path record_path(const fs::path& store, const std::string& id) {
  return store / (id + ".vvr");
}

fs::path seal_key_path(const fs::path& store, const std::string& id) {
  return store / (id + ".sealkey");
}

// Loads every record in the store into the server, so duplicate-id checks
// and verification see the persisted state.
void load_store(protocol::Server& server, const fs::path& store) {
  if (!fs::is_directory(store)) return;
  std::vector<fs::path> records;
  for (const auto& entry : fs::directory_iterator(store))
    if (entry.is_regular_file() && entry.path().extension() == ".vvr")
      records.push_back(entry.path());
  std::sort(records.begin(), records.end());
  for (const fs::path& path : records) {
    vault::EnrollmentRecord record = vault::parse_record(read_file(path));
    const fs::path keyp = seal_key_path(store, record.user_id);
    if (!fs::exists(keyp))
      throw ValueError("record " + path.string() + " has no matching seal key file");
    server.add_user(std::move(record), parse_seal_key(read_file(keyp)));
  }
}

// ---------------------------------------------------------------- password

std::string get_password() {
  if (const char* env = std::getenv("VVV_PASSWORD")) return env;
  const bool tty = isatty(STDIN_FILENO) != 0;
  termios before{};
  if (tty) {
    std::cerr << "password: " << std::flush;
    tcgetattr(STDIN_FILENO, &before);
    termios noecho = before;
    noecho.c_lflag &= ~static_cast<tcflag_t>(ECHO);
    tcsetattr(STDIN_FILENO, TCSANOW, &noecho);
  }
  std::string password;
  const bool got = static_cast<bool>(std::getline(std::cin, password));
  if (tty) {
    tcsetattr(STDIN_FILENO, TCSANOW, &before);
    std::cerr << "\n";
  }
  if (!got || password.empty())
    throw ValueError("no password given (set VVV_PASSWORD or answer the prompt)");
  return password;
}

// ------------------------------------------------------------------ corpus

std::vector<audio::FeatureMatrix> features_of(const std::vector<audio::AudioClip>& takes,
                                              const audio::MfccConfig& cfg) {
  std::vector<audio::FeatureMatrix> out;
  out.reserve(takes.size());
  for (const audio::AudioClip& clip : takes) out.push_back(audio::compute_mfcc(clip, cfg));
  return out;
}

const eval::SpeakerData& speaker_or_die(const eval::Corpus& corpus, const std::string& id) {
  auto it = corpus.speakers.find(id);
  if (it == corpus.speakers.end()) throw ValueError("speaker " + id + " is not in the corpus");
  return it->second;
}

// --synth speakers=10,phrases=10,takes=8,separation=4.0
eval::SynthParams parse_synth_spec(const std::string& spec, std::uint64_t seed) {
  eval::SynthParams params;
  params.rng_seed = seed;
  if (spec.empty()) return params;
  std::size_t pos = 0;
  while (pos < spec.size()) {
    std::size_t comma = spec.find(',', pos);
    if (comma == std::string::npos) comma = spec.size();
    const std::string item = spec.substr(pos, comma - pos);
    pos = comma + 1;
    const std::size_t eq = item.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == item.size())
      throw ValueError("bad --synth item (want key=value): " + item);
    const std::string key = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    try {
      if (key == "speakers")
        params.speakers = std::stoul(value);
      else if (key == "phrases")
        params.phrases = std::stoul(value);
      else if (key == "takes")
        params.takes = std::stoul(value);
      else if (key == "separation")
        params.separation = std::stod(value);
      else if (key == "rate")
        params.sample_rate = std::stoi(value);
      else if (key == "duration")
        params.duration_seconds = std::stod(value);
      else
        throw ValueError("unknown --synth key: " + key);
    } catch (const std::invalid_argument&) {
      throw ValueError("bad --synth value for " + key + ": " + value);
    } catch (const std::out_of_range&) {
      throw ValueError("bad --synth value for " + key + ": " + value);
    }
  }
  return params;
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

// ---------------------------------------------------------------- commands

struct CommonOpts {
  std::uint64_t seed = 0;
  bool seeded = false;
};

int cmd_keygen(const std::string& out, bool force, const CommonOpts& common) {
  const fs::path path(out);
  if (fs::exists(path) && !force) {
    std::cerr << "refusing to overwrite " << path.string() << " (use --force)\n";
    return kUsage;
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const vault::ServerKey key =
      common.seeded ? vault::seeded_server_key(common.seed) : vault::generate_server_key();
  write_file_atomic(path, serialize_server_key(key));

  // Companion KDF template: the parameters a client should use to derive its
  // user key at enrollment time.
  const vault::Salt salt =
      common.seeded ? vault::seeded_salt(rng::derive_seed(common.seed, {rng::hash_str("salt")}))
                    : vault::random_salt();
  json tmpl;
  tmpl["kdf"] = "pbkdf2-hmac-sha256";
  tmpl["kdf_iterations"] = vault::kMinKdfIterations;
  tmpl["kdf_salt_hex"] = hex(salt);
  write_text_atomic(path.string() + ".salt.json", tmpl.dump(2) + "\n");

  std::cout << "wrote server key " << key.key_id << " to " << path.string() << "\n";
  return kOk;
}

int cmd_synth(const std::string& out, const eval::SynthParams& params, bool force) {
  const fs::path root(out);
  if (fs::exists(root) && !fs::is_empty(root) && !force) {
    std::cerr << "output directory " << root.string() << " is not empty (use --force)\n";
    return kUsage;
  }
  const eval::Corpus corpus = eval::synth_corpus(params);
  eval::write_corpus_tree(corpus, out);
  std::cout << "wrote synthetic corpus: " << corpus.speakers.size() << " speakers, "
            << corpus.phrases.size() << " phrases, " << params.takes
            << " takes per session at " << root.string() << "\n";
  return kOk;
}

protocol::ServerPolicy make_policy(const eval::Corpus& corpus, std::size_t pairs,
                                   double threshold, unsigned bits) {
  protocol::ServerPolicy policy;
  policy.phrases = corpus.phrases;
  policy.challenge_pairs = pairs;
  policy.threshold = threshold;
  policy.bits_per_question = static_cast<std::uint8_t>(bits);
  return policy;
}

int cmd_enroll(const std::string& corpus_dir, const std::string& speaker,
               const std::string& store_dir, const std::string& key_file, std::size_t pairs,
               double threshold, unsigned bits, std::uint32_t kdf_iterations,
               const CommonOpts& common) {
  const eval::Corpus corpus = eval::load_mit_layout(corpus_dir);
  const eval::SpeakerData& data = speaker_or_die(corpus, speaker);
  const std::string password = get_password();
  const vault::ServerKey server_key = load_server_key(key_file);

  const fs::path store(store_dir);
  fs::create_directories(store);

  protocol::Server server(server_key, make_policy(corpus, pairs, threshold, bits),
                          rng::derive_seed(common.seed, {rng::hash_str("cli-server")}));

  try {
    load_store(server, store);
  } catch (const ParseError& e) {
    std::cerr << "record store is damaged: " << e.what() << "\n";
    return kIntegrity;
  }

  const audio::MfccConfig mfcc_cfg;
  protocol::EnrollmentInputs inputs;
  inputs.user_id = speaker;
  inputs.password = password;
  inputs.kdf_iterations = kdf_iterations;
  inputs.rng_seed = common.seed;
  inputs.created_at = common.seeded ? 0 : static_cast<std::uint64_t>(std::time(nullptr));
  inputs.train_cfg.rng_seed = common.seed;

  // The speaker's first enrollment session provides the training takes; the
  // chaff pool holds every other speaker's models of the same phrases.
  for (const std::string& phrase : corpus.phrases) {
    inputs.utterances[phrase] =
        features_of(data.takes.at(phrase)[static_cast<std::size_t>(eval::Session::Enroll1)],
                    mfcc_cfg);
    auto& pool = inputs.chaff_pool[phrase];
    for (const auto& [other, other_data] : corpus.speakers) {
      if (other == speaker) continue;
      gmm::TrainConfig cfg = inputs.train_cfg;
      cfg.rng_seed = rng::derive_seed(common.seed, {rng::hash_str("cli-chaff-pool"),
                                                    rng::hash_str(other), rng::hash_str(phrase)});
      std::vector<audio::FeatureMatrix> takes = features_of(
          other_data.takes.at(phrase)[static_cast<std::size_t>(eval::Session::Enroll1)], mfcc_cfg);
      pool.push_back({other, gmm::train_model(audio::concat(takes), phrase, cfg)});
    }
  }

  try {
    const vault::EnrollmentRecord record = protocol::run_enrollment(inputs, server);
    const vault::KeyBytes* seal_key = server.challenge_seal_key(speaker);
    if (seal_key == nullptr) throw ProtocolError(ProtocolError::Code::BadRequest, "enrollment left no seal key");
    write_file_atomic(record_path(store, speaker), vault::serialize_record(record));
    write_file_atomic(seal_key_path(store, speaker), serialize_seal_key(*seal_key));
    std::cout << "enrolled " << speaker << ": " << record.pairs.size() << " phrase pairs stored in "
              << store.string() << "\n";
    return kOk;
  } catch (const ProtocolError& e) {
    std::cerr << "enrollment refused: " << e.what() << "\n";
    return e.code() == ProtocolError::Code::DuplicateUser ? kUsage : kIntegrity;
  }
}

int cmd_verify(const std::string& corpus_dir, const std::string& claimed,
               const std::string& voice_opt, const std::string& store_dir,
               const std::string& key_file, std::size_t pairs, double threshold, unsigned bits,
               const std::string& direction_name, const CommonOpts& common) {
  const eval::Corpus corpus = eval::load_mit_layout(corpus_dir);
  const std::string voice = voice_opt.empty() ? claimed : voice_opt;
  const eval::SpeakerData& voice_data = speaker_or_die(corpus, voice);
  const std::string password = get_password();
  const vault::ServerKey server_key = load_server_key(key_file);

  gmm::ScoreDirection direction = gmm::ScoreDirection::GalleryVariance;
  if (direction_name == "probe")
    direction = gmm::ScoreDirection::ProbeVariance;
  else if (direction_name != "gallery")
    throw ValueError("--direction must be gallery or probe");

  protocol::Server server(server_key, make_policy(corpus, pairs, threshold, bits),
                          rng::derive_seed(common.seed, {rng::hash_str("cli-server")}));
  try {
    load_store(server, fs::path(store_dir));
  } catch (const ParseError& e) {
    std::cerr << "record store is damaged: " << e.what() << "\n";
    return kIntegrity;
  }

  // Fresh sample selection: the claimed speaker verifies with their second
  // enrollment session; their dedicated imposter attacks with the imposter
  // session; anyone else just uses their own second session.
  eval::Session session = eval::Session::Enroll2;
  auto imp = corpus.imposter_of.find(claimed);
  if (voice != claimed && imp != corpus.imposter_of.end() && imp->second == voice)
    session = eval::Session::Imposter;

  const audio::MfccConfig mfcc_cfg;
  protocol::VerificationInputs inputs;
  inputs.claimed_id = claimed;
  inputs.password = password;
  inputs.direction = direction;
  inputs.rng_seed = common.seed;
  inputs.train_cfg.rng_seed = common.seed;
  for (const std::string& phrase : corpus.phrases) {
    auto ph = voice_data.takes.find(phrase);
    if (ph == voice_data.takes.end()) continue;
    inputs.utterances[phrase] = features_of(ph->second[static_cast<std::size_t>(session)], mfcc_cfg);
  }

  const protocol::VerificationOutcome outcome = protocol::run_verification(inputs, server);
  switch (outcome.status) {
    case protocol::VerifyStatus::Accepted:
      std::cout << "accepted: " << outcome.decision->correct << "/" << outcome.decision->total
                << " questions correct (threshold " << fmt("%g", outcome.decision->threshold)
                << ")\n";
      return kOk;
    case protocol::VerifyStatus::Rejected:
      std::cout << "rejected: " << outcome.decision->correct << "/" << outcome.decision->total
                << " questions correct (threshold " << fmt("%g", outcome.decision->threshold)
                << ")\n";
      return kReject;
    case protocol::VerifyStatus::RejectedRevoked:
      std::cout << "rejected: enrollment is revoked\n";
      return kReject;
    case protocol::VerifyStatus::WrongCredentials:
      std::cout << "authentication failed\n";
      return kIntegrity;
    case protocol::VerifyStatus::UnknownUser:
      std::cerr << "unknown user: " << claimed << "\n";
      return kUsage;
  }
  return kUsage;  // unreachable
}

int cmd_revoke(const std::string& store_dir, const std::string& id) {
  const fs::path path = record_path(fs::path(store_dir), id);
  if (!fs::exists(path)) {
    std::cerr << "no record for " << id << " in " << store_dir << "\n";
    return kUsage;
  }
  vault::EnrollmentRecord record;
  try {
    record = vault::parse_record(read_file(path));
  } catch (const ParseError& e) {
    std::cerr << "record is damaged: " << e.what() << "\n";
    return kIntegrity;
  }
  const bool changed = vault::revoke(record);
  write_file_atomic(path, vault::serialize_record(record));
  std::cout << (changed ? "revoked " : "already revoked: ") << id << "\n";
  return kOk;
}

int cmd_eval(const std::string& out_dir, const std::string& corpus_dir,
             const std::string& synth_spec, bool synth_given, unsigned bits, bool force,
             const CommonOpts& common) {
  if (corpus_dir.empty() == !synth_given)
    throw ValueError("pass exactly one of --corpus or --synth");

  const fs::path out(out_dir);
  fs::create_directories(out);
  const std::vector<std::string> names = {
      "baseline_gallery_variance_roc.csv",  "baseline_gallery_variance_outcomes.csv",
      "baseline_probe_variance_roc.csv",    "baseline_probe_variance_outcomes.csv",
      "vaulted_dedicated_roc.csv",          "vaulted_dedicated_outcomes.csv",
      "vaulted_all_vs_all_roc.csv",         "vaulted_all_vs_all_outcomes.csv",
      "security_report.txt",                "run_config.json"};
  for (const std::string& name : names)
    if (fs::exists(out / name) && !force) {
      std::cerr << out_dir << "/" << name << " already exists (use --force)\n";
      return kUsage;
    }

  eval::Corpus corpus;
  eval::SynthParams synth_params;
  if (synth_given) {
    synth_params = parse_synth_spec(synth_spec, common.seed);
    corpus = eval::synth_corpus(synth_params);
    eval::validate_corpus(corpus);
  } else {
    corpus = eval::load_mit_layout(corpus_dir);
  }

  const eval::SplitPlan split = eval::make_split(corpus, common.seed);
  const audio::MfccConfig mfcc_cfg;
  gmm::TrainConfig train_cfg;
  train_cfg.rng_seed = common.seed;
  const eval::ModelSet models = eval::train_models(corpus, split, mfcc_cfg, train_cfg);

  const eval::EvalResult base_gallery =
      eval::run_baseline(corpus, models, gmm::ScoreDirection::GalleryVariance);
  const eval::EvalResult base_probe =
      eval::run_baseline(corpus, models, gmm::ScoreDirection::ProbeVariance);
  const eval::EvalResult vault_dedicated =
      eval::run_vaulted(corpus, models, gmm::ScoreDirection::GalleryVariance,
                        eval::VaultedMode::Dedicated, common.seed);
  const eval::EvalResult vault_all = eval::run_vaulted(
      corpus, models, gmm::ScoreDirection::GalleryVariance, eval::VaultedMode::AllVsAll,
      common.seed);

  auto pct = [](double fraction) { return fmt("%.2f", fraction * 100.0) + "%"; };
  const std::string prior =
      "reference: prior phrase-verification systems report about " +
      pct(eval::kReferencePriorPhraseEer) + " EER";

  std::vector<std::string> ann_bg = {
      "reference: gallery-variance global-threshold baseline reaches about " +
          pct(eval::kReferenceBaselineGalleryEer) + " EER on the full 48-speaker corpus",
      prior};
  std::vector<std::string> ann_bp = {
      "reference: probe-variance global-threshold baseline reaches about " +
          pct(eval::kReferenceBaselineProbeEer) + " EER on the full 48-speaker corpus",
      prior};
  std::vector<std::string> ann_vd = {
      "reference: dedicated-imposter pairwise mode reaches " +
          pct(eval::kReferenceDedicatedEer) + " EER on the full 48-speaker corpus",
      prior};
  std::vector<std::string> ann_va = {
      "reference: all-vs-all pairwise mode reaches about " + pct(eval::kReferenceAllVsAllEer) +
          " EER on the full 48-speaker corpus",
      prior};

  write_text_atomic(out / names[0], eval::roc_csv(base_gallery.roc, ann_bg));
  write_text_atomic(out / names[1], eval::outcomes_csv(base_gallery.outcomes));
  write_text_atomic(out / names[2], eval::roc_csv(base_probe.roc, ann_bp));
  write_text_atomic(out / names[3], eval::outcomes_csv(base_probe.outcomes));
  write_text_atomic(out / names[4], eval::roc_csv(vault_dedicated.roc, ann_vd));
  write_text_atomic(out / names[5], eval::outcomes_csv(vault_dedicated.outcomes));
  write_text_atomic(out / names[6], eval::roc_csv(vault_all.roc, ann_va));
  write_text_atomic(out / names[7], eval::outcomes_csv(vault_all.outcomes));

  const eval::SecurityReport sealed =
      eval::security_report(corpus.phrases.size(), static_cast<std::uint8_t>(bits), false);
  const eval::SecurityReport stripped =
      eval::security_report(corpus.phrases.size(), static_cast<std::uint8_t>(bits), true);
  write_text_atomic(out / names[8], eval::to_text(sealed) + "\n" + eval::to_text(stripped));

  json config;
  config["seed"] = common.seed;
  config["bits_per_question"] = bits;
  config["speakers"] = corpus.speakers.size();
  config["phrases"] = corpus.phrases.size();
  config["sample_rate"] = corpus.sample_rate;
  if (synth_given) {
    config["corpus"] = {{"source", "synthetic"},
                        {"takes", synth_params.takes},
                        {"separation", synth_params.separation},
                        {"duration_seconds", synth_params.duration_seconds}};
  } else {
    config["corpus"] = {{"source", "directory"}, {"root", corpus_dir}};
  }
  config["eer"] = {{"baseline_gallery_variance", base_gallery.roc.eer},
                   {"baseline_probe_variance", base_probe.roc.eer},
                   {"vaulted_dedicated", vault_dedicated.roc.eer},
                   {"vaulted_all_vs_all", vault_all.roc.eer}};
  write_text_atomic(out / names[9], config.dump(2) + "\n");

  std::cout << "baseline gallery-variance eer: " << fmt("%.6g", base_gallery.roc.eer) << "\n";
  std::cout << "baseline probe-variance eer: " << fmt("%.6g", base_probe.roc.eer) << "\n";
  std::cout << "vaulted dedicated eer: " << fmt("%.6g", vault_dedicated.roc.eer) << "\n";
  std::cout << "vaulted all-vs-all eer: " << fmt("%.6g", vault_all.roc.eer) << "\n";
  std::cout << "wrote " << names.size() << " files to " << out.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vaulted voice verification"};
  app.require_subcommand(1);

  CommonOpts common;
  std::string corpus_dir, store_dir, key_file, speaker, claimed, voice, out_path;
  std::string synth_spec, direction = "gallery";
  std::string revoke_id;
  bool force = false;
  std::size_t pairs = 12;
  double threshold = 0.9;
  unsigned bits = 1;
  std::uint32_t kdf_iterations = vault::kMinKdfIterations;
  eval::SynthParams synth_defaults;

  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option("--seed", common.seed, "seed for reproducible runs")
        ->each([&](const std::string&) { common.seeded = true; });
  };
  auto add_policy = [&](CLI::App* cmd) {
    cmd->add_option("--pairs", pairs, "challenge questions per session");
    cmd->add_option("--threshold", threshold, "accept threshold on the bit accuracy");
    cmd->add_option("--bits-per-question", bits, "bits encoded by each question")
        ->check(CLI::Range(1u, 8u));
  };

  CLI::App* keygen = app.add_subcommand("keygen", "generate a server key file");
  keygen->add_option("--out", out_path, "key file path")->required();
  keygen->add_flag("--force", force, "overwrite an existing key file");
  add_seed(keygen);

  CLI::App* synth = app.add_subcommand("synth", "write a synthetic corpus tree");
  synth->add_option("--out", out_path, "corpus root directory")->required();
  synth->add_option("--speakers", synth_defaults.speakers, "number of speakers");
  synth->add_option("--phrases", synth_defaults.phrases, "phrases per speaker");
  synth->add_option("--takes", synth_defaults.takes, "takes per phrase per session");
  synth->add_option("--separation", synth_defaults.separation, "voice separation factor");
  synth->add_option("--rate", synth_defaults.sample_rate, "sample rate in Hz");
  synth->add_option("--duration", synth_defaults.duration_seconds, "take length in seconds");
  synth->add_flag("--force", force, "write into a non-empty directory");
  add_seed(synth);

  CLI::App* enroll = app.add_subcommand("enroll", "enroll a speaker from corpus takes");
  enroll->add_option("--corpus", corpus_dir, "corpus root directory")->required();
  enroll->add_option("--speaker", speaker, "speaker id to enroll")->required();
  enroll->add_option("--store", store_dir, "record store directory")->required();
  enroll->add_option("--key", key_file, "server key file")->required();
  enroll->add_option("--kdf-iterations", kdf_iterations, "PBKDF2 iteration count");
  add_policy(enroll);
  add_seed(enroll);

  CLI::App* verify = app.add_subcommand("verify", "run a verification session");
  verify->add_option("--corpus", corpus_dir, "corpus root directory")->required();
  verify->add_option("--claimed", claimed, "claimed identity")->required();
  verify->add_option("--voice", voice, "speaker actually talking (default: claimed)");
  verify->add_option("--store", store_dir, "record store directory")->required();
  verify->add_option("--key", key_file, "server key file")->required();
  verify->add_option("--direction", direction, "z-score normalization: gallery or probe");
  add_policy(verify);
  add_seed(verify);

  CLI::App* revoke = app.add_subcommand("revoke", "revoke an enrollment record");
  revoke->add_option("--store", store_dir, "record store directory")->required();
  revoke->add_option("--id", revoke_id, "user id to revoke")->required();

  CLI::App* evalc = app.add_subcommand("eval", "run the evaluation harness");
  evalc->add_option("--out", out_path, "output directory")->required();
  evalc->add_option("--corpus", corpus_dir, "corpus root directory");
  CLI::Option* synth_opt = evalc->add_option(
      "--synth", synth_spec, "synthesize a corpus: speakers=10,phrases=10,takes=8,separation=4");
  synth_opt->expected(0, 1);
  evalc->add_option("--bits-per-question", bits, "bits per question for the security report")
      ->check(CLI::Range(1u, 8u));
  evalc->add_flag("--force", force, "overwrite existing outputs");
  add_seed(evalc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (keygen->parsed()) return cmd_keygen(out_path, force, common);
    if (synth->parsed()) {
      synth_defaults.rng_seed = common.seed;
      return cmd_synth(out_path, synth_defaults, force);
    }
    if (enroll->parsed())
      return cmd_enroll(corpus_dir, speaker, store_dir, key_file, pairs, threshold, bits,
                        kdf_iterations, common);
    if (verify->parsed())
      return cmd_verify(corpus_dir, claimed, voice, store_dir, key_file, pairs, threshold, bits,
                        direction, common);
    if (revoke->parsed()) return cmd_revoke(store_dir, revoke_id);
    if (evalc->parsed())
      return cmd_eval(out_path, corpus_dir, synth_spec, synth_opt->count() > 0, bits, force,
                      common);
  } catch (const AuthenticationError&) {
    std::cerr << "authentication failed\n";
    return kIntegrity;
  } catch (const ProtocolError& e) {
    std::cerr << "protocol error: " << e.what() << "\n";
    return kIntegrity;
  } catch (const WavError& e) {
    std::cerr << "bad audio input: " << e.what() << "\n";
    return kUsage;
  } catch (const ParseError& e) {
    std::cerr << "damaged input: " << e.what() << "\n";
    return kIntegrity;
  } catch (const ValueError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "filesystem error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
