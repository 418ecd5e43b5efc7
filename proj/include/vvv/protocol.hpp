#pragma once
// Challenge-response protocol: wire framing, nonce-bound challenge sets,
// response scoring, and in-process client/server state machines.
//
// Verification runs in two rounds under the fixed message tags: an identity
// round (the server returns the enrollment-time identity token; the client
// proves the password by opening it — aborting here means no challenge is
// ever issued) and a biometric round (the sealed challenge set goes out, the
// response bitstring comes back). A phase byte inside VerifyChallenge /
// VerifyResponse payloads distinguishes the rounds.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vvv/audio.hpp"
#include "vvv/gmm.hpp"
#include "vvv/rng.hpp"
#include "vvv/vault.hpp"

namespace vvv::protocol {

// ------------------------------------------------------------- wire format

enum class MessageType : std::uint8_t {
  EnrollInit = 1,
  EnrollPhrases = 2,
  EnrollRecord = 3,
  VerifyInit = 4,
  VerifyChallenge = 5,
  VerifyResponse = 6,
  VerifyDecision = 7,
  Error = 8,
};

struct Message {
  MessageType type = MessageType::Error;
  std::vector<std::uint8_t> payload;
};

constexpr std::uint8_t kWireVersion = 0x01;

// version u8 | type u8 | payload length u32 LE | payload
std::vector<std::uint8_t> encode_message(const Message& m);
Message decode_message(std::span<const std::uint8_t> bytes);

enum class ErrorCode : std::uint8_t {
  UnknownUser = 1,
  DuplicateUser = 2,
  Revoked = 3,
  NonceMismatch = 4,
  LengthMismatch = 5,
  BadRequest = 6,
};

enum class VerifyPhase : std::uint8_t { Identity = 0, Biometric = 1 };

Message make_error(ErrorCode code, std::string_view text);
// Returns the code iff m is an Error message.
std::optional<ErrorCode> error_code(const Message& m);

// --------------------------------------------------------- challenge data

// Secret per-session string; entry i's bits encode the position of the real
// block within entry i (bit 0 => real block sent first).
struct ChallengeBitstring {
  std::vector<std::uint8_t> bits;  // one 0/1 value per element
};

struct ChallengeEntry {
  std::uint32_t pair_id = 0;
  std::vector<vault::EncryptedBlock> blocks;  // user-layer sealed models
};

struct ChallengeSet {
  std::array<std::uint8_t, 16> nonce{};
  std::uint8_t bits_per_entry = 1;
  std::vector<ChallengeEntry> entries;
};

struct ResponseBitstring {
  std::array<std::uint8_t, 16> nonce_echo{};
  std::vector<std::uint8_t> bits;
};

std::vector<std::uint8_t> serialize_challenge_set(const ChallengeSet& set);
ChallengeSet parse_challenge_set(std::span<const std::uint8_t> bytes);

// For bits_per_entry == 1 the string is a shuffled fixed multiset, so its
// popcount is within 1 of entries/2; for larger b every entry position is
// drawn uniformly.
ChallengeBitstring draw_challenge_bitstring(std::size_t entries, std::uint8_t bits_per_entry,
                                            rng::Engine& eng);

struct IssuedChallenge {
  ChallengeBitstring bits;
  ChallengeSet set;
};

// Picks n pairs uniformly without replacement, strips the server layer from
// every block, and orders each entry so the real block sits at the position
// its bits encode. Deterministic for a given seed, fresh nonce included.
IssuedChallenge server_issue_challenge(const vault::EnrollmentRecord& record,
                                       const vault::ServerKey& server_key, std::size_t n,
                                       std::uint8_t bits_per_entry, std::uint64_t rng_seed);

// Opens every block with the user key, compares each candidate against the
// live model for the challenged phrase, and encodes the chosen position.
// Any decryption failure aborts with no partial response.
ResponseBitstring client_answer_challenge(const ChallengeSet& set,
                                          const std::map<std::string, gmm::PhraseModel>& live,
                                          const vault::UserKey& user_key,
                                          gmm::ScoreDirection direction);

struct SessionDecision {
  bool accept = false;
  std::size_t correct = 0;
  std::size_t total = 0;
  double threshold = 0.0;
};

// Pure scoring rule: accept iff correct/total >= threshold.
SessionDecision score_bits(const std::vector<std::uint8_t>& expected,
                           const std::vector<std::uint8_t>& got, double threshold);

// -------------------------------------------------------------- transcript

enum class Direction { ClientToServer, ServerToClient };

struct Transcript {
  std::vector<std::pair<Direction, std::vector<std::uint8_t>>> messages;  // raw wire bytes
};

// ------------------------------------------------------------------ server

struct ServerPolicy {
  std::vector<std::string> phrases;  // enrollment question list, server-fixed
  std::size_t challenge_pairs = 12;
  double threshold = 0.9;
  std::uint8_t bits_per_question = 1;
};

// Holds enrollment records, per-user challenge sealing keys, and open
// sessions. Never parses a phrase model and never scores voice proximity;
// it only moves sealed blocks and compares bitstrings.
class Server {
 public:
  Server(vault::ServerKey key, ServerPolicy policy, std::uint64_t rng_seed);

  Message handle(const Message& request);

  // Record store management for the CLI and tests.
  void add_user(vault::EnrollmentRecord record, const vault::KeyBytes& challenge_seal_key);
  const vault::EnrollmentRecord* find_record(const std::string& user_id) const;
  const vault::KeyBytes* challenge_seal_key(const std::string& user_id) const;
  bool revoke_user(const std::string& user_id);
  std::vector<std::string> user_ids() const;

  std::size_t open_session_count() const;
  // Serialized view of every piece of server-side state, for leak scans.
  std::vector<std::uint8_t> state_bytes() const;

  const ServerPolicy& policy() const { return policy_; }

 private:
  struct PendingEnroll {
    vault::Salt verifier_salt{};
    std::array<std::uint8_t, 32> verifier_hash{};
    vault::Salt kdf_salt{};
    std::uint32_t kdf_iterations = 0;
    vault::KeyBytes seal_key{};
  };
  struct StoredUser {
    vault::EnrollmentRecord record;
    vault::KeyBytes seal_key{};
  };
  struct OpenSession {
    std::string user_id;
    std::vector<std::uint8_t> expected;
  };

  Message handle_enroll_init(std::span<const std::uint8_t> payload);
  Message handle_enroll_record(std::span<const std::uint8_t> payload);
  Message handle_verify_init(std::span<const std::uint8_t> payload);
  Message handle_verify_response(std::span<const std::uint8_t> payload);
  void void_session(const std::string& user_id);

  vault::ServerKey key_;
  ServerPolicy policy_;
  rng::Engine rng_;
  vault::NonceSequence seal_nonces_;
  std::map<std::string, PendingEnroll> pending_;
  std::map<std::string, StoredUser> users_;
  std::map<std::array<std::uint8_t, 16>, OpenSession> sessions_;
  std::map<std::string, std::array<std::uint8_t, 16>> session_by_user_;
};

// ------------------------------------------------------------------ client

struct EnrollmentInputs {
  std::string user_id;
  std::string password;
  // phrase -> recorded takes; every server phrase must be covered
  std::map<std::string, std::vector<audio::FeatureMatrix>> utterances;
  // phrase -> candidate imposter models for chaff selection
  std::map<std::string, std::vector<vault::AttributedModel>> chaff_pool;
  gmm::TrainConfig train_cfg;
  std::size_t chaffs_per_phrase = 1;
  std::uint32_t kdf_iterations = vault::kMinKdfIterations;
  std::uint64_t rng_seed = 0;
  std::uint64_t created_at = 0;
};

// Drives the full enrollment exchange. Returns the client's copy of the
// stored record; throws ProtocolError if the server refused, in which case
// the server kept nothing.
vault::EnrollmentRecord run_enrollment(const EnrollmentInputs& in, Server& server,
                                       Transcript* transcript = nullptr);

struct VerificationInputs {
  std::string claimed_id;
  std::string password;
  std::map<std::string, std::vector<audio::FeatureMatrix>> utterances;  // fresh takes
  gmm::TrainConfig train_cfg;
  gmm::ScoreDirection direction = gmm::ScoreDirection::GalleryVariance;
  std::uint64_t rng_seed = 0;
};

enum class VerifyStatus {
  Accepted,
  Rejected,
  WrongCredentials,  // identity token would not open; no challenge was issued
  RejectedRevoked,
  UnknownUser,
};

struct VerificationOutcome {
  VerifyStatus status = VerifyStatus::Rejected;
  std::optional<SessionDecision> decision;  // present for Accepted/Rejected
};

VerificationOutcome run_verification(const VerificationInputs& in, Server& server,
                                     Transcript* transcript = nullptr);

// Sends msg over the wire codec, lets the server handle it, and returns the
// decoded reply; both directions are appended to the transcript.
Message exchange(Server& server, const Message& msg, Transcript* transcript);

std::vector<std::uint8_t> pack_bits(const std::vector<std::uint8_t>& bits);
std::vector<std::uint8_t> unpack_bits(std::span<const std::uint8_t> bytes, std::size_t count);

}  // namespace vvv::protocol
