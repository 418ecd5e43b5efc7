#pragma once
// Key handling, authenticated sealing, chaff selection, and the VVR1
// enrollment record: the storage side of the vaulted verifier.
//
// Sealing is AES-256-GCM behind seal/open free functions over strong key
// types. Both layers use the same symmetric scheme; the user layer stands in
// for public-key encryption to the user (see README), which is why the
// challenge-sealing key lives outside the enrollment record.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vvv/bytes.hpp"
#include "vvv/errors.hpp"
#include "vvv/gmm.hpp"
#include "vvv/rng.hpp"

namespace vvv::vault {

constexpr std::size_t kKeyBytes = 32;
constexpr std::size_t kSaltBytes = 16;
constexpr std::size_t kNonceBytes = 12;
constexpr std::size_t kTagBytes = 16;
constexpr std::uint32_t kMinKdfIterations = 10000;

using KeyBytes = std::array<std::uint8_t, kKeyBytes>;
using Salt = std::array<std::uint8_t, kSaltBytes>;

// Client-side key derived from the password via PBKDF2-HMAC-SHA256.
struct UserKey {
  KeyBytes key{};
  Salt salt{};
  std::uint32_t iterations = 0;
};

struct ServerKey {
  KeyBytes key{};
  std::string key_id;
};

// Throws ValueError on empty password or iterations < kMinKdfIterations.
UserKey derive_user_key(std::string_view password, const Salt& salt, std::uint32_t iterations);

Salt random_salt();                       // OS randomness
Salt seeded_salt(std::uint64_t seed);     // deterministic, for reproducible runs
ServerKey generate_server_key();          // OS randomness
ServerKey seeded_server_key(std::uint64_t seed);

std::array<std::uint8_t, 32> sha256(std::span<const std::uint8_t> data);

enum class Layer : std::uint8_t { UserLayer = 0, ServerLayer = 1 };

struct EncryptedBlock {
  Layer layer = Layer::UserLayer;
  std::array<std::uint8_t, kNonceBytes> nonce{};
  std::vector<std::uint8_t> ciphertext;
  std::array<std::uint8_t, kTagBytes> tag{};
};

// Fresh 12-byte nonces: 4-byte stream prefix plus a 64-bit counter.
// Refuses to wrap rather than ever reuse a value.
class NonceSequence {
 public:
  static NonceSequence from_os();
  static NonceSequence seeded(std::uint64_t seed);
  // For exhaustion tests.
  NonceSequence(std::uint32_t prefix, std::uint64_t start_counter)
      : prefix_(prefix), counter_(start_counter) {}

  std::array<std::uint8_t, kNonceBytes> next();

 private:
  std::uint32_t prefix_ = 0;
  std::uint64_t counter_ = 0;
  bool exhausted_ = false;
};

// AES-256-GCM. The layer tag is bound as associated data, so a block opened
// under the wrong layer or key fails with the same AuthenticationError as a
// tampered one.
EncryptedBlock seal(std::span<const std::uint8_t> plain, const KeyBytes& key, Layer layer,
                    NonceSequence& nonces);
std::vector<std::uint8_t> open(const EncryptedBlock& block, const KeyBytes& key);

// layer u8 | nonce 12 | ct len u32 | ct | tag 16
std::vector<std::uint8_t> serialize_block(const EncryptedBlock& block);
EncryptedBlock parse_block(std::span<const std::uint8_t> bytes);

// Sequential forms for embedding blocks inside larger encodings.
void write_block(bytes::Writer& w, const EncryptedBlock& block);
EncryptedBlock read_block(bytes::Reader& r);

// A phrase model attributed to the speaker who produced it; chaff selection
// must know attribution to be able to exclude the enrollee.
struct AttributedModel {
  std::string speaker;
  gmm::PhraseModel model;
};

// Uniformly picks one imposter model for the phrase, never one attributed to
// the enrollee. Pool entries must match the phrase transcription and agree on
// feature dimension.
gmm::PhraseModel make_chaff(std::string_view phrase, std::span<const AttributedModel> pool,
                            std::string_view enrollee, std::uint64_t rng_seed);

// count distinct chaff models (for multi-bit questions).
std::vector<gmm::PhraseModel> make_chaffs(std::string_view phrase,
                                          std::span<const AttributedModel> pool,
                                          std::string_view enrollee, std::size_t count,
                                          std::uint64_t rng_seed);

// One enrolled question: the real block and its chaff(s), stored in a
// shuffled order. Which position is real lives in the record's tail index,
// never next to the payload.
struct BlockPair {
  std::uint32_t pair_id = 0;
  std::vector<EncryptedBlock> blocks;  // storage order
  std::uint32_t real_index = 0;

  const EncryptedBlock& real() const { return blocks.at(real_index); }
};

struct EnrollmentRecord {
  std::string user_id;
  Salt verifier_salt{};
  std::array<std::uint8_t, 32> verifier_hash{};  // sha256(verifier_salt || user_id)
  Salt kdf_salt{};
  std::uint32_t kdf_iterations = 0;
  EncryptedBlock identity_token;  // user-sealed copy of user_id
  bool revoked = false;
  std::uint64_t created_at = 0;  // unix seconds; 0 in seeded runs
  std::vector<BlockPair> pairs;
};

struct EnrollmentOptions {
  std::uint64_t rng_seed = 0;
  std::uint64_t created_at = 0;
  // When set, used instead of a draw from the enrollment rng (the protocol
  // announces the verifier in EnrollInit before the record exists).
  std::optional<Salt> verifier_salt;
};

// Client-side enrollment material for one question: the blocks sealed for
// the user, the real model's block first, chaffs after. Every member of a
// pair is padded to the pair's longest plaintext before sealing, so the
// ciphertext lengths within a pair are equal.
struct SealedPair {
  std::vector<EncryptedBlock> blocks;  // real block first
};

// Serializes, pads, and user-seals each model beside its chaffs. chaffs[i]
// belong to models[i]; all pairs must carry the same chaff count and every
// chaff must match its model's transcription and feature dimension.
std::vector<SealedPair> seal_enrollment_pairs(
    std::span<const gmm::PhraseModel> models,
    std::span<const std::vector<gmm::PhraseModel>> chaffs, const UserKey& user_key,
    NonceSequence& nonces);

// Identity material the server learns during the enrollment exchange.
struct RecordIdentity {
  std::string user_id;
  Salt verifier_salt{};
  std::array<std::uint8_t, 32> verifier_hash{};
  Salt kdf_salt{};
  std::uint32_t kdf_iterations = 0;
  EncryptedBlock identity_token;
  std::uint64_t created_at = 0;
};

// Server side of record construction: wraps every user-sealed block with the
// server layer, assigns pair ids, shuffles each pair's storage order, and
// keeps the real positions for the tail index. The caller's engine drives
// ids and shuffles, so record bytes are deterministic under a fixed seed.
EnrollmentRecord assemble_enrollment(const RecordIdentity& identity,
                                     std::span<const SealedPair> pairs,
                                     const ServerKey& server_key,
                                     NonceSequence& server_nonces, rng::Engine& eng);

// One-party convenience over the two halves above (for tests and the eval
// harness, which play both roles in one process): each model/chaff pair is
// sealed with the user key, then again with the server key.
EnrollmentRecord build_enrollment(std::string_view user_id,
                                  std::span<const gmm::PhraseModel> models,
                                  std::span<const std::vector<gmm::PhraseModel>> chaffs,
                                  const UserKey& user_key, const ServerKey& server_key,
                                  const EnrollmentOptions& opts);

std::vector<std::uint8_t> serialize_record(const EnrollmentRecord& record);
EnrollmentRecord parse_record(std::span<const std::uint8_t> bytes);

// Marks the record revoked. Returns false if it already was (idempotent).
bool revoke(EnrollmentRecord& record);

// Length padding inside the sealed plaintext: u32 payload length || payload
// || zeros. padded_size must be >= payload size + 4.
std::vector<std::uint8_t> pad_payload(std::span<const std::uint8_t> payload,
                                      std::size_t padded_size);
std::vector<std::uint8_t> unpad_payload(std::span<const std::uint8_t> padded);

inline constexpr char kRecordMagic[] = "VVR1";

}  // namespace vvv::vault
