#include "vvv/vault.hpp"

#include <openssl/evp.h>
#include <openssl/rand.h>

#include <algorithm>
#include <cstring>
#include <limits>

#include "vvv/bytes.hpp"
#include "vvv/rng.hpp"

namespace vvv::vault {

namespace {

void os_random(std::uint8_t* out, std::size_t n) {
  if (RAND_bytes(out, static_cast<int>(n)) != 1)
    throw Error("system randomness unavailable");
}

std::string hex(std::span<const std::uint8_t> b) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  s.reserve(b.size() * 2);
  for (std::uint8_t v : b) {
    s.push_back(digits[v >> 4]);
    s.push_back(digits[v & 0xf]);
  }
  return s;
}

}  // namespace

std::array<std::uint8_t, 32> sha256(std::span<const std::uint8_t> data) {
  std::array<std::uint8_t, 32> out{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != 32)
    throw Error("sha256 failed");
  return out;
}

UserKey derive_user_key(std::string_view password, const Salt& salt, std::uint32_t iterations) {
  if (password.empty()) throw ValueError("password must not be empty");
  if (iterations < kMinKdfIterations)
    throw ValueError("kdf iteration count below the accepted minimum");
  UserKey uk;
  uk.salt = salt;
  uk.iterations = iterations;
  if (PKCS5_PBKDF2_HMAC(password.data(), static_cast<int>(password.size()), salt.data(),
                        static_cast<int>(salt.size()), static_cast<int>(iterations),
                        EVP_sha256(), static_cast<int>(uk.key.size()), uk.key.data()) != 1)
    throw Error("pbkdf2 failed");
  return uk;
}

Salt random_salt() {
  Salt s{};
  os_random(s.data(), s.size());
  return s;
}

Salt seeded_salt(std::uint64_t seed) {
  Salt s{};
  rng::Engine eng(seed);
  rng::fill_bytes(eng, s.data(), s.size());
  return s;
}

namespace {
ServerKey key_from_bytes(KeyBytes kb) {
  ServerKey sk;
  sk.key = kb;
  auto digest = sha256(std::span<const std::uint8_t>(kb.data(), kb.size()));
  sk.key_id = hex(std::span<const std::uint8_t>(digest.data(), 4));
  return sk;
}
}  // namespace

ServerKey generate_server_key() {
  KeyBytes kb{};
  os_random(kb.data(), kb.size());
  return key_from_bytes(kb);
}

ServerKey seeded_server_key(std::uint64_t seed) {
  KeyBytes kb{};
  rng::Engine eng(rng::derive_seed(seed, {rng::hash_str("server-key")}));
  rng::fill_bytes(eng, kb.data(), kb.size());
  return key_from_bytes(kb);
}

NonceSequence NonceSequence::from_os() {
  std::uint32_t prefix;
  os_random(reinterpret_cast<std::uint8_t*>(&prefix), sizeof prefix);
  return NonceSequence(prefix, 0);
}

NonceSequence NonceSequence::seeded(std::uint64_t seed) {
  rng::Engine eng(rng::derive_seed(seed, {rng::hash_str("nonce-prefix")}));
  return NonceSequence(static_cast<std::uint32_t>(eng()), 0);
}

std::array<std::uint8_t, kNonceBytes> NonceSequence::next() {
  if (exhausted_) throw NonceExhaustedError();
  std::array<std::uint8_t, kNonceBytes> n{};
  for (int i = 0; i < 4; ++i) n[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(prefix_ >> (8 * i));
  for (int i = 0; i < 8; ++i)
    n[static_cast<std::size_t>(4 + i)] = static_cast<std::uint8_t>(counter_ >> (8 * i));
  if (counter_ == std::numeric_limits<std::uint64_t>::max())
    exhausted_ = true;  // this value is the last one we will ever hand out
  else
    ++counter_;
  return n;
}

EncryptedBlock seal(std::span<const std::uint8_t> plain, const KeyBytes& key, Layer layer,
                    NonceSequence& nonces) {
  EncryptedBlock block;
  block.layer = layer;
  block.nonce = nonces.next();
  block.ciphertext.resize(plain.size());

  EVP_CIPHER_CTX* ctx = EVP_CIPHER_CTX_new();
  if (!ctx) throw Error("cipher context allocation failed");
  int len = 0;
  const std::uint8_t aad = static_cast<std::uint8_t>(layer);
  bool ok = EVP_EncryptInit_ex(ctx, EVP_aes_256_gcm(), nullptr, nullptr, nullptr) == 1 &&
            EVP_CIPHER_CTX_ctrl(ctx, EVP_CTRL_GCM_SET_IVLEN, kNonceBytes, nullptr) == 1 &&
            EVP_EncryptInit_ex(ctx, nullptr, nullptr, key.data(), block.nonce.data()) == 1 &&
            EVP_EncryptUpdate(ctx, nullptr, &len, &aad, 1) == 1;
  if (ok && !plain.empty())
    ok = EVP_EncryptUpdate(ctx, block.ciphertext.data(), &len, plain.data(),
                           static_cast<int>(plain.size())) == 1;
  if (ok) ok = EVP_EncryptFinal_ex(ctx, block.ciphertext.data() + plain.size(), &len) == 1;
  if (ok)
    ok = EVP_CIPHER_CTX_ctrl(ctx, EVP_CTRL_GCM_GET_TAG, kTagBytes, block.tag.data()) == 1;
  EVP_CIPHER_CTX_free(ctx);
  if (!ok) throw Error("aead seal failed");
  return block;
}

std::vector<std::uint8_t> open(const EncryptedBlock& block, const KeyBytes& key) {
  std::vector<std::uint8_t> plain(block.ciphertext.size());
  EVP_CIPHER_CTX* ctx = EVP_CIPHER_CTX_new();
  if (!ctx) throw Error("cipher context allocation failed");
  int len = 0;
  const std::uint8_t aad = static_cast<std::uint8_t>(block.layer);
  std::array<std::uint8_t, kTagBytes> tag = block.tag;
  bool ok = EVP_DecryptInit_ex(ctx, EVP_aes_256_gcm(), nullptr, nullptr, nullptr) == 1 &&
            EVP_CIPHER_CTX_ctrl(ctx, EVP_CTRL_GCM_SET_IVLEN, kNonceBytes, nullptr) == 1 &&
            EVP_DecryptInit_ex(ctx, nullptr, nullptr, key.data(), block.nonce.data()) == 1 &&
            EVP_DecryptUpdate(ctx, nullptr, &len, &aad, 1) == 1;
  if (ok && !block.ciphertext.empty())
    ok = EVP_DecryptUpdate(ctx, plain.data(), &len, block.ciphertext.data(),
                           static_cast<int>(block.ciphertext.size())) == 1;
  if (ok)
    ok = EVP_CIPHER_CTX_ctrl(ctx, EVP_CTRL_GCM_SET_TAG, kTagBytes, tag.data()) == 1 &&
         EVP_DecryptFinal_ex(ctx, plain.data() + plain.size(), &len) == 1;
  EVP_CIPHER_CTX_free(ctx);
  if (!ok) throw AuthenticationError();
  return plain;
}

std::vector<std::uint8_t> serialize_block(const EncryptedBlock& block) {
  bytes::Writer w;
  w.u8(static_cast<std::uint8_t>(block.layer));
  w.raw(std::span<const std::uint8_t>(block.nonce.data(), block.nonce.size()));
  w.u32(static_cast<std::uint32_t>(block.ciphertext.size()));
  w.raw(block.ciphertext);
  w.raw(std::span<const std::uint8_t>(block.tag.data(), block.tag.size()));
  return w.take();
}

EncryptedBlock read_block(bytes::Reader& r) {
  EncryptedBlock block;
  const std::uint8_t layer = r.u8();
  if (layer > 1) throw ParseError("block: unknown layer tag");
  block.layer = static_cast<Layer>(layer);
  auto nonce = r.raw(kNonceBytes);
  std::copy(nonce.begin(), nonce.end(), block.nonce.begin());
  const std::uint32_t ct_len = r.u32();
  auto ct = r.raw(ct_len);
  block.ciphertext.assign(ct.begin(), ct.end());
  auto tag = r.raw(kTagBytes);
  std::copy(tag.begin(), tag.end(), block.tag.begin());
  return block;
}

void write_block(bytes::Writer& w, const EncryptedBlock& block) {
  auto b = serialize_block(block);
  w.raw(b);
}

EncryptedBlock parse_block(std::span<const std::uint8_t> b) {
  bytes::Reader r(b);
  EncryptedBlock block = read_block(r);
  r.expect_done("block");
  return block;
}

// ------------------------------------------------------------------ chaff

namespace {

std::vector<std::size_t> chaff_candidates(std::string_view phrase,
                                          std::span<const AttributedModel> pool,
                                          std::string_view enrollee) {
  if (pool.empty()) throw ValueError("chaff pool is empty");
  std::vector<std::size_t> eligible;
  std::size_t dim = 0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& entry = pool[i];
    if (entry.model.transcription != phrase)
      throw ValueError("chaff pool entry does not match the phrase");
    if (dim == 0)
      dim = entry.model.feature_dim;
    else if (entry.model.feature_dim != dim)
      throw ValueError("chaff pool entries disagree on feature dimension");
    if (entry.speaker != enrollee) eligible.push_back(i);
  }
  if (eligible.empty())
    throw ValueError("chaff pool holds only the enrollee's own models");
  return eligible;
}

}  // namespace

gmm::PhraseModel make_chaff(std::string_view phrase, std::span<const AttributedModel> pool,
                            std::string_view enrollee, std::uint64_t rng_seed) {
  auto eligible = chaff_candidates(phrase, pool, enrollee);
  rng::Engine eng(rng_seed);
  return pool[eligible[rng::below(eng, eligible.size())]].model;
}

std::vector<gmm::PhraseModel> make_chaffs(std::string_view phrase,
                                          std::span<const AttributedModel> pool,
                                          std::string_view enrollee, std::size_t count,
                                          std::uint64_t rng_seed) {
  auto eligible = chaff_candidates(phrase, pool, enrollee);
  if (count == 0) throw ValueError("chaff count must be >= 1");
  if (eligible.size() < count)
    throw ValueError("chaff pool too small for the requested chaff count");
  rng::Engine eng(rng_seed);
  auto picks = rng::sample_indices(eng, eligible.size(), count);
  std::vector<gmm::PhraseModel> out;
  out.reserve(count);
  for (std::size_t p : picks) out.push_back(pool[eligible[p]].model);
  return out;
}

// ---------------------------------------------------------------- padding

std::vector<std::uint8_t> pad_payload(std::span<const std::uint8_t> payload,
                                      std::size_t padded_size) {
  if (padded_size < payload.size() + 4) throw ValueError("padded size too small");
  bytes::Writer w;
  w.u32(static_cast<std::uint32_t>(payload.size()));
  w.raw(payload);
  std::vector<std::uint8_t> out = w.take();
  out.resize(padded_size, 0);
  return out;
}

std::vector<std::uint8_t> unpad_payload(std::span<const std::uint8_t> padded) {
  bytes::Reader r(padded);
  const std::uint32_t n = r.u32();
  if (n > r.remaining()) throw ParseError("padding: declared length exceeds payload");
  auto body = r.raw(n);
  return std::vector<std::uint8_t>(body.begin(), body.end());
}

// --------------------------------------------------------------- records

std::vector<SealedPair> seal_enrollment_pairs(
    std::span<const gmm::PhraseModel> models,
    std::span<const std::vector<gmm::PhraseModel>> chaffs, const UserKey& user_key,
    NonceSequence& nonces) {
  if (models.empty()) throw ValueError("enrollment needs at least one phrase model");
  if (models.size() != chaffs.size())
    throw ValueError("models and chaff lists must be the same length");
  const std::size_t chaff_count = chaffs[0].size();
  if (chaff_count == 0) throw ValueError("each pair needs at least one chaff");
  for (const auto& cs : chaffs)
    if (cs.size() != chaff_count)
      throw ValueError("all pairs must carry the same chaff count");

  std::vector<SealedPair> out;
  out.reserve(models.size());
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto& m = models[i];
    for (const auto& c : chaffs[i]) {
      if (c.transcription != m.transcription)
        throw ValueError("chaff transcription does not match its phrase model");
      if (c.feature_dim != m.feature_dim)
        throw ValueError("chaff feature dimension does not match its phrase model");
    }

    std::vector<std::vector<std::uint8_t>> plains;
    plains.push_back(serialize_model(m));
    for (const auto& c : chaffs[i]) plains.push_back(serialize_model(c));
    std::size_t max_len = 0;
    for (const auto& p : plains) max_len = std::max(max_len, p.size());

    SealedPair pair;
    for (const auto& p : plains)
      pair.blocks.push_back(
          seal(pad_payload(p, max_len + 4), user_key.key, Layer::UserLayer, nonces));
    out.push_back(std::move(pair));
  }
  return out;
}

EnrollmentRecord assemble_enrollment(const RecordIdentity& identity,
                                     std::span<const SealedPair> pairs,
                                     const ServerKey& server_key,
                                     NonceSequence& server_nonces, rng::Engine& eng) {
  if (identity.user_id.empty()) throw ValueError("user id must not be empty");
  if (identity.kdf_iterations < kMinKdfIterations)
    throw ValueError("kdf iteration count below the accepted minimum");
  if (pairs.empty()) throw ValueError("enrollment needs at least one pair");
  const std::size_t nblocks = pairs[0].blocks.size();
  if (nblocks < 2) throw ValueError("each pair needs at least two blocks");
  if (nblocks > 256) throw ValueError("too many blocks in a pair");
  for (const auto& p : pairs) {
    if (p.blocks.size() != nblocks)
      throw ValueError("all pairs must carry the same block count");
    for (const auto& b : p.blocks) {
      if (b.layer != Layer::UserLayer)
        throw ValueError("enrollment blocks must be sealed for the user");
      if (b.ciphertext.size() != p.blocks[0].ciphertext.size())
        throw ValueError("blocks within a pair must have equal ciphertext lengths");
    }
  }

  EnrollmentRecord rec;
  rec.user_id = identity.user_id;
  rec.verifier_salt = identity.verifier_salt;
  rec.verifier_hash = identity.verifier_hash;
  rec.kdf_salt = identity.kdf_salt;
  rec.kdf_iterations = identity.kdf_iterations;
  rec.identity_token = identity.identity_token;
  rec.created_at = identity.created_at;

  const std::uint32_t id_base = static_cast<std::uint32_t>(eng());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    std::vector<EncryptedBlock> sealed;
    sealed.reserve(nblocks);
    for (const auto& b : pairs[i].blocks)
      sealed.push_back(seal(serialize_block(b), server_key.key, Layer::ServerLayer,
                            server_nonces));

    BlockPair pair;
    pair.pair_id = id_base + static_cast<std::uint32_t>(i);
    std::vector<std::size_t> order(sealed.size());
    for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
    rng::shuffle(order, eng);
    pair.blocks.resize(sealed.size());
    for (std::size_t j = 0; j < order.size(); ++j) {
      pair.blocks[j] = std::move(sealed[order[j]]);
      if (order[j] == 0) pair.real_index = static_cast<std::uint32_t>(j);
    }
    rec.pairs.push_back(std::move(pair));
  }
  return rec;
}

EnrollmentRecord build_enrollment(std::string_view user_id,
                                  std::span<const gmm::PhraseModel> models,
                                  std::span<const std::vector<gmm::PhraseModel>> chaffs,
                                  const UserKey& user_key, const ServerKey& server_key,
                                  const EnrollmentOptions& opts) {
  if (user_id.empty()) throw ValueError("user id must not be empty");

  rng::Engine eng(rng::derive_seed(opts.rng_seed, {rng::hash_str("enroll")}));
  NonceSequence user_nonces = NonceSequence::seeded(eng());
  NonceSequence server_nonces = NonceSequence::seeded(eng());

  RecordIdentity identity;
  identity.user_id = std::string(user_id);
  if (opts.verifier_salt)
    identity.verifier_salt = *opts.verifier_salt;
  else
    rng::fill_bytes(eng, identity.verifier_salt.data(), identity.verifier_salt.size());
  {
    bytes::Writer w;
    w.raw(std::span<const std::uint8_t>(identity.verifier_salt.data(),
                                        identity.verifier_salt.size()));
    w.raw(user_id);
    identity.verifier_hash = sha256(w.data());
  }
  identity.kdf_salt = user_key.salt;
  identity.kdf_iterations = user_key.iterations;
  identity.identity_token =
      seal(bytes::of_string(user_id), user_key.key, Layer::UserLayer, user_nonces);
  identity.created_at = opts.created_at;

  auto pairs = seal_enrollment_pairs(models, chaffs, user_key, user_nonces);
  return assemble_enrollment(identity, pairs, server_key, server_nonces, eng);
}

std::vector<std::uint8_t> serialize_record(const EnrollmentRecord& rec) {
  bytes::Writer w;
  w.raw(std::string_view(kRecordMagic));
  w.u16(1);  // version
  w.u8(rec.revoked ? 1 : 0);
  w.u64(rec.created_at);
  w.str(rec.user_id);
  w.raw(std::span<const std::uint8_t>(rec.verifier_salt.data(), rec.verifier_salt.size()));
  w.raw(std::span<const std::uint8_t>(rec.verifier_hash.data(), rec.verifier_hash.size()));
  w.raw(std::span<const std::uint8_t>(rec.kdf_salt.data(), rec.kdf_salt.size()));
  w.u32(rec.kdf_iterations);
  write_block(w, rec.identity_token);
  // payload section: blocks only, no realness information
  w.u32(static_cast<std::uint32_t>(rec.pairs.size()));
  for (const auto& pair : rec.pairs) {
    w.u32(pair.pair_id);
    w.u8(static_cast<std::uint8_t>(pair.blocks.size()));
    for (const auto& b : pair.blocks) write_block(w, b);
  }
  // server-only index section at the tail: which stored position is real
  for (const auto& pair : rec.pairs) w.u8(static_cast<std::uint8_t>(pair.real_index));
  return w.take();
}

EnrollmentRecord parse_record(std::span<const std::uint8_t> b) {
  bytes::Reader r(b);
  r.expect_magic(kRecordMagic, "record");
  EnrollmentRecord rec;
  const std::uint16_t version = r.u16();
  if (version != 1) throw ParseError("record: unsupported version");
  rec.revoked = r.u8() != 0;
  rec.created_at = r.u64();
  rec.user_id = r.str();
  if (rec.user_id.empty()) throw ParseError("record: empty user id");
  auto vs = r.raw(kSaltBytes);
  std::copy(vs.begin(), vs.end(), rec.verifier_salt.begin());
  auto vh = r.raw(32);
  std::copy(vh.begin(), vh.end(), rec.verifier_hash.begin());
  auto ks = r.raw(kSaltBytes);
  std::copy(ks.begin(), ks.end(), rec.kdf_salt.begin());
  rec.kdf_iterations = r.u32();
  rec.identity_token = read_block(r);
  const std::uint32_t pair_count = r.u32();
  if (pair_count == 0) throw ParseError("record: no pairs");
  rec.pairs.resize(pair_count);
  for (auto& pair : rec.pairs) {
    pair.pair_id = r.u32();
    const std::uint8_t nblocks = r.u8();
    if (nblocks < 2) throw ParseError("record: pair needs at least two blocks");
    pair.blocks.resize(nblocks);
    for (auto& blk : pair.blocks) blk = read_block(r);
  }
  for (auto& pair : rec.pairs) {
    pair.real_index = r.u8();
    if (pair.real_index >= pair.blocks.size())
      throw ParseError("record: real index out of range");
  }
  r.expect_done("record");
  // pair ids must be unique within the record
  std::vector<std::uint32_t> ids;
  for (const auto& p : rec.pairs) ids.push_back(p.pair_id);
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw ParseError("record: duplicate pair id");
  return rec;
}

bool revoke(EnrollmentRecord& rec) {
  if (rec.revoked) return false;
  rec.revoked = true;
  return true;
}

}  // namespace vvv::vault
