#include <algorithm>

#include "vvv/bytes.hpp"
#include "vvv/protocol.hpp"

// Server side of the protocol. This translation unit moves sealed blocks and
// compares bitstrings; it never parses a phrase model and never measures
// voice proximity — keep gmm calls out of this file.

namespace vvv::protocol {

IssuedChallenge server_issue_challenge(const vault::EnrollmentRecord& record,
                                       const vault::ServerKey& server_key, std::size_t n,
                                       std::uint8_t bits_per_entry, std::uint64_t rng_seed) {
  if (record.revoked)
    throw ProtocolError(ProtocolError::Code::Revoked, "record is revoked");
  if (n == 0) throw ValueError("challenge needs at least one pair");
  if (n > record.pairs.size())
    throw ValueError("challenge asks for more pairs than the record holds");
  const std::size_t positions = std::size_t{1} << bits_per_entry;

  rng::Engine eng(rng::derive_seed(rng_seed, {rng::hash_str("challenge")}));
  auto picks = rng::sample_indices(eng, record.pairs.size(), n);
  ChallengeBitstring bits = draw_challenge_bitstring(n, bits_per_entry, eng);

  ChallengeSet set;
  set.bits_per_entry = bits_per_entry;
  rng::fill_bytes(eng, set.nonce.data(), set.nonce.size());

  for (std::size_t i = 0; i < n; ++i) {
    const vault::BlockPair& pair = record.pairs[picks[i]];
    if (pair.blocks.size() != positions)
      throw ValueError("record pair size does not match bits per entry");

    // strip the server layer; what remains are the user-sealed blocks
    std::vector<vault::EncryptedBlock> inner;
    inner.reserve(pair.blocks.size());
    for (const auto& b : pair.blocks)
      inner.push_back(vault::parse_block(vault::open(b, server_key.key)));

    // entry value = the real block's position, most significant bit first
    std::size_t value = 0;
    for (std::size_t bit = 0; bit < bits_per_entry; ++bit)
      value = (value << 1) | bits.bits[i * bits_per_entry + bit];

    ChallengeEntry entry;
    entry.pair_id = pair.pair_id;
    entry.blocks.resize(positions);
    entry.blocks[value] = std::move(inner[pair.real_index]);
    std::size_t slot = 0;
    for (std::size_t j = 0; j < inner.size(); ++j) {
      if (j == pair.real_index) continue;
      if (slot == value) ++slot;
      entry.blocks[slot++] = std::move(inner[j]);
    }
    set.entries.push_back(std::move(entry));
  }
  return IssuedChallenge{std::move(bits), std::move(set)};
}

// ------------------------------------------------------------------ server

Server::Server(vault::ServerKey key, ServerPolicy policy, std::uint64_t rng_seed)
    : key_(std::move(key)),
      policy_(std::move(policy)),
      rng_(rng::derive_seed(rng_seed, {rng::hash_str("server")})),
      seal_nonces_(vault::NonceSequence::seeded(
          rng::derive_seed(rng_seed, {rng::hash_str("server-seal")}))) {
  if (policy_.challenge_pairs == 0) throw ValueError("policy: challenge pair count is zero");
  if (!(policy_.threshold > 0.0 && policy_.threshold <= 1.0))
    throw ValueError("policy: threshold must lie in (0, 1]");
  if (policy_.bits_per_question < 1 || policy_.bits_per_question > 8)
    throw ValueError("policy: bits per question out of range");
  std::vector<std::string> sorted = policy_.phrases;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw ValueError("policy: duplicate phrase");
  for (const auto& p : policy_.phrases)
    if (p.empty()) throw ValueError("policy: empty phrase");
}

void Server::add_user(vault::EnrollmentRecord record, const vault::KeyBytes& seal_key) {
  if (users_.count(record.user_id))
    throw ValueError("a record for this user is already loaded");
  std::string id = record.user_id;
  users_.emplace(std::move(id), StoredUser{std::move(record), seal_key});
}

const vault::EnrollmentRecord* Server::find_record(const std::string& user_id) const {
  auto it = users_.find(user_id);
  return it == users_.end() ? nullptr : &it->second.record;
}

const vault::KeyBytes* Server::challenge_seal_key(const std::string& user_id) const {
  auto it = users_.find(user_id);
  return it == users_.end() ? nullptr : &it->second.seal_key;
}

bool Server::revoke_user(const std::string& user_id) {
  auto it = users_.find(user_id);
  if (it == users_.end())
    throw ProtocolError(ProtocolError::Code::UnknownUser, "no record for user");
  void_session(user_id);
  return vault::revoke(it->second.record);
}

std::vector<std::string> Server::user_ids() const {
  std::vector<std::string> ids;
  ids.reserve(users_.size());
  for (const auto& [id, _] : users_) ids.push_back(id);
  return ids;
}

std::size_t Server::open_session_count() const { return sessions_.size(); }

std::vector<std::uint8_t> Server::state_bytes() const {
  bytes::Writer w;
  w.raw(std::span<const std::uint8_t>(key_.key.data(), key_.key.size()));
  w.str(key_.key_id);
  for (const auto& p : policy_.phrases) w.str(p);
  for (const auto& [id, pending] : pending_) {
    w.str(id);
    w.raw(std::span<const std::uint8_t>(pending.verifier_salt.data(),
                                        pending.verifier_salt.size()));
    w.raw(std::span<const std::uint8_t>(pending.verifier_hash.data(),
                                        pending.verifier_hash.size()));
    w.raw(std::span<const std::uint8_t>(pending.kdf_salt.data(), pending.kdf_salt.size()));
    w.u32(pending.kdf_iterations);
    w.raw(std::span<const std::uint8_t>(pending.seal_key.data(), pending.seal_key.size()));
  }
  for (const auto& [id, user] : users_) {
    w.str(id);
    w.raw(vault::serialize_record(user.record));
    w.raw(std::span<const std::uint8_t>(user.seal_key.data(), user.seal_key.size()));
  }
  for (const auto& [nonce, session] : sessions_) {
    w.raw(std::span<const std::uint8_t>(nonce.data(), nonce.size()));
    w.str(session.user_id);
    w.raw(session.expected);
  }
  return w.take();
}

void Server::void_session(const std::string& user_id) {
  auto it = session_by_user_.find(user_id);
  if (it == session_by_user_.end()) return;
  sessions_.erase(it->second);
  session_by_user_.erase(it);
}

Message Server::handle(const Message& request) {
  try {
    switch (request.type) {
      case MessageType::EnrollInit: return handle_enroll_init(request.payload);
      case MessageType::EnrollRecord: return handle_enroll_record(request.payload);
      case MessageType::VerifyInit: return handle_verify_init(request.payload);
      case MessageType::VerifyResponse: return handle_verify_response(request.payload);
      default:
        return make_error(ErrorCode::BadRequest, "unexpected message type");
    }
  } catch (const ProtocolError& e) {
    switch (e.code()) {
      case ProtocolError::Code::UnknownUser: return make_error(ErrorCode::UnknownUser, e.what());
      case ProtocolError::Code::DuplicateUser:
        return make_error(ErrorCode::DuplicateUser, e.what());
      case ProtocolError::Code::Revoked: return make_error(ErrorCode::Revoked, e.what());
      case ProtocolError::Code::NonceMismatch:
        return make_error(ErrorCode::NonceMismatch, e.what());
      case ProtocolError::Code::LengthMismatch:
        return make_error(ErrorCode::LengthMismatch, e.what());
      case ProtocolError::Code::BadRequest: return make_error(ErrorCode::BadRequest, e.what());
    }
    return make_error(ErrorCode::BadRequest, e.what());
  } catch (const ParseError& e) {
    return make_error(ErrorCode::BadRequest, e.what());
  } catch (const ValueError& e) {
    return make_error(ErrorCode::BadRequest, e.what());
  }
}

Message Server::handle_enroll_init(std::span<const std::uint8_t> payload) {
  bytes::Reader r(payload);
  const std::string id = r.str();
  PendingEnroll pending;
  auto vs = r.raw(pending.verifier_salt.size());
  std::copy(vs.begin(), vs.end(), pending.verifier_salt.begin());
  auto vh = r.raw(pending.verifier_hash.size());
  std::copy(vh.begin(), vh.end(), pending.verifier_hash.begin());
  auto ks = r.raw(pending.kdf_salt.size());
  std::copy(ks.begin(), ks.end(), pending.kdf_salt.begin());
  pending.kdf_iterations = r.u32();
  auto sk = r.raw(pending.seal_key.size());
  std::copy(sk.begin(), sk.end(), pending.seal_key.begin());
  r.expect_done("enroll init");

  if (id.empty())
    throw ProtocolError(ProtocolError::Code::BadRequest, "empty user id");
  if (pending.kdf_iterations < vault::kMinKdfIterations)
    throw ProtocolError(ProtocolError::Code::BadRequest,
                        "kdf iteration count below the accepted minimum");
  if (policy_.phrases.empty())
    throw ProtocolError(ProtocolError::Code::BadRequest,
                        "server has no enrollment phrases configured");
  auto existing = users_.find(id);
  if (existing != users_.end() && !existing->second.record.revoked)
    throw ProtocolError(ProtocolError::Code::DuplicateUser,
                        "an active record already exists for this user");
  pending_[id] = pending;

  bytes::Writer w;
  w.u32(static_cast<std::uint32_t>(policy_.phrases.size()));
  for (const auto& p : policy_.phrases) w.str(p);
  return Message{MessageType::EnrollPhrases, w.take()};
}

Message Server::handle_enroll_record(std::span<const std::uint8_t> payload) {
  bytes::Reader r(payload);
  const std::string id = r.str();
  auto pending_it = pending_.find(id);
  if (pending_it == pending_.end())
    throw ProtocolError(ProtocolError::Code::BadRequest,
                        "no enrollment in progress for this user");

  // abort atomically: any failure below forgets the whole enrollment
  try {
    const std::uint64_t created_at = r.u64();
    vault::EncryptedBlock identity_token = vault::read_block(r);
    const std::uint32_t pair_count = r.u32();
    if (pair_count != policy_.phrases.size())
      throw ProtocolError(ProtocolError::Code::BadRequest,
                          "pair count does not match the phrase list");
    const std::size_t positions = std::size_t{1} << policy_.bits_per_question;
    std::vector<vault::SealedPair> pairs(pair_count);
    for (auto& pair : pairs) {
      const std::uint8_t nblocks = r.u8();
      if (nblocks != positions)
        throw ProtocolError(ProtocolError::Code::BadRequest,
                            "pair block count does not match the question policy");
      pair.blocks.resize(nblocks);
      for (auto& b : pair.blocks) b = vault::read_block(r);
    }
    r.expect_done("enroll record");

    vault::RecordIdentity identity;
    identity.user_id = id;
    identity.verifier_salt = pending_it->second.verifier_salt;
    identity.verifier_hash = pending_it->second.verifier_hash;
    identity.kdf_salt = pending_it->second.kdf_salt;
    identity.kdf_iterations = pending_it->second.kdf_iterations;
    identity.identity_token = std::move(identity_token);
    identity.created_at = created_at;

    vault::EnrollmentRecord record =
        vault::assemble_enrollment(identity, pairs, key_, seal_nonces_, rng_);

    void_session(id);
    users_[id] = StoredUser{record, pending_it->second.seal_key};
    pending_.erase(pending_it);
    return Message{MessageType::EnrollRecord, vault::serialize_record(record)};
  } catch (...) {
    pending_.erase(id);
    throw;
  }
}

Message Server::handle_verify_init(std::span<const std::uint8_t> payload) {
  bytes::Reader r(payload);
  const std::string id = r.str();
  r.expect_done("verify init");

  auto it = users_.find(id);
  if (it == users_.end())
    throw ProtocolError(ProtocolError::Code::UnknownUser, "no record for user");
  const vault::EnrollmentRecord& record = it->second.record;
  if (record.revoked)
    throw ProtocolError(ProtocolError::Code::Revoked, "record is revoked");

  bytes::Writer w;
  w.u8(static_cast<std::uint8_t>(VerifyPhase::Identity));
  w.raw(std::span<const std::uint8_t>(record.kdf_salt.data(), record.kdf_salt.size()));
  w.u32(record.kdf_iterations);
  vault::write_block(w, record.identity_token);
  return Message{MessageType::VerifyChallenge, w.take()};
}

Message Server::handle_verify_response(std::span<const std::uint8_t> payload) {
  bytes::Reader r(payload);
  const std::uint8_t phase = r.u8();
  if (phase == static_cast<std::uint8_t>(VerifyPhase::Identity)) {
    const std::string id = r.str();
    r.expect_done("challenge request");

    auto it = users_.find(id);
    if (it == users_.end())
      throw ProtocolError(ProtocolError::Code::UnknownUser, "no record for user");
    const vault::EnrollmentRecord& record = it->second.record;
    if (record.revoked)
      throw ProtocolError(ProtocolError::Code::Revoked, "record is revoked");

    const std::size_t n = std::min(policy_.challenge_pairs, record.pairs.size());
    IssuedChallenge issued =
        server_issue_challenge(record, key_, n, policy_.bits_per_question, rng_());

    // one outstanding challenge per user: a new one voids the old session
    void_session(id);
    sessions_[issued.set.nonce] = OpenSession{id, issued.bits.bits};
    session_by_user_[id] = issued.set.nonce;

    vault::EncryptedBlock sealed =
        vault::seal(serialize_challenge_set(issued.set), it->second.seal_key,
                    vault::Layer::UserLayer, seal_nonces_);
    bytes::Writer w;
    w.u8(static_cast<std::uint8_t>(VerifyPhase::Biometric));
    vault::write_block(w, sealed);
    return Message{MessageType::VerifyChallenge, w.take()};
  }
  if (phase != static_cast<std::uint8_t>(VerifyPhase::Biometric))
    throw ProtocolError(ProtocolError::Code::BadRequest, "unknown verify phase");

  std::array<std::uint8_t, 16> nonce{};
  auto nb = r.raw(nonce.size());
  std::copy(nb.begin(), nb.end(), nonce.begin());
  const std::uint32_t bit_count = r.u32();
  auto packed = r.raw((bit_count + 7) / 8);
  r.expect_done("verify response");

  auto session_it = sessions_.find(nonce);
  if (session_it == sessions_.end())
    throw ProtocolError(ProtocolError::Code::NonceMismatch,
                        "no open session for this nonce");

  // single use: the session dies now, whatever the outcome
  const OpenSession session = std::move(session_it->second);
  sessions_.erase(session_it);
  session_by_user_.erase(session.user_id);

  const std::vector<std::uint8_t> got = unpack_bits(packed, bit_count);
  SessionDecision decision = score_bits(session.expected, got, policy_.threshold);

  bytes::Writer w;
  w.u8(decision.accept ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(decision.correct));
  w.u32(static_cast<std::uint32_t>(decision.total));
  w.f64(decision.threshold);
  return Message{MessageType::VerifyDecision, w.take()};
}

}  // namespace vvv::protocol
