#include "vvv/protocol.hpp"

#include <algorithm>
#include <limits>

#include "vvv/bytes.hpp"

// Wire codec, challenge-set handling, scoring, and the client side of both
// exchanges. Server logic lives in protocol_server.cpp so that the dependency
// direction (server code never touches model internals) stays visible at the
// translation-unit level.

namespace vvv::protocol {

std::vector<std::uint8_t> encode_message(const Message& m) {
  bytes::Writer w;
  w.u8(kWireVersion);
  w.u8(static_cast<std::uint8_t>(m.type));
  w.u32(static_cast<std::uint32_t>(m.payload.size()));
  w.raw(m.payload);
  return w.take();
}

Message decode_message(std::span<const std::uint8_t> b) {
  bytes::Reader r(b);
  if (r.u8() != kWireVersion) throw ParseError("message: unsupported wire version");
  const std::uint8_t type = r.u8();
  if (type < 1 || type > 8) throw ParseError("message: unknown type tag");
  Message m;
  m.type = static_cast<MessageType>(type);
  const std::uint32_t len = r.u32();
  auto p = r.raw(len);
  m.payload.assign(p.begin(), p.end());
  r.expect_done("message");
  return m;
}

Message make_error(ErrorCode code, std::string_view text) {
  bytes::Writer w;
  w.u8(static_cast<std::uint8_t>(code));
  w.str(text);
  return Message{MessageType::Error, w.take()};
}

std::optional<ErrorCode> error_code(const Message& m) {
  if (m.type != MessageType::Error) return std::nullopt;
  bytes::Reader r(m.payload);
  const std::uint8_t code = r.u8();
  if (code < 1 || code > 6) throw ParseError("error message: unknown code");
  return static_cast<ErrorCode>(code);
}

std::vector<std::uint8_t> pack_bits(const std::vector<std::uint8_t>& bits) {
  std::vector<std::uint8_t> out((bits.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) out[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  return out;
}

std::vector<std::uint8_t> unpack_bits(std::span<const std::uint8_t> bytes, std::size_t count) {
  if (bytes.size() != (count + 7) / 8) throw ParseError("bit packing length mismatch");
  std::vector<std::uint8_t> bits(count, 0);
  for (std::size_t i = 0; i < count; ++i) bits[i] = (bytes[i / 8] >> (i % 8)) & 1;
  // padding bits in the last byte must be zero
  for (std::size_t i = count; i < bytes.size() * 8; ++i)
    if ((bytes[i / 8] >> (i % 8)) & 1) throw ParseError("bit packing: nonzero padding");
  return bits;
}

std::vector<std::uint8_t> serialize_challenge_set(const ChallengeSet& set) {
  bytes::Writer w;
  w.raw(std::span<const std::uint8_t>(set.nonce.data(), set.nonce.size()));
  w.u8(set.bits_per_entry);
  w.u32(static_cast<std::uint32_t>(set.entries.size()));
  for (const auto& e : set.entries) {
    w.u32(e.pair_id);
    w.u8(static_cast<std::uint8_t>(e.blocks.size()));
    for (const auto& b : e.blocks) vault::write_block(w, b);
  }
  return w.take();
}

ChallengeSet parse_challenge_set(std::span<const std::uint8_t> b) {
  bytes::Reader r(b);
  ChallengeSet set;
  auto nonce = r.raw(set.nonce.size());
  std::copy(nonce.begin(), nonce.end(), set.nonce.begin());
  set.bits_per_entry = r.u8();
  if (set.bits_per_entry < 1 || set.bits_per_entry > 8)
    throw ParseError("challenge set: bits per entry out of range");
  const std::uint32_t count = r.u32();
  if (count == 0) throw ParseError("challenge set: empty");
  set.entries.resize(count);
  for (auto& e : set.entries) {
    e.pair_id = r.u32();
    const std::uint8_t nblocks = r.u8();
    if (nblocks != (1u << set.bits_per_entry))
      throw ParseError("challenge set: block count does not match bits per entry");
    e.blocks.resize(nblocks);
    for (auto& blk : e.blocks) blk = vault::read_block(r);
  }
  r.expect_done("challenge set");
  return set;
}

ChallengeBitstring draw_challenge_bitstring(std::size_t entries, std::uint8_t bits_per_entry,
                                            rng::Engine& eng) {
  if (entries == 0) throw ValueError("challenge needs at least one entry");
  if (bits_per_entry < 1 || bits_per_entry > 8)
    throw ValueError("bits per entry out of range");
  ChallengeBitstring out;
  if (bits_per_entry == 1) {
    // balanced: popcount is floor(n/2) or ceil(n/2), never further off
    std::size_t ones = entries / 2;
    if (entries % 2 == 1 && rng::below(eng, 2) == 1) ++ones;
    out.bits.assign(entries, 0);
    for (std::size_t i = 0; i < ones; ++i) out.bits[i] = 1;
    rng::shuffle(out.bits, eng);
  } else {
    out.bits.reserve(entries * bits_per_entry);
    for (std::size_t i = 0; i < entries; ++i) {
      const std::uint64_t v = rng::below(eng, std::uint64_t{1} << bits_per_entry);
      for (int bit = bits_per_entry - 1; bit >= 0; --bit)
        out.bits.push_back(static_cast<std::uint8_t>((v >> bit) & 1));
    }
  }
  return out;
}

SessionDecision score_bits(const std::vector<std::uint8_t>& expected,
                           const std::vector<std::uint8_t>& got, double threshold) {
  if (expected.size() != got.size())
    throw ProtocolError(ProtocolError::Code::LengthMismatch,
                        "response length does not match the challenge");
  if (expected.empty())
    throw ProtocolError(ProtocolError::Code::BadRequest, "empty bitstring");
  SessionDecision d;
  d.total = expected.size();
  d.threshold = threshold;
  for (std::size_t i = 0; i < expected.size(); ++i)
    if (expected[i] == got[i]) ++d.correct;
  d.accept = static_cast<double>(d.correct) / static_cast<double>(d.total) >= threshold;
  return d;
}

// ----------------------------------------------------------------- client

ResponseBitstring client_answer_challenge(const ChallengeSet& set,
                                          const std::map<std::string, gmm::PhraseModel>& live,
                                          const vault::UserKey& user_key,
                                          gmm::ScoreDirection direction) {
  ResponseBitstring resp;
  resp.nonce_echo = set.nonce;
  const std::uint8_t b = set.bits_per_entry;
  for (const auto& entry : set.entries) {
    std::vector<gmm::PhraseModel> candidates;
    candidates.reserve(entry.blocks.size());
    for (const auto& blk : entry.blocks) {
      // AuthenticationError propagates: abort with no partial response
      auto padded = vault::open(blk, user_key.key);
      candidates.push_back(gmm::parse_model(vault::unpad_payload(padded)));
    }
    const std::string& phrase = candidates.front().transcription;
    for (const auto& c : candidates)
      if (c.transcription != phrase)
        throw ProtocolError(ProtocolError::Code::BadRequest,
                            "challenge entry mixes phrases");
    auto it = live.find(phrase);
    if (it == live.end())
      throw ProtocolError(ProtocolError::Code::BadRequest,
                          "no live model for a challenged phrase");

    std::size_t pick = 0;
    if (candidates.size() == 2) {
      pick = gmm::choose_closer(it->second, candidates[0], candidates[1], direction) ==
                     gmm::Choice::First
                 ? 0
                 : 1;
    } else {
      // same tie rule as choose_closer: equal distances go to the later block
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        const double d = gmm::model_distance(it->second, candidates[i], direction);
        if (d <= best) {
          best = d;
          pick = i;
        }
      }
    }
    for (int bit = b - 1; bit >= 0; --bit)
      resp.bits.push_back(static_cast<std::uint8_t>((pick >> bit) & 1));
  }
  return resp;
}

// ------------------------------------------------------ exchange plumbing

Message exchange(Server& server, const Message& msg, Transcript* transcript) {
  auto out_bytes = encode_message(msg);
  if (transcript) transcript->messages.emplace_back(Direction::ClientToServer, out_bytes);
  Message reply = server.handle(decode_message(out_bytes));
  auto reply_bytes = encode_message(reply);
  if (transcript) transcript->messages.emplace_back(Direction::ServerToClient, reply_bytes);
  return decode_message(reply_bytes);
}

namespace {

ProtocolError::Code to_protocol_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownUser: return ProtocolError::Code::UnknownUser;
    case ErrorCode::DuplicateUser: return ProtocolError::Code::DuplicateUser;
    case ErrorCode::Revoked: return ProtocolError::Code::Revoked;
    case ErrorCode::NonceMismatch: return ProtocolError::Code::NonceMismatch;
    case ErrorCode::LengthMismatch: return ProtocolError::Code::LengthMismatch;
    case ErrorCode::BadRequest: return ProtocolError::Code::BadRequest;
  }
  return ProtocolError::Code::BadRequest;
}

[[noreturn]] void raise_error_reply(const Message& m, const char* context) {
  bytes::Reader r(m.payload);
  const auto code = static_cast<ErrorCode>(r.u8());
  const std::string text = r.str();
  throw ProtocolError(to_protocol_code(code), std::string(context) + ": " + text);
}

gmm::PhraseModel train_phrase(const std::vector<audio::FeatureMatrix>& takes,
                              const std::string& phrase, const gmm::TrainConfig& base,
                              std::uint64_t purpose, std::uint64_t client_seed) {
  if (takes.empty()) throw ValueError("no utterance features for phrase: " + phrase);
  gmm::TrainConfig cfg = base;
  cfg.rng_seed = rng::derive_seed(client_seed, {purpose, rng::hash_str(phrase)});
  return gmm::train_model(audio::concat(takes), phrase, cfg);
}

}  // namespace

// -------------------------------------------------------------- enrollment

vault::EnrollmentRecord run_enrollment(const EnrollmentInputs& in, Server& server,
                                       Transcript* transcript) {
  rng::Engine eng(rng::derive_seed(in.rng_seed, {rng::hash_str("enroll-client")}));

  vault::Salt kdf_salt{};
  rng::fill_bytes(eng, kdf_salt.data(), kdf_salt.size());
  const vault::UserKey user_key =
      vault::derive_user_key(in.password, kdf_salt, in.kdf_iterations);

  vault::Salt verifier_salt{};
  rng::fill_bytes(eng, verifier_salt.data(), verifier_salt.size());
  std::array<std::uint8_t, 32> verifier_hash{};
  {
    bytes::Writer w;
    w.raw(std::span<const std::uint8_t>(verifier_salt.data(), verifier_salt.size()));
    w.raw(in.user_id);
    verifier_hash = vault::sha256(w.data());
  }

  // The user key doubles as the challenge sealing key: it stands in for the
  // public key the server would use to seal challenge sets, and is handed
  // over at initial contact. The server keeps it outside the record.
  bytes::Writer init;
  init.str(in.user_id);
  init.raw(std::span<const std::uint8_t>(verifier_salt.data(), verifier_salt.size()));
  init.raw(std::span<const std::uint8_t>(verifier_hash.data(), verifier_hash.size()));
  init.raw(std::span<const std::uint8_t>(kdf_salt.data(), kdf_salt.size()));
  init.u32(in.kdf_iterations);
  init.raw(std::span<const std::uint8_t>(user_key.key.data(), user_key.key.size()));

  Message reply = exchange(server, {MessageType::EnrollInit, init.take()}, transcript);
  if (reply.type == MessageType::Error) raise_error_reply(reply, "enroll init");
  if (reply.type != MessageType::EnrollPhrases)
    throw ProtocolError(ProtocolError::Code::BadRequest, "unexpected enroll init reply");

  std::vector<std::string> phrases;
  {
    bytes::Reader r(reply.payload);
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) phrases.push_back(r.str());
    r.expect_done("enroll phrases");
  }
  if (phrases.empty())
    throw ProtocolError(ProtocolError::Code::BadRequest, "server sent no phrases");

  std::vector<gmm::PhraseModel> models;
  std::vector<std::vector<gmm::PhraseModel>> chaffs;
  for (const auto& phrase : phrases) {
    auto ut = in.utterances.find(phrase);
    if (ut == in.utterances.end())
      throw ValueError("no utterances recorded for server phrase: " + phrase);
    models.push_back(
        train_phrase(ut->second, phrase, in.train_cfg, rng::hash_str("enroll"), in.rng_seed));
    auto pool = in.chaff_pool.find(phrase);
    if (pool == in.chaff_pool.end())
      throw ValueError("no chaff pool for server phrase: " + phrase);
    chaffs.push_back(vault::make_chaffs(
        phrase, pool->second, in.user_id, in.chaffs_per_phrase,
        rng::derive_seed(in.rng_seed, {rng::hash_str("chaff"), rng::hash_str(phrase)})));
  }

  vault::NonceSequence user_nonces = vault::NonceSequence::seeded(eng());
  vault::EncryptedBlock identity_token = vault::seal(
      bytes::of_string(in.user_id), user_key.key, vault::Layer::UserLayer, user_nonces);
  auto sealed = vault::seal_enrollment_pairs(models, chaffs, user_key, user_nonces);

  bytes::Writer rec_msg;
  rec_msg.str(in.user_id);
  rec_msg.u64(in.created_at);
  vault::write_block(rec_msg, identity_token);
  rec_msg.u32(static_cast<std::uint32_t>(sealed.size()));
  for (const auto& pair : sealed) {
    rec_msg.u8(static_cast<std::uint8_t>(pair.blocks.size()));
    for (const auto& b : pair.blocks) vault::write_block(rec_msg, b);
  }

  reply = exchange(server, {MessageType::EnrollRecord, rec_msg.take()}, transcript);
  if (reply.type == MessageType::Error) raise_error_reply(reply, "enroll record");
  if (reply.type != MessageType::EnrollRecord)
    throw ProtocolError(ProtocolError::Code::BadRequest, "unexpected enroll record reply");
  return vault::parse_record(reply.payload);
}

// ------------------------------------------------------------ verification

VerificationOutcome run_verification(const VerificationInputs& in, Server& server,
                                     Transcript* transcript) {
  bytes::Writer init;
  init.str(in.claimed_id);
  Message reply = exchange(server, {MessageType::VerifyInit, init.take()}, transcript);
  if (auto code = error_code(reply)) {
    if (*code == ErrorCode::UnknownUser) return {VerifyStatus::UnknownUser, std::nullopt};
    if (*code == ErrorCode::Revoked) return {VerifyStatus::RejectedRevoked, std::nullopt};
    raise_error_reply(reply, "verify init");
  }
  if (reply.type != MessageType::VerifyChallenge)
    throw ProtocolError(ProtocolError::Code::BadRequest, "unexpected verify init reply");

  vault::Salt kdf_salt{};
  std::uint32_t kdf_iterations = 0;
  vault::EncryptedBlock identity_token;
  {
    bytes::Reader r(reply.payload);
    if (r.u8() != static_cast<std::uint8_t>(VerifyPhase::Identity))
      throw ProtocolError(ProtocolError::Code::BadRequest, "expected identity phase");
    auto ks = r.raw(kdf_salt.size());
    std::copy(ks.begin(), ks.end(), kdf_salt.begin());
    kdf_iterations = r.u32();
    identity_token = vault::read_block(r);
    r.expect_done("identity challenge");
  }

  const vault::UserKey user_key =
      vault::derive_user_key(in.password, kdf_salt, kdf_iterations);
  try {
    auto id_bytes = vault::open(identity_token, user_key.key);
    if (bytes::to_string(id_bytes) != in.claimed_id)
      throw ProtocolError(ProtocolError::Code::BadRequest,
                          "identity token names a different user");
  } catch (const AuthenticationError&) {
    // wrong password: stop here, before any challenge exists anywhere
    return {VerifyStatus::WrongCredentials, std::nullopt};
  }

  // The claimant speaks the enrolled phrases; one live model per phrase.
  std::map<std::string, gmm::PhraseModel> live;
  for (const auto& [phrase, takes] : in.utterances)
    live.emplace(phrase, train_phrase(takes, phrase, in.train_cfg,
                                      rng::hash_str("verify"), in.rng_seed));

  bytes::Writer ready;
  ready.u8(static_cast<std::uint8_t>(VerifyPhase::Identity));
  ready.str(in.claimed_id);
  reply = exchange(server, {MessageType::VerifyResponse, ready.take()}, transcript);
  if (auto code = error_code(reply)) {
    if (*code == ErrorCode::Revoked) return {VerifyStatus::RejectedRevoked, std::nullopt};
    raise_error_reply(reply, "challenge request");
  }
  if (reply.type != MessageType::VerifyChallenge)
    throw ProtocolError(ProtocolError::Code::BadRequest, "unexpected challenge reply");

  ChallengeSet set;
  {
    bytes::Reader r(reply.payload);
    if (r.u8() != static_cast<std::uint8_t>(VerifyPhase::Biometric))
      throw ProtocolError(ProtocolError::Code::BadRequest, "expected biometric phase");
    vault::EncryptedBlock sealed_set = vault::read_block(r);
    r.expect_done("biometric challenge");
    set = parse_challenge_set(vault::open(sealed_set, user_key.key));
  }

  ResponseBitstring resp = client_answer_challenge(set, live, user_key, in.direction);

  bytes::Writer answer;
  answer.u8(static_cast<std::uint8_t>(VerifyPhase::Biometric));
  answer.raw(std::span<const std::uint8_t>(resp.nonce_echo.data(), resp.nonce_echo.size()));
  answer.u32(static_cast<std::uint32_t>(resp.bits.size()));
  answer.raw(pack_bits(resp.bits));
  reply = exchange(server, {MessageType::VerifyResponse, answer.take()}, transcript);
  if (reply.type == MessageType::Error) raise_error_reply(reply, "verify response");
  if (reply.type != MessageType::VerifyDecision)
    throw ProtocolError(ProtocolError::Code::BadRequest, "unexpected decision reply");

  SessionDecision decision;
  {
    bytes::Reader r(reply.payload);
    decision.accept = r.u8() != 0;
    decision.correct = r.u32();
    decision.total = r.u32();
    decision.threshold = r.f64();
    r.expect_done("decision");
  }
  return {decision.accept ? VerifyStatus::Accepted : VerifyStatus::Rejected, decision};
}

}  // namespace vvv::protocol
