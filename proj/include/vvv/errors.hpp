#pragma once
// Error taxonomy. Distinct types only where callers must distinguish outcomes.

#include <stdexcept>
#include <string>

namespace vvv {

// Base for everything thrown by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Bad arguments / violated preconditions on public entry points.
class ValueError : public Error {
 public:
  using Error::Error;
};

// Structural violations while decoding any binary format.
class ParseError : public Error {
 public:
  using Error::Error;
};

// WAV container problems, reported distinctly per failure class.
class WavError : public ParseError {
 public:
  enum class Kind { MalformedHeader, UnsupportedEncoding, TruncatedData };
  WavError(Kind kind, const std::string& what) : ParseError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// AEAD open failure. Deliberately carries no detail: wrong key and tampered
// ciphertext are indistinguishable by design.
class AuthenticationError : public Error {
 public:
  AuthenticationError() : Error("authentication failed") {}
};

// A nonce sequence refused to wrap around.
class NonceExhaustedError : public Error {
 public:
  NonceExhaustedError() : Error("nonce sequence exhausted") {}
};

// Protocol state machine violations and policy rejections.
class ProtocolError : public Error {
 public:
  enum class Code {
    UnknownUser,
    DuplicateUser,
    Revoked,
    NonceMismatch,
    LengthMismatch,
    BadRequest,
  };
  ProtocolError(Code code, const std::string& what) : Error(what), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

}  // namespace vvv
