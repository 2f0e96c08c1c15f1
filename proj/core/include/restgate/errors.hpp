#pragma once

#include <stdexcept>
#include <string>

namespace restgate {

// Base of every error the library throws. `code()` is a short stable tag that
// the command-line tool prints as `error[CODE]: message`.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error("dimension", what) {}
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error("domain", what) {}
};

class LengthError : public Error {
 public:
  explicit LengthError(const std::string& what) : Error("length", what) {}
};

// A caller broke a documented precondition (backward on a non-scalar, gate out of range).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error("contract", what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io", what) {}
};

class FormatError : public Error {
 public:
  enum class Kind { BadMagic, Truncated, SizeMismatch, BadHeader };

  FormatError(Kind kind, const std::string& what)
      : Error(tag(kind), what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  static std::string tag(Kind kind) {
    switch (kind) {
      case Kind::BadMagic: return "format.magic";
      case Kind::Truncated: return "format.truncated";
      case Kind::SizeMismatch: return "format.size";
      case Kind::BadHeader: return "format.header";
    }
    return "format";
  }

  Kind kind_;
};

}  // namespace restgate
