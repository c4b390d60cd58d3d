#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace mwerlab {

/// Malformed or inconsistent configuration (unknown key, bad value, shape mismatch).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what, std::string key = "")
      : std::runtime_error(what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

/// A non-finite value escaped a computation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition (e.g. blank inside a label sequence).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A pipeline stage failed; carries the stage name and seed for reproduction.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, unsigned long long seed, const std::string& cause, bool numeric)
      : std::runtime_error("stage '" + stage + "' failed (seed " + std::to_string(seed) + "): " + cause),
        stage_(std::move(stage)),
        numeric_(numeric) {}
  const std::string& stage() const { return stage_; }
  bool numeric() const { return numeric_; }

 private:
  std::string stage_;
  bool numeric_;
};

/// Unreadable or corrupt file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mwerlab
