#ifndef GRPO_FORGE_ERRORS_HPP_
#define GRPO_FORGE_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace grpo_forge {

/// Malformed argument to an operation (bad token id, length mismatch, ...).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Configuration that violates a documented precondition (G < 2, unknown key).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Exact enumeration requested beyond the support-size cap.
class EnumerationRefused : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint file whose checksum or descriptor does not match.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss, gradient or parameters during training.
class NumericAbort : public std::runtime_error {
 public:
  NumericAbort(const std::string& what, std::string dump)
      : std::runtime_error(what), dump_(std::move(dump)) {}
  const std::string& dump() const { return dump_; }

 private:
  std::string dump_;
};

}  // namespace grpo_forge

#endif  // GRPO_FORGE_ERRORS_HPP_
