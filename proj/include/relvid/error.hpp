#pragma once

#include <stdexcept>
#include <string>

namespace relvid {

/// Caller supplied an argument that violates an operation's precondition.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Filesystem or decoder failure. The message always names the offending path.
class IoError : public std::runtime_error {
 public:
  IoError(const std::string& path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A sampling request has no eligible outcome. Recoverable: samplers retry
/// with a different category.
class NotSatisfiable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every retry of a relation draw hit NotSatisfiable.
class DegenerateCorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace relvid
