#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace evplace {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed input file. Carries whatever line/field context is known.
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& msg) : Error(msg) {}
};

/// A scenario that violates one or more documented invariants.
/// All violations found are listed, not just the first.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<std::string> violations)
      : Error(join(violations)), violations_(std::move(violations)) {}

  const std::vector<std::string>& violations() const { return violations_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string out = "scenario validation failed:";
    for (const auto& s : v) {
      out += "\n  - ";
      out += s;
    }
    return out;
  }
  std::vector<std::string> violations_;
};

/// Destination unreachable from origin on the road graph.
class NoPathError : public Error {
 public:
  explicit NoPathError(const std::string& msg) : Error(msg) {}
};

/// Bad grid data (zero-impedance branch, unknown bus, mismatched vectors).
class GridError : public Error {
 public:
  explicit GridError(const std::string& msg) : Error(msg) {}
};

/// Choice model invoked with no alternatives at all.
class EmptyChoiceSetError : public Error {
 public:
  explicit EmptyChoiceSetError(const std::string& msg) : Error(msg) {}
};

/// Policy enumeration asked for more free sites than the hard cap allows.
class EnumerationCapError : public Error {
 public:
  explicit EnumerationCapError(const std::string& msg) : Error(msg) {}
};

/// No candidate policy satisfies the QoS constraints.
class InfeasibleError : public Error {
 public:
  explicit InfeasibleError(const std::string& msg) : Error(msg) {}
};

}  // namespace evplace
