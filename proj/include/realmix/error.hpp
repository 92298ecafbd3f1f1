#pragma once

#include <stdexcept>
#include <string>

namespace realmix {

// Bad user input: config constraint violations, malformed files, infeasible
// split requests. CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem trouble: unreadable paths, short reads, checksum mismatches.
class IoError : public std::runtime_error {
public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Mid-run failure (non-finite loss, broken invariant). CLI maps this to
// exit code 3 and points at the last good checkpoint when one exists.
class RuntimeAbort : public std::runtime_error {
public:
  explicit RuntimeAbort(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace realmix
