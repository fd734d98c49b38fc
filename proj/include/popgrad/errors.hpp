#pragma once

#include <stdexcept>
#include <string>

namespace popgrad {

/// Bad user-supplied configuration (rejected keys, invalid values, shape
/// mismatches between config and data).
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Dataset files missing, malformed, or inconsistent.
class DataError : public std::runtime_error {
public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// API misuse inside the process (contract violations by calling code).
class UsageError : public std::logic_error {
public:
  explicit UsageError(const std::string& what) : std::logic_error(what) {}
};

/// Non-finite loss or update during training. Carries the location so the
/// run record can report where the run blew up.
class NumericDivergence : public std::runtime_error {
public:
  NumericDivergence(const std::string& what, int epoch, int batch, int member = -1)
      : std::runtime_error(what), epoch(epoch), batch(batch), member(member) {}

  int epoch;
  int batch;
  int member;  // population member index, -1 when not applicable
};

}  // namespace popgrad
