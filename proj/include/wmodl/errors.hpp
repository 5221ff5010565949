#pragma once

#include <stdexcept>
#include <string>

namespace wmodl {

/// Caller supplied something that violates an operation's preconditions.
class InvalidInput : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/// An iterative routine produced NaN/Inf. Carries the iteration it happened at.
class NumericalFailure : public std::runtime_error
{
public:
  NumericalFailure(std::string const &what, int iteration)
    : std::runtime_error(what + " (iteration " + std::to_string(iteration) + ")")
    , iteration_(iteration)
  {
  }

  int iteration() const { return iteration_; }

  /// Same failure with `prefix` prepended to the message, iteration unchanged.
  NumericalFailure with_context(std::string const &prefix) const { return {prefix + what(), iteration_, 0}; }

private:
  NumericalFailure(std::string const &full, int iteration, int)
    : std::runtime_error(full)
    , iteration_(iteration)
  {
  }

  int iteration_;
};

/// A file on disk is truncated, has the wrong magic, or an unsupported version.
class CorruptFile : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// A path could not be opened, read or written.
class IoError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Experiment configuration rejected (unknown key, bad value).
class ConfigError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

} // namespace wmodl
