#pragma once

#include <stdexcept>
#include <string>

namespace tap {

// Exit codes shared by the command-line tool.
enum class ExitCode : int { kOk = 0, kConfig = 2, kData = 3, kNumeric = 4 };

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const = 0;
};

// Bad configuration, shape contract violations, incompatible checkpoints.
class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kConfig; }
};

// Missing or malformed input files.
class DataError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kData; }
};

// Non-finite activations or losses.
class NumericError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kNumeric; }
};

}  // namespace tap
