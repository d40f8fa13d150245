#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace hyspec {

// Base of every error raised by the library. Callers that only care about
// "something went wrong" catch this; the CLI maps it to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible operand extents (matmul inner dims, elementwise mismatch).
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Input does not fit the operation's geometric requirements.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameter / configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or a numerically meaningless request.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Out-of-range class index or similar.
class IndexError : public Error {
 public:
  using Error::Error;
};

// API used outside its contract (e.g. backward on a consumed graph).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Batchnorm asked to estimate statistics from a single sample.
class DegenerateBatchError : public Error {
 public:
  using Error::Error;
};

// Cube and label map do not describe the same raster.
class PairingError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed binary file. Carries the byte offset at which parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

// Non-fatal diagnostic. Operations that "record a warning" push one of these
// into the process-wide sink; drivers drain and report them.
struct Warning {
  std::string code;
  std::string message;
};

void warn(std::string code, std::string message);
std::vector<Warning> drain_warnings();
std::size_t pending_warnings();

}  // namespace hyspec
