#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace hbt {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Non-physical argument (negative width, zero wavelength, ...).
class DomainError : public Error {
public:
  using Error::Error;
};

/// Invalid or inconsistent configuration.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Input that violates a required time ordering.
class OrderingError : public Error {
public:
  using Error::Error;
};

/// Malformed file content; carries the byte offset of the offending data.
class FormatError : public Error {
public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

private:
  std::uint64_t offset_;
};

/// Failed read/write; carries the byte offset where the operation stopped.
class IoError : public Error {
public:
  IoError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  explicit IoError(const std::string& what) : Error(what), offset_(0) {}
  std::uint64_t offset() const noexcept { return offset_; }

private:
  std::uint64_t offset_;
};

class CalibrationError : public Error {
public:
  using Error::Error;
};

} // namespace hbt
