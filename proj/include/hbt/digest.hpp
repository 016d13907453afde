#pragma once

#include <cstdint>
#include <string>

namespace hbt {

/// Lowercase hex SHA-256 of a file's bytes; throws IoError if unreadable.
std::string sha256_file(const std::string& path);
std::string sha256_string(const std::string& data);

std::uint64_t file_size_bytes(const std::string& path);

} // namespace hbt
