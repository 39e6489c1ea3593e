#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace shield {

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& data);

/// SHA-256 of a file's contents.
std::string sha256_file(const std::filesystem::path& path);

/// First 8 bytes of the SHA-256 as an integer; used for stable hash ordering.
uint64_t sha256_prefix64(const std::string& data);

}  // namespace shield
