#pragma once

#include <string>

namespace diffcal {

// Hex-encoded SHA-256 of a byte string.
std::string sha256_hex(const std::string& data);

// Digest of a file's contents. Throws DependencyError if unreadable.
std::string sha256_file(const std::string& path);

}  // namespace diffcal
