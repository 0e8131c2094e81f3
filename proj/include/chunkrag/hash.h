#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace chunkrag {

using Sha256Digest = std::array<std::uint8_t, 32>;

Sha256Digest sha256(std::string_view data);
std::string to_hex(const Sha256Digest& digest);
std::string sha256_hex(std::string_view data);
// Hex digest of a file's bytes. Throws FormatError if unreadable.
std::string sha256_file(const std::string& path);

}  // namespace chunkrag
