#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

// Little-endian primitives for the on-disk artifact formats.
namespace chunkrag::io {

void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f32(std::ostream& out, float v);
void write_f64(std::ostream& out, double v);
void write_bytes(std::ostream& out, std::span<const std::uint8_t> bytes);

// Readers throw FormatError on short reads.
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
float read_f32(std::istream& in);
double read_f64(std::istream& in);
void read_bytes(std::istream& in, std::span<std::uint8_t> bytes);
std::string read_string(std::istream& in, std::size_t size);

// Writes `content` to `path + ".partial"` then renames it into place, so a
// reader never sees a half-written artifact.
void write_file_atomic(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

}  // namespace chunkrag::io
