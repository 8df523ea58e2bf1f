#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

// Binary I/O helpers shared by the container formats. All multi-byte values
// are little-endian regardless of host order; floats travel as their IEEE-754
// bit patterns, so a write/read round trip is bit-exact.

namespace fbsr::io {

void write_u32(std::ostream& os, std::uint32_t v);
void write_f32(std::ostream& os, float v);
void write_f64(std::ostream& os, double v);

// Readers throw std::runtime_error mentioning `what` and the stream byte
// offset on truncation.
std::uint32_t read_u32(std::istream& is, const char* what);
float read_f32(std::istream& is, const char* what);
double read_f64(std::istream& is, const char* what);

void write_magic(std::ostream& os, const char magic[4]);
void expect_magic(std::istream& is, const char magic[4], const char* what);

/// Shortest decimal form that round-trips a double ("%.17g" fallback).
std::string format_double(double v);

/// FNV-1a 64-bit hash of a byte range.
std::uint64_t fnv1a64(const void* data, std::size_t size);

/// FNV-1a 64-bit hash of a file's contents. Throws if unreadable.
std::uint64_t hash_file(const std::filesystem::path& path);

/// Whole file as bytes. Throws if unreadable.
std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);

}  // namespace fbsr::io
