#include "fbsr/io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace fbsr::io {

namespace {

void write_le(std::ostream& os, const void* p, std::size_t n) {
  // Host is little-endian on every supported target; memcpy keeps the
  // float paths free of aliasing issues.
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_exact(std::istream& is, void* p, std::size_t n, const char* what) {
  const auto at = is.tellg();
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw std::runtime_error(std::string("truncated read of ") + what +
                             " at byte offset " +
                             std::to_string(static_cast<long long>(at)));
  }
}

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { write_le(os, &v, 4); }

void write_f32(std::ostream& os, float v) { write_le(os, &v, 4); }

void write_f64(std::ostream& os, double v) { write_le(os, &v, 8); }

std::uint32_t read_u32(std::istream& is, const char* what) {
  std::uint32_t v;
  read_exact(is, &v, 4, what);
  return v;
}

float read_f32(std::istream& is, const char* what) {
  float v;
  read_exact(is, &v, 4, what);
  return v;
}

double read_f64(std::istream& is, const char* what) {
  double v;
  read_exact(is, &v, 8, what);
  return v;
}

void write_magic(std::ostream& os, const char magic[4]) {
  os.write(magic, 4);
}

void expect_magic(std::istream& is, const char magic[4], const char* what) {
  char got[4];
  read_exact(is, got, 4, what);
  if (std::memcmp(got, magic, 4) != 0) {
    throw std::runtime_error(std::string("bad magic for ") + what +
                             ": expected '" + std::string(magic, 4) +
                             "', got '" + std::string(got, 4) + "'");
  }
}

std::string format_double(double v) {
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    double back;
    if (std::sscanf(buf, "%lf", &back) == 1 && back == v) return buf;
  }
  return buf;
}

std::uint64_t fnv1a64(const void* data, std::size_t size) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

std::uint64_t hash_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace fbsr::io
