#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "segrobust/error.hpp"

namespace segrobust::binio {

// Little-endian primitives over iostreams; every short read throws IoError.

inline void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, uint64_t v) {
  write_u32(os, static_cast<uint32_t>(v));
  write_u32(os, static_cast<uint32_t>(v >> 32));
}

inline void write_f64(std::ostream& os, double v) {
  write_u64(os, std::bit_cast<uint64_t>(v));
}

inline void write_f64_array(std::ostream& os, const std::vector<double>& v) {
  for (double x : v) write_f64(os, x);
}

inline void write_bytes(std::ostream& os, const void* data, size_t n) {
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

inline void read_exact(std::istream& is, void* data, size_t n,
                       const std::string& what) {
  is.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n) {
    throw IoError("truncated file while reading " + what);
  }
}

inline uint32_t read_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  read_exact(is, b, 4, what);
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

inline uint64_t read_u64(std::istream& is, const std::string& what) {
  const uint64_t lo = read_u32(is, what);
  const uint64_t hi = read_u32(is, what);
  return lo | hi << 32;
}

inline double read_f64(std::istream& is, const std::string& what) {
  return std::bit_cast<double>(read_u64(is, what));
}

inline void read_f64_array(std::istream& is, std::vector<double>& out,
                           const std::string& what) {
  for (double& x : out) x = read_f64(is, what);
}

inline void check_magic(std::istream& is, const char expect[4],
                        const std::string& path) {
  char magic[4];
  read_exact(is, magic, 4, "magic of " + path);
  if (!std::equal(magic, magic + 4, expect)) {
    throw IoError("bad magic in " + path + " (expected " +
                  std::string(expect, 4) + ")");
  }
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  return os;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  return is;
}

}  // namespace segrobust::binio
