#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "periscope/error.hpp"

// Little-endian primitives for the on-disk formats.
namespace periscope::binio {

static_assert(std::endian::native == std::endian::little, "big-endian hosts need byte swapping here");

inline void put_u8(std::ostream& out, std::uint8_t v) { out.put(static_cast<char>(v)); }

inline void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

inline void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

inline void put_f32(std::ostream& out, std::span<const float> values) {
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
}

inline void read_exact(std::istream& in, void* dst, std::size_t n, const char* what) {
  in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) fail(ErrorCode::parse_error, std::string("truncated ") + what);
}

inline std::uint32_t get_u32(std::istream& in, const char* what) {
  std::uint32_t v;
  read_exact(in, &v, 4, what);
  return v;
}

inline std::uint64_t get_u64(std::istream& in, const char* what) {
  std::uint64_t v;
  read_exact(in, &v, 8, what);
  return v;
}

inline void get_f32(std::istream& in, std::span<float> dst, const char* what) {
  read_exact(in, dst.data(), dst.size_bytes(), what);
}

/// 8-byte magic, u64 header length, JSON header bytes.
inline void put_header(std::ostream& out, const char (&magic)[9], const std::string& json) {
  out.write(magic, 8);
  put_u64(out, json.size());
  out.write(json.data(), static_cast<std::streamsize>(json.size()));
}

inline std::string get_header(std::istream& in, const char (&magic)[9], const char* what) {
  char got[8];
  read_exact(in, got, 8, what);
  if (std::memcmp(got, magic, 8) != 0) fail(ErrorCode::parse_error, std::string("bad magic in ") + what);
  const std::uint64_t len = get_u64(in, what);
  if (len > (1ull << 34)) fail(ErrorCode::parse_error, std::string("implausible header length in ") + what);
  std::string json(len, '\0');
  read_exact(in, json.data(), len, what);
  return json;
}

/// FNV-1a, used for config fingerprints stored in file headers.
inline std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace periscope::binio
