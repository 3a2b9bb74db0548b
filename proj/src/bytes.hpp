#pragma once

// Little-endian encoding helpers shared by the binary formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>

namespace epitraj::detail {

inline std::uint32_t byteswap32(std::uint32_t x) {
  return (x >> 24) | ((x >> 8) & 0xff00u) | ((x << 8) & 0xff0000u) | (x << 24);
}

inline void put_u32(std::string& out, std::uint32_t x) {
  if constexpr (std::endian::native == std::endian::big) x = byteswap32(x);
  char b[4];
  std::memcpy(b, &x, 4);
  out.append(b, 4);
}

inline void put_u64(std::string& out, std::uint64_t x) {
  put_u32(out, static_cast<std::uint32_t>(x));
  put_u32(out, static_cast<std::uint32_t>(x >> 32));
}

inline void put_f32(std::string& out, float f) {
  put_u32(out, std::bit_cast<std::uint32_t>(f));
}

inline std::uint32_t get_u32(const char* p, bool little = true) {
  std::uint32_t x;
  std::memcpy(&x, p, 4);
  const bool native_little = std::endian::native == std::endian::little;
  if (little != native_little) x = byteswap32(x);
  return x;
}

inline std::uint64_t get_u64(const char* p) {
  return static_cast<std::uint64_t>(get_u32(p)) |
         (static_cast<std::uint64_t>(get_u32(p + 4)) << 32);
}

inline float get_f32(const char* p, bool little = true) {
  return std::bit_cast<float>(get_u32(p, little));
}

}  // namespace epitraj::detail
