#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace realmix {

// FNV-1a, 64-bit. Used for file integrity fields, cache keys, and config
// hashes. Not cryptographic; collisions are acceptable for provenance use.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

inline std::string checksum_hex(uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

inline std::string checksum_hex(const void* data, size_t n) {
  return checksum_hex(fnv1a64(data, n));
}

}  // namespace realmix
