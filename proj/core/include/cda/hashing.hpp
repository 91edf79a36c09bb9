#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace cda {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

// FNV-1a over raw bytes. Used for parameter freeze checks and artifact
// lineage, where we need a stable digest, not cryptographic strength.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = kFnvOffset) {
  return fnv1a(s.data(), s.size(), h);
}

std::string hex_digest(std::uint64_t h);

// FNV-1a over a file's contents; throws IoError if unreadable.
std::uint64_t hash_file(const std::string& path);

}  // namespace cda
