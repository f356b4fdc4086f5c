// Copyright (c) 2026 the machgen authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace machgen {

/// Error type thrown by every operation in the library. The message is a
/// single line, suitable for machine parsing on stderr.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

// ---------------------------------------------------------------------------
// Deterministic RNG. splitmix64 core with Box-Muller normals; the entire
// state is one u64 so it serializes into checkpoints trivially and resume
// reproduces the stream bit-exactly. Never use std:: distributions here:
// their output is implementation-defined.
// ---------------------------------------------------------------------------

struct Rng {
  std::uint64_t state = 0;

  Rng() = default;
  explicit Rng(std::uint64_t seed) : state(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform in (0, 1], safe as a log argument.
  double uniform_pos() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller. Two uniforms per draw, no cached spare,
  /// so the state advances by a fixed amount per call.
  double normal() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }
};

// ---------------------------------------------------------------------------
// Stable hashing for seed derivation and token embeddings. FNV-1a, fixed
// across platforms.
// ---------------------------------------------------------------------------

inline std::uint64_t hash_str(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t hash_mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ull + (b << 6) + (b >> 2);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Per-item seed derived from a root seed and a label, e.g. one seed per
/// clip in a dataset. Stable across platforms and runs.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label,
                                 std::uint64_t index = 0) {
  return hash_mix(hash_mix(root, hash_str(label)), index);
}

// ---------------------------------------------------------------------------
// Little-endian binary packing for checkpoint and latent-store payloads.
// ---------------------------------------------------------------------------

namespace le {

inline void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& s, float v) {
  std::uint32_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  __builtin_memcpy(&bits, &v, 4);
  put_u32(s, bits);
}

inline void put_f64(std::string& s, double v) {
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  __builtin_memcpy(&bits, &v, 8);
  put_u64(s, bits);
}

inline std::uint32_t get_u32(std::string_view s, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + i]))
         << (8 * i);
  return v;
}

inline std::uint64_t get_u64(std::string_view s, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[off + i]))
         << (8 * i);
  return v;
}

inline float get_f32(std::string_view s, std::size_t off) {
  const std::uint32_t bits = get_u32(s, off);
  float v;
  __builtin_memcpy(&v, &bits, 4);
  return v;
}

inline double get_f64(std::string_view s, std::size_t off) {
  const std::uint64_t bits = get_u64(s, off);
  double v;
  __builtin_memcpy(&v, &bits, 8);
  return v;
}

}  // namespace le

}  // namespace machgen
