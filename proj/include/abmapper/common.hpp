#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace abm {

enum class ErrorKind {
  MalformedHeader,
  RaggedRows,
  UnknownGlyph,
  InsufficientFreeCells,
  InvalidActionIndex,
  NoPath,
  ShapeMismatch,
  LengthMismatch,
  NameMismatch,
  NonFiniteLoss,
  UnknownKey,
  TypeError,
  MissingCheckpoint,
  CorruptManifest,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Deterministic RNG with fully specified draw logic (no reliance on
/// implementation-defined std distributions). xoshiro-free: a splitmix64
/// stream is enough for simulation and sampling purposes here.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(splitmix64(seed ^ 0x6a09e667f3bcc908ull)) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Unbiased integer in [0, n). n must be > 0.
  uint64_t next_below(uint64_t n) {
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // Uniform float in [0, 1) with 24 bits of precision.
  float next_float() {
    return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f;
  }

  // Derive an independent stream; `salt` distinguishes purposes.
  Rng fork(uint64_t salt) { return Rng(splitmix64(state_ ^ splitmix64(salt))); }

 private:
  uint64_t state_;
};

// Derives a child seed from (seed, stream id). Used to hand independent
// deterministic streams to placement, action sampling, evaluation, etc.
inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream * 0x9e3779b97f4a7c15ull + 1));
}

/// FNV-1a over raw bytes; used for trajectory/trace hashes in tests.
class Fnv1a {
 public:
  void update(const void* data, size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001b3ull;
    }
  }
  template <typename T>
  void update_value(const T& v) {
    update(&v, sizeof(T));
  }
  uint64_t digest() const { return hash_; }

 private:
  uint64_t hash_ = 0xcbf29ce484222325ull;
};

}  // namespace abm
