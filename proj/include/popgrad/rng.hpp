#pragma once

#include <cstdint>
#include <random>

namespace popgrad {

/// Deterministic, hierarchically derivable random stream.
///
/// A stream is identified by a 64-bit key. `derive(...)` mixes child indices
/// into the key to produce an independent sub-stream, so a consumer can hand
/// out per-(epoch, batch, member) streams whose draws do not depend on
/// execution order or thread count.
class RngStream {
public:
  explicit RngStream(std::uint64_t seed) : key_(mix(seed)), engine_(key_) {}

  RngStream derive(std::uint64_t a) const { return RngStream(combine(key_, a), 0); }
  RngStream derive(std::uint64_t a, std::uint64_t b) const {
    return RngStream(combine(combine(key_, a), b), 0);
  }
  RngStream derive(std::uint64_t a, std::uint64_t b, std::uint64_t c) const {
    return RngStream(combine(combine(combine(key_, a), b), c), 0);
  }

  std::uint64_t key() const { return key_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() {
    return std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
  }

  /// Standard normal draw.
  double normal() {
    return std::normal_distribution<double>(0.0, 1.0)(engine_);
  }

  /// Uniform integer in [lo, hi], inclusive.
  int uniform_int(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(engine_);
  }

  std::size_t uniform_index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

private:
  RngStream(std::uint64_t key, int) : key_(key), engine_(key) {}

  // splitmix64 finalizer; full-period mixing of the seed bits.
  static std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  static std::uint64_t combine(std::uint64_t key, std::uint64_t child) {
    return mix(key ^ mix(child + 0x12fad5c9u));
  }

  std::uint64_t key_;
  std::mt19937_64 engine_;
};

// Sub-stream labels used across the training loop, so independent consumers
// never collide on the same derived key.
namespace stream_label {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kAugment = 3;
inline constexpr std::uint64_t kStep = 4;
inline constexpr std::uint64_t kDropoutMask = 5;
inline constexpr std::uint64_t kPerturb = 6;
}  // namespace stream_label

}  // namespace popgrad
