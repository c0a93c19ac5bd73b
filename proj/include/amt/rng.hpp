#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>

#include "amt/error.hpp"

namespace amt {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s,
                              std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Maps 64 random bits to [0, 1) using the top 53 bits.
constexpr double to_unit_interval(std::uint64_t x) noexcept {
  return static_cast<double>(x >> 11) * 0x1.0p-53;
}

/// Independent sub-stream seed for a named stream of a base seed.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept {
  return splitmix64(base ^ splitmix64(stream + 0x5851f42d4c957f2dULL));
}

/// A seeded mt19937_64 stream that counts its draws. (seed, position) is a
/// complete checkpoint: RngStream(seed, position) continues the same sequence.
class RngStream {
 public:
  RngStream() : RngStream(0) {}
  explicit RngStream(std::uint64_t seed, std::uint64_t position = 0)
      : seed_(seed), position_(position), engine_(seed) {
    engine_.discard(position);
  }

  std::uint64_t next() {
    ++position_;
    return engine_();
  }

  double uniform() { return to_unit_interval(next()); }

  /// Unbiased integer in [0, n).
  std::size_t below(std::size_t n) {
    if (n == 0) throw InvalidInput("RngStream::below: empty range");
    const std::uint64_t bound = n;
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t x = next();
      if (x >= threshold) return static_cast<std::size_t>(x % bound);
    }
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t position() const noexcept { return position_; }

  bool operator==(const RngStream& other) const noexcept {
    return seed_ == other.seed_ && position_ == other.position_;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t position_;
  std::mt19937_64 engine_;
};

}  // namespace amt
