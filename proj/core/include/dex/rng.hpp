#pragma once

#include <cstdint>

namespace dex {

__extension__ using uint128 = unsigned __int128;

/// splitmix64 finalizer (Steele, Lea, Flood). Constants:
///   x ^= x >> 30; x *= 0xbf58476d1ce4e5b9;
///   x ^= x >> 27; x *= 0x94d049bb133111eb;
///   x ^= x >> 31;
constexpr std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

/// Counter-based generator: the value drawn for (stream, counter) depends only
/// on the seed and that pair, so independent consumers (one stream per walk,
/// one for the adversary, ...) never perturb each other.
///
///   at(stream, counter) = mix64(mix64(seed ^ (stream * 0x9e3779b97f4a7c15))
///                               + counter * 0xd1b54a32d192ed03)
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t at(std::uint64_t stream, std::uint64_t counter) const {
    const std::uint64_t key = mix64(seed_ ^ (stream * 0x9e3779b97f4a7c15ULL));
    return mix64(key + counter * 0xd1b54a32d192ed03ULL);
  }

  /// Uniform integer in [0, bound) by 128-bit multiply-high (bound > 0).
  std::uint64_t below(std::uint64_t stream, std::uint64_t counter, std::uint64_t bound) const {
    const uint128 wide = static_cast<uint128>(at(stream, counter)) * bound;
    return static_cast<std::uint64_t>(wide >> 64);
  }

  /// Uniform double in [0, 1) from the top 53 bits.
  double unit(std::uint64_t stream, std::uint64_t counter) const {
    return static_cast<double>(at(stream, counter) >> 11) * 0x1.0p-53;
  }

 private:
  std::uint64_t seed_;
};

/// A sequential view of one stream of a CounterRng.
class RngStream {
 public:
  RngStream(const CounterRng& rng, std::uint64_t stream) : rng_(&rng), stream_(stream) {}

  std::uint64_t next() { return rng_->at(stream_, counter_++); }
  std::uint64_t below(std::uint64_t bound) { return rng_->below(stream_, counter_++, bound); }
  double unit() { return rng_->unit(stream_, counter_++); }
  std::uint64_t draws() const { return counter_; }

 private:
  const CounterRng* rng_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

/// Well-known stream identifiers.
namespace streams {
inline constexpr std::uint64_t kAdversary = 1;
inline constexpr std::uint64_t kSpectral = 2;
inline constexpr std::uint64_t kHarness = 3;
/// Walk streams are kWalkBase + walk id.
inline constexpr std::uint64_t kWalkBase = 1ULL << 32;
}  // namespace streams

}  // namespace dex
