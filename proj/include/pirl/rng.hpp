#pragma once

#include <cstddef>
#include <cstdint>

namespace pirl {

/// SplitMix64 stream generator.
///
/// A stream is keyed by (root seed, stream id); the n-th output of a stream is
/// `mix64(key + (n + 1) * 0x9E3779B97F4A7C15)`, so every draw is a pure
/// function of (seed, stream, counter). Streams for different episodes or
/// purposes are obtained with `stream()`/`split()` and never overlap in
/// practice.
///
/// Derived variates consume a fixed number of raw draws:
///   - uniform(): 1 draw, top 53 bits scaled by 2^-53, range [0, 1)
///   - uniform_open(): 1 draw, (top 53 bits + 0.5) * 2^-53, range (0, 1)
///   - normal(): 2 draws u1 = uniform_open(), u2 = uniform();
///               z = sqrt(-2 ln u1) * cos(2 pi u2)   (Box-Muller, no caching)
///   - index(n): rejection sampling on raw draws (Lemire), usually 1 draw
class Rng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  static std::uint64_t mix64(std::uint64_t z);

  std::uint64_t next_u64();
  double uniform();
  double uniform_open();
  double uniform(double lo, double hi);
  double normal();
  std::size_t index(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }

  /// Independent child stream keyed by this stream's key and `id`.
  Rng split(std::uint64_t id) const;

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Named purposes for streams derived from a root seed.
enum class StreamPurpose : std::uint64_t {
  kEnvironment = 1,
  kExploration = 2,
  kReplay = 3,
  kCollocation = 4,
  kInit = 5,
  kEvaluation = 6,
  kInitialState = 7,
};

/// Stream for (seed, purpose, index), e.g. the environment noise of episode k.
Rng stream(std::uint64_t seed, StreamPurpose purpose, std::uint64_t index = 0);

}  // namespace pirl
