#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>

namespace dflm {

/// Purpose tags that keep the streams of different consumers disjoint.
enum class StreamTag : std::uint64_t {
  init = 1,
  interior = 2,
  boundary = 3,
  walker = 4,
  analysis = 5,
  bootstrap = 6,
  gradient_measure = 7,
  test = 99,
};

std::uint64_t splitmix64(std::uint64_t& state);

/// Order-sensitive 64-bit mix of a seed and a key tuple.
std::uint64_t hash_key(std::uint64_t seed, std::initializer_list<std::uint64_t> key);

/// xoshiro256** seeded from a hierarchical key, so any (seed, tag, a, b, c)
/// names an independent, reproducible stream without shared state.
/// Satisfies UniformRandomBitGenerator.
class RngStream {
 public:
  using result_type = std::uint64_t;

  explicit RngStream(std::uint64_t seed);
  RngStream(std::uint64_t seed, StreamTag tag, std::uint64_t a = 0, std::uint64_t b = 0,
            std::uint64_t c = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01();

 private:
  void seed_state(std::uint64_t key);
  std::uint64_t s_[4];
};

}  // namespace dflm
