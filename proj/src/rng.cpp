#include "dflm/rng.hpp"

#include <bit>

namespace dflm {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t hash_key(std::uint64_t seed, std::initializer_list<std::uint64_t> key) {
  std::uint64_t state = seed;
  std::uint64_t h = splitmix64(state);
  for (std::uint64_t k : key) {
    state = h ^ std::rotl(k, 17) ^ (k * 0xd6e8feb86659fd93ULL);
    h = splitmix64(state);
  }
  return h;
}

RngStream::RngStream(std::uint64_t seed) { seed_state(hash_key(seed, {})); }

RngStream::RngStream(std::uint64_t seed, StreamTag tag, std::uint64_t a, std::uint64_t b,
                     std::uint64_t c) {
  seed_state(hash_key(seed, {static_cast<std::uint64_t>(tag), a, b, c}));
}

void RngStream::seed_state(std::uint64_t key) {
  std::uint64_t state = key;
  for (auto& word : s_) word = splitmix64(state);
}

RngStream::result_type RngStream::operator()() {
  const std::uint64_t result = std::rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = std::rotl(s_[3], 45);
  return result;
}

double RngStream::uniform01() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

}  // namespace dflm
