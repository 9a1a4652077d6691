#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string_view>
#include <utility>

namespace proxygap {

// ----------------------------- key derivation -----------------------------
// Every random decision in the harness is drawn from a named stream whose
// 64-bit key is derived from a parent key, a tag string, and up to two
// integer qualifiers. Changing one stream's consumption never affects
// another stream.

constexpr uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

constexpr uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<uint8_t>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

constexpr uint64_t derive_key(uint64_t parent, std::string_view tag,
                              uint64_t a = 0, uint64_t b = 0) {
  uint64_t h = mix64(parent + 0x9e3779b97f4a7c15ull);
  h = mix64(h ^ fnv1a64(tag));
  h = mix64(h ^ a);
  h = mix64(h ^ b);
  return h;
}

// ----------------------------- generator -----------------------------
// xoshiro256** seeded from a derived key via a splitmix64 chain.

class Rng {
 public:
  explicit Rng(uint64_t key) {
    uint64_t sm = key;
    for (auto& w : state_) {
      sm += 0x9e3779b97f4a7c15ull;
      w = mix64(sm);
    }
    if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // in [0,1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  bool bernoulli(double prob) { return uniform() < prob; }

  // unbiased integer in [0,n); Lemire rejection
  uint32_t below(uint32_t n) {
    uint64_t m = static_cast<uint64_t>(static_cast<uint32_t>(next_u64())) * n;
    auto lo = static_cast<uint32_t>(m);
    if (lo < n) {
      const uint32_t threshold = (0u - n) % n;
      while (lo < threshold) {
        m = static_cast<uint64_t>(static_cast<uint32_t>(next_u64())) * n;
        lo = static_cast<uint32_t>(m);
      }
    }
    return static_cast<uint32_t>(m >> 32);
  }

  // standard normal, Box-Muller with cached spare
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u = 1.0 - uniform();
    const double r = std::sqrt(-2.0 * std::log(u));
    const double theta = 2.0 * 3.14159265358979323846 * uniform();
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename It>
  void shuffle(It begin, It end) {
    const auto n = static_cast<uint64_t>(end - begin);
    for (uint64_t i = n; i > 1; --i) {
      const uint32_t j = below(static_cast<uint32_t>(i));
      std::swap(begin[i - 1], begin[j]);
    }
  }

 private:
  static constexpr uint64_t rotl(uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::array<uint64_t, 4> state_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline Rng derive_rng(uint64_t parent, std::string_view tag, uint64_t a = 0,
                      uint64_t b = 0) {
  return Rng(derive_key(parent, tag, a, b));
}

}  // namespace proxygap
