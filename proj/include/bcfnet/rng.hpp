#pragma once

#include <cmath>
#include <cstdint>

namespace bcfnet {

// splitmix64, used to derive independent seeds from (seed, tag) pairs so
// that per-user / per-epoch streams do not depend on iteration order.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t mix64(uint64_t a, uint64_t b) { return mix64(a ^ mix64(b)); }

// PCG32 (O'Neill). Hand-rolled so that streams are identical across
// platforms and standard libraries; std::mt19937 ordering is portable but
// the distributions on top of it are not.
class Pcg32 {
 public:
  explicit Pcg32(uint64_t seed, uint64_t stream = 0xda3e39cb94b95bdbULL)
      : state_(0), inc_((stream << 1) | 1u) {
    next_u32();
    state_ += seed;
    next_u32();
  }

  uint32_t next_u32() {
    uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    uint32_t xorshifted = static_cast<uint32_t>(((old >> 18) ^ old) >> 27);
    uint32_t rot = static_cast<uint32_t>(old >> 59);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
  }

  // Unbiased bounded draw in [0, n), n > 0.
  uint32_t bounded(uint32_t n) {
    uint32_t threshold = (-n) % n;
    for (;;) {
      uint32_t r = next_u32();
      if (r >= threshold) return r % n;
    }
  }

  // Uniform in [0, 1) with 32 bits of mantissa input.
  double next_double() { return next_u32() * (1.0 / 4294967296.0); }

 private:
  uint64_t state_;
  uint64_t inc_;
};

// Deterministic standard-normal draws (Box-Muller, no caching so the
// stream position is a pure function of the call count).
inline double normal_draw(Pcg32& rng) {
  // u1 in (0,1]: avoid log(0).
  double u1 = (rng.next_u32() + 1.0) * (1.0 / 4294967296.0);
  double u2 = rng.next_double();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace bcfnet
