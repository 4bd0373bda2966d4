#pragma once

#include <cstdint>
#include <cmath>

namespace epi {

// Deterministic counter-seeded RNG. Streams derived from (seed, stream_id)
// are independent enough for our purposes and reproduce bit-exactly on a
// given platform regardless of call interleaving elsewhere.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(splitmix(seed + 0x9e3779b97f4a7c15ULL)) {
    // avoid the all-zero state
    if (state_ == 0) state_ = 0x853c49e6748fea9bULL;
    has_spare_ = false;
    spare_ = 0.0;
  }

  static Rng stream(uint64_t seed, uint64_t stream_id) {
    return Rng(splitmix(seed) ^ splitmix(stream_id * 0xbf58476d1ce4e5b9ULL + 1));
  }

  uint64_t next_u64() {
    // xorshift64*
    uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545f4914f6cdd1dULL;
  }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  uint64_t uniform_int(uint64_t n) { return next_u64() % n; }

  // standard normal via Marsaglia polar method (deterministic, no libm
  // variation across implementations of std::normal_distribution)
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = uniform(-1.0, 1.0);
      v = uniform(-1.0, 1.0);
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double mul = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * mul;
    has_spare_ = true;
    return u * mul;
  }

 private:
  static uint64_t splitmix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  uint64_t state_;
  bool has_spare_;
  double spare_;
};

}  // namespace epi
