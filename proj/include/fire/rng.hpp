#pragma once

#include <cmath>
#include <cstdint>

namespace fire {

// Deterministic splitmix64 stream. Substreams are derived from an index so
// parallel consumers stay reproducible regardless of call order.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0,1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller (uncached, keeps streams position-independent)
  double normal() {
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  int uniform_int(int n) {  // [0, n)
    return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
  }

  Rng substream(uint64_t index) const {
    Rng r(state_ ^ (0xd1342543de82ef95ull * (index + 1)));
    r.next_u64();
    return r;
  }

 private:
  uint64_t state_;
};

}  // namespace fire
