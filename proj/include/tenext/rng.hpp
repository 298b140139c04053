#pragma once
// Deterministic random source. Everything stochastic in the project draws from
// this generator so that a run is reproducible bit-for-bit across platforms;
// std::uniform_*_distribution is implementation-defined and deliberately avoided.

#include <cmath>
#include <cstdint>
#include <vector>

namespace tenext {

// splitmix64: tiny, fast, passes BigCrush as a mixer. State advances by a fixed
// odd constant, output is a finalizer of the state.
inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {
    // Warm the state so that small seeds (0, 1, 2...) diverge immediately.
    (void)splitmix64(state_);
    (void)splitmix64(state_);
  }

  uint64_t next_u64() { return splitmix64(state_); }

  // Derive an independent stream; used for per-epoch / per-step substreams so
  // a resumed run replays the exact draws of an uninterrupted one.
  Rng fork(uint64_t stream) const {
    uint64_t s = state_ ^ (0x9e3779b97f4a7c15ull * (stream + 0x51ed2701));
    return Rng(s);
  }

  // Uniform in [0, 1): 53 random mantissa bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection-free modulo is fine here: n is always
  // tiny compared to 2^64, so the bias is far below anything observable.
  int64_t uniform_int(int64_t n) {
    return n > 0 ? static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n)) : 0;
  }

  // Standard normal via Box-Muller (cos branch only, for a fixed draw count).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Fisher-Yates; same permutation on every platform for a given state.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(static_cast<int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
};

}  // namespace tenext
