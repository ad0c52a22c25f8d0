#pragma once

#include <cstdint>

namespace fusedet {

/// Counter-based PRNG (splitmix64). The same seed yields the same draw
/// sequence on every platform: all derived values are built from exact
/// IEEE-754 operations only, no libm distribution code.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  float uniform(float lo, float hi) {
    return static_cast<float>(lo + (hi - lo) * uniform());
  }

  /// Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Approximate standard normal via the sum of 12 uniforms. Exact-rounded
  /// additions keep the sequence bit-identical across platforms; tails are
  /// truncated at +-6 sigma, which is irrelevant for init and noise use.
  float normal(float mean = 0.0f, float stddev = 1.0f) {
    double s = 0.0;
    for (int i = 0; i < 12; ++i) s += uniform();
    return mean + stddev * static_cast<float>(s - 6.0);
  }

  /// Derive an independent sub-stream, e.g. one per frame or per object.
  Rng fork(std::uint64_t stream) const {
    Rng mix(state_ ^ (0xd1b54a32d192ed03ULL * (stream + 1)));
    mix.next_u64();
    return mix;
  }

 private:
  std::uint64_t state_;
};

}  // namespace fusedet
