#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace vqag {

// xoshiro256** seeded through splitmix64. All derived draws (uniform, normal,
// index, shuffle) are implemented here rather than through <random>
// distributions, whose output is not specified across standard libraries.
class Rng {
 public:
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Standard normal via Box-Muller (one value per call).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // Uniform integer in [0, n); n must be > 0.
  std::uint64_t index(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Independent stream derived from this generator's seed material and a key,
  // used for per-scene sub-seeds.
  static Rng derive(std::uint64_t seed, std::uint64_t key);

  const State& state() const { return state_; }
  void set_state(const State& s) { state_ = s; }

 private:
  State state_{};
};

std::uint64_t splitmix64(std::uint64_t& x);

}  // namespace vqag
