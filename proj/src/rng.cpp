#include "vqag/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace vqag {

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) {
  std::uint64_t x = seed;
  for (auto& s : state_) s = splitmix64(x);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::index(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::index: n must be positive");
  const std::uint64_t threshold = (0 - n) % n;
  std::uint64_t r = next_u64();
  while (r < threshold) r = next_u64();
  return r % n;
}

Rng Rng::derive(std::uint64_t seed, std::uint64_t key) {
  std::uint64_t x = seed ^ (key * 0xd1342543de82ef95ULL);
  std::uint64_t mixed = splitmix64(x);
  return Rng(mixed ^ key);
}

}  // namespace vqag
