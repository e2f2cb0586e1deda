#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace psigan {

inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Independent stream seed from a root seed and a path of indices, so every
// sample's RNG stream derives from (dataset seed, purpose, index).
inline uint64_t derive_seed(uint64_t root, std::initializer_list<uint64_t> path) {
  uint64_t s = root;
  for (uint64_t p : path) {
    uint64_t st = s ^ (p * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL);
    s = splitmix64(st);
  }
  return s;
}

// Deterministic RNG with explicit samplers. std:: distributions are
// implementation-defined, which would break the every-emitted-byte
// reproducibility contract of the dataset generator.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() { return splitmix64(state_); }

  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // inclusive bounds
  int64_t uniform_int(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    while (u1 <= 1e-300) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace psigan
