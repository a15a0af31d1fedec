#pragma once

#include <cstdint>
#include <random>

namespace mcem {

// Splittable seeded RNG. Child streams are derived by mixing (seed, index)
// through SplitMix64, so replicate runs and per-iteration samplers are
// reproducible regardless of execution order.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed)
      : seed_material_(mix(seed)), gen_(seed_material_) {}

  RngStream child(std::uint64_t index) const {
    return RngStream(seed_material_ ^ (0x9e3779b97f4a7c15ULL * (index + 1)));
  }

  std::mt19937_64& gen() { return gen_; }

  double uniform() {
    return std::uniform_real_distribution<double>(0.0, 1.0)(gen_);
  }

  double normal() { return std::normal_distribution<double>(0.0, 1.0)(gen_); }

  // Uniform integer in [lo, hi], inclusive.
  long uniform_int(long lo, long hi) {
    return std::uniform_int_distribution<long>(lo, hi)(gen_);
  }

  long binomial(long n, double p) {
    return std::binomial_distribution<long>(n, p)(gen_);
  }

  double exponential(double rate) {
    return std::exponential_distribution<double>(rate)(gen_);
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_material_;
  std::mt19937_64 gen_;
};

}  // namespace mcem
