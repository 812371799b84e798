#pragma once

#include <complex>
#include <cstdint>
#include <random>

namespace vsep {

// splitmix64 finalizer; used for all seed derivation so that results do not
// depend on worker count or scheduling.
std::uint64_t mix64(std::uint64_t x);

// Canonical seed derivation for (sweep point, method, trial) triples.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t point_index,
                          std::uint64_t method_index, std::uint64_t trial_index);

// Deterministic RNG. Distributions are implemented explicitly on top of
// mt19937_64 so that streams are reproducible independent of the standard
// library implementation of <random> distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer on [0, n).
  std::uint64_t uniform_index(std::uint64_t n);

  // Standard normal via Box-Muller (pairs cached).
  double normal();

  // Circularly symmetric complex normal with unit total variance:
  // real and imaginary parts each N(0, 1/2).
  std::complex<double> cnormal();

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace vsep
