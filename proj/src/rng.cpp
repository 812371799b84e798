#include "vsep/rng.hpp"

#include <cmath>

namespace vsep {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t point_index,
                          std::uint64_t method_index, std::uint64_t trial_index) {
  std::uint64_t h = mix64(point_index + 1);
  h = mix64(h ^ mix64(method_index + 0x100));
  h = mix64(h ^ mix64(trial_index + 0x10000));
  return base ^ h;
}

double Rng::uniform() {
  // 53 random bits -> double in [0, 1).
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  if (n == 0) return 0;
  // Modulo bias is irrelevant here (n is tiny against 2^64).
  return engine_() % n;
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  double u2 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * M_PI * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

std::complex<double> Rng::cnormal() {
  const double re = normal();
  const double im = normal();
  return {re * M_SQRT1_2, im * M_SQRT1_2};
}

}  // namespace vsep
