#include "vsep/dictionary.hpp"

#include <cmath>

namespace vsep {

CVec object_steering_vector(const Zeta& zeta, int n_fast, int n_ramps) {
  if (!in_unit_interval(zeta.beat) || !in_unit_interval(zeta.doppler))
    throw DomainError("object_steering_vector: frequency outside [-1/2, 1/2)");
  const int np = n_fast * n_ramps;
  CVec v(np);
  const double scale = 1.0 / std::sqrt(static_cast<double>(np));
  for (int p = 0; p < n_ramps; ++p) {
    const double php = -2.0 * M_PI * zeta.doppler * p;
    const cplx ep(std::cos(php) * scale, std::sin(php) * scale);
    for (int n = 0; n < n_fast; ++n) {
      const double phn = -2.0 * M_PI * zeta.beat * n;
      v(flat_index(p, n, n_fast)) = ep * cplx(std::cos(phn), std::sin(phn));
    }
  }
  return v;
}

CMat object_dictionary(const std::vector<Zeta>& zetas, int n_fast, int n_ramps) {
  CMat phi(n_fast * n_ramps, static_cast<int>(zetas.size()));
  for (size_t l = 0; l < zetas.size(); ++l)
    phi.col(static_cast<int>(l)) = object_steering_vector(zetas[l], n_fast, n_ramps);
  return phi;
}

CMat interference_grid(int grid_size_k, int n_fast) {
  if (grid_size_k < n_fast)
    throw ConfigError("interference_grid: K must be >= N");
  CMat psi(n_fast, grid_size_k);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n_fast));
  for (int k = 0; k < grid_size_k; ++k) {
    const double f = grid_freq(k, grid_size_k);
    for (int n = 0; n < n_fast; ++n) {
      const double ph = -2.0 * M_PI * f * n;
      psi(n, k) = cplx(std::cos(ph) * scale, std::sin(ph) * scale);
    }
  }
  return psi;
}

CVec envelope_matrix(const ChirpParams& theta,
                     const std::function<cplx(double)>& gbar,
                     const RampConfig& config) {
  theta.validate();
  CVec env(config.n_fast);
  const double ts = config.ts();
  for (int n = 0; n < config.n_fast; ++n) {
    const double t = ts * n;
    env(n) = chirp_phase(t, theta.delta_f0, theta.delta_k) *
             gbar(theta.delta_f0 + theta.delta_k * t);
  }
  return env;
}

CVec envelope_matrix(const ChirpParams& theta, const AafModel& aaf,
                     const RampConfig& config) {
  ChirpedAafTransfer gbar(aaf, theta.delta_k, config);
  return envelope_matrix(theta, [&gbar](double f) { return gbar(f); }, config);
}

}  // namespace vsep
