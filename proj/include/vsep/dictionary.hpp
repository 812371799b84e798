#pragma once

#include <functional>

#include "vsep/aaf.hpp"
#include "vsep/types.hpp"

namespace vsep {

// Unit-norm object basis vector, fast-time-major:
// entry(p*N + n) = exp(-j2pi*doppler*p) * exp(-j2pi*beat*n) / sqrt(P*N).
CVec object_steering_vector(const Zeta& zeta, int n_fast, int n_ramps);

// Column-stacked object dictionary Phi(zeta).
CMat object_dictionary(const std::vector<Zeta>& zetas, int n_fast, int n_ramps);

// Normalized frequency of grid column k: uniform over [-1/2, 1/2).
inline double grid_freq(int k, int grid_size_k) {
  return -0.5 + static_cast<double>(k) / grid_size_k;
}

// On-grid interference dictionary Psi: N x K, column k is the unit-norm tone
// at grid_freq(k, K). Requires K >= N.
CMat interference_grid(int grid_size_k, int n_fast);

// Diagonal of the per-ramp envelope matrix U(theta):
// entry n = u(Ts*n; delta_f0, delta_k) * gbar(delta_f0 + delta_k*Ts*n).
CVec envelope_matrix(const ChirpParams& theta,
                     const std::function<cplx(double)>& gbar,
                     const RampConfig& config);

// Convenience overload evaluating the chirp-modified transfer of `aaf` built
// for theta.delta_k (the exact, per-delta-k construction).
CVec envelope_matrix(const ChirpParams& theta, const AafModel& aaf,
                     const RampConfig& config);

}  // namespace vsep
