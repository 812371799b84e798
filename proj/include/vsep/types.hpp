#pragma once

#include <Eigen/Dense>
#include <complex>
#include <optional>
#include <vector>

#include "vsep/errors.hpp"

namespace vsep {

using cplx = std::complex<double>;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using RVec = Eigen::VectorXd;

// Victim chirp timing and sampling geometry.
struct RampConfig {
  double f0 = 0.0;       // carrier start frequency [Hz]
  double slope_k = 0.0;  // chirp slope [Hz/s]
  double t_sw = 0.0;     // ramp duration [s]
  double t_p = 0.0;      // pulse repetition interval [s]
  int n_fast = 0;        // samples per ramp (N)
  int n_ramps = 0;       // ramp count (P)
  double f_s = 0.0;      // sampling rate [Hz]

  double ts() const { return 1.0 / f_s; }
  int frame_size() const { return n_fast * n_ramps; }

  // Throws DomainError if the geometry is inconsistent.
  void validate() const;
};

// Fast-time-major stacking: all modules use flat index = p*N + n.
inline int flat_index(int p, int n, int n_fast) { return p * n_fast + n; }

// Normalized (beat, Doppler) frequency pair, both in [-1/2, 1/2).
struct Zeta {
  double beat = 0.0;     // phi * Ts
  double doppler = 0.0;  // nu * Tp
};

inline bool in_unit_interval(double f) { return f >= -0.5 && f < 0.5; }

// Wrap any real value into [-1/2, 1/2).
double wrap_norm_freq(double f);

// One object line-spectral component.
struct ObjectComponent {
  cplx weight{0.0, 0.0};        // alpha
  double beat_freq_norm = 0.0;  // phi * Ts in [-1/2, 1/2)
  double doppler_norm = 0.0;    // nu * Tp in [-1/2, 1/2)

  Zeta zeta() const { return {beat_freq_norm, doppler_norm}; }
  void validate() const;
};

// Per-ramp interference chirp parameters theta = [delta_f0, delta_k].
struct ChirpParams {
  double delta_f0 = 0.0;  // [Hz]
  double delta_k = 0.0;   // [Hz/s]

  void validate() const;
};

// Interference burst on one ramp: chirp envelope parameters plus on-grid
// channel weights over the active delay-grid indices.
struct InterferenceBurst {
  int ramp_index = 0;
  ChirpParams chirp;
  std::vector<int> grid_indices;  // subset of [0, K-1], no duplicates
  CVec weights;                   // beta, same length as grid_indices

  void validate(int grid_size_k) const;
};

// A received frame plus (optionally) its ground-truth decomposition.
struct SignalFrame {
  CVec samples;
  std::optional<CVec> object_part;
  std::optional<CVec> interference_part;
  std::optional<CVec> noise_part;

  bool has_decomposition() const {
    return object_part && interference_part && noise_part;
  }
  // Checks parts sum to samples within 1e-12 relative (when present).
  void validate() const;
};

}  // namespace vsep
