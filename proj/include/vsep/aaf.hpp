#pragma once

#include <complex>
#include <memory>
#include <vector>

#include "vsep/types.hpp"

namespace vsep {

// Anti-aliasing filter model. The transfer function G(f) is evaluable at any
// frequency; the impulse response g(t) is available analytically for the
// raised-cosine and Butterworth variants and by quadrature for tabulated ones.
class AafModel {
 public:
  enum class Kind { AllPass, RaisedCosine, Butterworth, Tabulated };

  static AafModel all_pass();
  // Zero-phase raised cosine; G(nyquist_bw) = 1/2, transition width 2*rolloff*nyquist_bw.
  static AafModel raised_cosine(double nyquist_bw_hz, double rolloff);
  // Continuous-time lowpass Butterworth, -3 dB at cutoff_hz, causal impulse response.
  static AafModel butterworth(int order, double cutoff_hz);
  // Complex transfer samples on an ascending frequency grid; linear interpolation.
  static AafModel tabulated(std::vector<double> freq_hz, std::vector<cplx> values);

  Kind kind() const { return kind_; }
  double nyquist_bw() const { return nyquist_bw_; }
  double rolloff() const { return rolloff_; }
  int order() const { return order_; }
  double cutoff() const { return cutoff_; }
  double tabulated_max_freq() const;

  cplx transfer(double f) const;  // G(f)

  // Highest |f| with non-negligible response; used for burst/band geometry.
  // For AllPass this falls back to f_s/2 of the caller-provided rate.
  double passband_edge(double f_s_fallback) const;

  // Time window [t_begin, t_end] that contains the effective impulse support.
  void impulse_support(double& t_begin, double& t_end) const;

  // g(t0 + m*dt), m = 0..count-1. AllPass has no ordinary impulse response.
  std::vector<cplx> impulse(double t0, double dt, int count) const;

 private:
  Kind kind_ = Kind::AllPass;
  double nyquist_bw_ = 0.0;
  double rolloff_ = 0.0;
  int order_ = 0;
  double cutoff_ = 0.0;
  std::vector<double> tab_freq_;
  std::vector<cplx> tab_val_;
};

// Chirp-modified transfer function: the Fourier transform of
// g(t) * exp(j*pi*delta_k*t^2), evaluated by interpolation on a dense
// frequency table. delta_k = 0 falls back to the unmodified G(f) exactly;
// the all-pass filter stays all-pass for any delta_k.
class ChirpedAafTransfer {
 public:
  // Throws ConfigError when a tabulated AAF grid is too coarse to support a
  // 4x-oversampled (relative to f_s) time grid.
  ChirpedAafTransfer(const AafModel& aaf, double delta_k, const RampConfig& config);

  cplx operator()(double f) const;

  double delta_k() const { return delta_k_; }
  double table_max_freq() const { return f_max_; }

 private:
  friend class EnvelopeTable;
  ChirpedAafTransfer() = default;
  void build_table(const AafModel& aaf, double delta_k, double dt, int n_fft, double f_max);

  bool flat_ = false;    // all-pass
  bool direct_ = false;  // delta_k == 0: evaluate the model directly
  std::shared_ptr<AafModel> direct_model_;
  double delta_k_ = 0.0;
  double f_max_ = 0.0;
  double df_ = 0.0;
  std::vector<cplx> table_;  // ascending from -f_max_ with spacing df_
};

// Dense (f, delta_k) table of the chirp-modified transfer for fast bilinear
// evaluation inside the inference loop. All per-delta_k tables share one
// frequency grid.
class EnvelopeTable {
 public:
  EnvelopeTable(const AafModel& aaf, const RampConfig& config, double dk_min,
                double dk_max, int dk_count);

  cplx gbar(double f, double delta_k) const;

  // Diagonal of U(theta): u(Ts*n) * gbar(delta_f0 + delta_k*Ts*n).
  CVec envelope(const ChirpParams& theta, int n_fast, double ts) const;

 private:
  bool flat_ = false;
  double dk_min_ = 0.0, dk_step_ = 0.0;
  int dk_count_ = 0;
  double f_max_ = 0.0, df_ = 0.0;
  int n_f_ = 0;
  std::vector<cplx> grid_;  // row-major [dk_count_ x n_f_]
};

// Demixed chirp u(t; f0, k) = exp(j(2*pi*f0*t + pi*k*t^2)).
inline cplx chirp_phase(double t, double f0, double k) {
  const double ph = 2.0 * M_PI * f0 * t + M_PI * k * t * t;
  return {std::cos(ph), std::sin(ph)};
}

}  // namespace vsep
