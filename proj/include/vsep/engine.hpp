#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "vsep/aaf.hpp"
#include "vsep/dictionary.hpp"
#include "vsep/types.hpp"

namespace vsep {

struct VsepConfig {
  double threshold_object_db = 9.0;        // T_alpha
  double threshold_interference_db = 3.0;  // T_beta
  int max_iterations = 50;
  double convergence_tol = 1e-6;  // relative objective change
  int convergence_streak = 3;     // consecutive small-change iterations
  // Admissible chirp-parameter box; zero means derive from geometry
  // (delta_f0: band edge plus sweep across the sampled window,
  //  delta_k: 0.2 * |slope_k|).
  double theta_df0_box = 0.0;
  double theta_dk_box = 0.0;
  int theta_grid_df0 = 17;  // coarse grid points per dimension
  int theta_grid_dk = 17;
  int grid_size_k = 0;  // 0 -> 2 * n_fast
  double precision_cap = 1e12;
  bool record_elbo_ledger = false;
  int envelope_dk_count = 65;  // delta_k resolution of the envelope table
  int zeta_refine_rounds = 26;
  int theta_refine_rounds = 10;
  int theta_realign_max = 256;

  void validate() const;
};

enum class EngineMode { Factorized, ObjectOnly, Joint };

struct RampPosterior {
  ChirpParams theta{};
  bool theta_initialized = false;
  std::vector<int> active;  // grid indices
  CVec beta;
  CMat cov;
  RVec gamma;
};

struct ElboRecord {
  double value = 0.0;
  bool support_changed = false;  // active sets differ from the previous record
  int iteration = 0;
};

struct PosteriorState {
  std::vector<Zeta> zetas;
  CVec alpha;
  CMat alpha_cov;
  RVec alpha_gamma;
  std::vector<RampPosterior> ramps;
  double lambda = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<ElboRecord> elbo_ledger;
  // Joint-dictionary variant only: full covariance and mean over the
  // concatenated dictionary [objects | per-ramp columns].
  CMat joint_cov;
  CVec joint_weights;

  int l_hat() const { return static_cast<int>(zetas.size()); }
  int k_hat_total() const;
  double k_hat_mean_active_ramps() const;
};

// --- formula-level operations (shared by the engine and by oracle tests) ---

struct WeightsUpdate {
  CVec mean;
  CMat cov;
};

// cov = (lambda * D^H D + Diag(gamma))^{-1}, mean = lambda * cov * D^H * r.
// Throws NumericalError when the system is not positive definite.
WeightsUpdate update_weights(const CMat& dict, const CVec& residual, double lambda,
                             const RVec& gamma);

// lambda = PN / (||r_res||^2 + trace_obj + trace_int); Jeffreys hyper-prior.
double noise_precision_formula(int frame_size, double resid_sq, double trace_obj,
                               double trace_int);

struct FastTest {
  double rho = 0.0;
  double omega_sq = 0.0;
  bool keep = false;
  double gamma = 0.0;  // valid when keep
};

// Component test against the dictionary of the *other* components and their
// covariance. `threshold` is linear; keep iff omega^2/rho > threshold
// (strict). On keep, gamma = 1/(omega^2 - rho), capped.
FastTest fast_component_test(const CMat& dict_others, const CMat& cov_others,
                             const CVec& residual, double lambda, const CVec& candidate,
                             double threshold, double precision_cap = 1e12);

// Same test evaluated from precomputed Gram products for component j of an
// active set: gram = D^H D, proj = D^H r, gamma over all active components.
FastTest fast_test_from_gram(const CMat& gram, const CVec& proj, const RVec& gamma,
                             double lambda, int j, double threshold,
                             double precision_cap = 1e12);

// Single-component refinement objective (for the component with the given
// prior precision, against the other components):
//   log c' + lambda^2 * c' * |phi^H (lambda*D*C*D^H - I) r|^2
// with c' = 1/(lambda*||phi||^2 + gamma_l - lambda^2 * phi^H D C D^H phi).
double zeta_objective(const CVec& candidate, const CMat& dict_others,
                      const CMat& cov_others, double gamma_l, double lambda,
                      const CVec& residual);

class Engine {
 public:
  Engine(const RampConfig& ramp, const AafModel& aaf_inference, VsepConfig cfg,
         EngineMode mode = EngineMode::Factorized);

  PosteriorState run(const CVec& frame) const;

  const RampConfig& ramp() const { return ramp_; }
  const VsepConfig& config() const { return cfg_; }
  EngineMode mode() const { return mode_; }
  int grid_size_k() const { return grid_k_; }
  double theta_df0_box() const { return df0_box_; }
  double theta_dk_box() const { return dk_box_; }
  const CMat& grid() const { return psi_; }

  // Envelope diagonal for theta under the inference AAF model (bilinear table).
  CVec envelope_for(const ChirpParams& theta) const;

  // Eq-58-style chirp cost for a given active set on one ramp residual.
  double theta_cost(const ChirpParams& theta, const std::vector<int>& active,
                    const RVec& gamma, double lambda, const CVec& ramp_residual) const;

  // Model mean of a posterior state under this engine's dictionaries.
  CVec object_mean(const PosteriorState& st) const;
  CVec interference_mean(const PosteriorState& st) const;

  // Evidence lower bound of a posterior state given the observed frame.
  double elbo(const PosteriorState& st, const CVec& frame) const;

 private:
  friend struct Runner;
  RampConfig ramp_;
  AafModel aaf_;
  VsepConfig cfg_;
  EngineMode mode_;
  int grid_k_ = 0;
  double df0_box_ = 0.0, dk_box_ = 0.0;
  double grid_spacing_hz_ = 0.0;
  CMat psi_;  // N x K on-grid dictionary
  std::shared_ptr<EnvelopeTable> env_table_;
};

// Entry point used by the harness: factorized variational signal separation.
PosteriorState run_vsep(const CVec& frame, const RampConfig& ramp, const AafModel& aaf,
                        const VsepConfig& cfg);

}  // namespace vsep
