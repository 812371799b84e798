#include "vsep/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vsep/fft.hpp"

namespace vsep {

namespace {

double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

double digamma(double x) {
  double acc = 0.0;
  while (x < 10.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  return acc + std::log(x) - 0.5 * inv -
         inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 / 252.0));
}

double logdet_hpd(const CMat& a, const char* what) {
  Eigen::LLT<CMat> llt(a);
  if (llt.info() != Eigen::Success) throw NumericalError(std::string(what) + ": not PD");
  double s = 0.0;
  const auto& l = llt.matrixLLT();
  for (int i = 0; i < a.rows(); ++i) s += std::log(l(i, i).real());
  return 2.0 * s;
}

RVec erase_entry(const RVec& v, int i) {
  RVec out(v.size() - 1);
  int c = 0;
  for (int j = 0; j < v.size(); ++j)
    if (j != i) out(c++) = v(j);
  return out;
}

RVec append_entry(const RVec& v, double x) {
  RVec out(v.size() + 1);
  out.head(v.size()) = v;
  out(v.size()) = x;
  return out;
}

}  // namespace

void VsepConfig::validate() const {
  if (!(threshold_object_db > 0.0) || !(threshold_interference_db > 0.0))
    throw ConfigError("VsepConfig: thresholds must be > 0 dB");
  if (threshold_object_db < threshold_interference_db)
    throw ConfigError("VsepConfig: threshold_object_db must be >= threshold_interference_db");
  if (max_iterations < 1) throw ConfigError("VsepConfig: max_iterations must be >= 1");
  if (theta_grid_df0 < 2 || theta_grid_dk < 2)
    throw ConfigError("VsepConfig: coarse theta grid needs >= 2 points per dimension");
  if (!(convergence_tol > 0.0)) throw ConfigError("VsepConfig: convergence_tol must be > 0");
}

int PosteriorState::k_hat_total() const {
  int total = 0;
  for (const auto& r : ramps) total += static_cast<int>(r.active.size());
  return total;
}

double PosteriorState::k_hat_mean_active_ramps() const {
  int total = 0, nramps = 0;
  for (const auto& r : ramps) {
    if (!r.active.empty()) {
      total += static_cast<int>(r.active.size());
      ++nramps;
    }
  }
  return nramps == 0 ? 0.0 : static_cast<double>(total) / nramps;
}

WeightsUpdate update_weights(const CMat& dict, const CVec& residual, double lambda,
                             const RVec& gamma) {
  const int m = static_cast<int>(dict.cols());
  WeightsUpdate out;
  if (m == 0) {
    out.mean = CVec(0);
    out.cov = CMat(0, 0);
    return out;
  }
  CMat a = lambda * (dict.adjoint() * dict);
  a.diagonal().real() += gamma;
  Eigen::LLT<CMat> llt(a);
  if (llt.info() != Eigen::Success)
    throw NumericalError("update_weights: precision matrix not positive definite");
  out.cov = llt.solve(CMat::Identity(m, m));
  out.mean = lambda * (out.cov * (dict.adjoint() * residual));
  return out;
}

double noise_precision_formula(int frame_size, double resid_sq, double trace_obj,
                               double trace_int) {
  const double denom = resid_sq + trace_obj + trace_int;
  if (!(denom > 0.0))
    throw NumericalError("noise precision update: degenerate exact fit (zero denominator)");
  return static_cast<double>(frame_size) / denom;
}

namespace {

FastTest finish_fast_test(double denom, cplx s, double threshold, double precision_cap) {
  FastTest out;
  if (!(denom > 0.0)) {
    // Candidate numerically inside the span of the others.
    out.rho = std::numeric_limits<double>::infinity();
    out.omega_sq = 0.0;
    out.keep = false;
    return out;
  }
  out.rho = 1.0 / denom;
  out.omega_sq = out.rho * out.rho * std::norm(s);
  out.keep = (out.omega_sq / out.rho > threshold);
  if (out.keep) {
    const double gap = out.omega_sq - out.rho;
    if (!(gap > 0.0))
      throw NumericalError("fast component test: omega^2 <= rho for a kept component");
    out.gamma = std::min(1.0 / gap, precision_cap);
  }
  return out;
}

}  // namespace

FastTest fast_component_test(const CMat& dict_others, const CMat& cov_others,
                             const CVec& residual, double lambda, const CVec& candidate,
                             double threshold, double precision_cap) {
  const int m = static_cast<int>(dict_others.cols());
  double denom;
  cplx s;
  if (m == 0) {
    denom = lambda * candidate.squaredNorm();
    s = lambda * candidate.dot(residual);
  } else {
    const CVec g = dict_others.adjoint() * candidate;  // D^H phi
    denom = lambda * candidate.squaredNorm() - lambda * lambda * g.dot(cov_others * g).real();
    const CVec proj = dict_others.adjoint() * residual;
    s = lambda * candidate.dot(residual) - lambda * lambda * g.dot(cov_others * proj);
  }
  return finish_fast_test(denom, s, threshold, precision_cap);
}

FastTest fast_test_from_gram(const CMat& gram, const CVec& proj, const RVec& gamma,
                             double lambda, int j, double threshold, double precision_cap) {
  const int m = static_cast<int>(gram.rows());
  const int mo = m - 1;
  if (mo == 0) {
    const double denom = lambda * gram(j, j).real();
    const cplx s = lambda * proj(j);
    return finish_fast_test(denom, s, threshold, precision_cap);
  }
  CMat gram_o(mo, mo);
  CVec g(mo), proj_o(mo);
  RVec gamma_o(mo);
  int r = 0;
  for (int i = 0; i < m; ++i) {
    if (i == j) continue;
    int c = 0;
    for (int k = 0; k < m; ++k) {
      if (k == j) continue;
      gram_o(r, c++) = gram(i, k);
    }
    g(r) = gram(i, j);
    proj_o(r) = proj(i);
    gamma_o(r) = gamma(i);
    ++r;
  }
  CMat a = lambda * gram_o;
  a.diagonal().real() += gamma_o;
  Eigen::LLT<CMat> llt(a);
  if (llt.info() != Eigen::Success)
    throw NumericalError("fast_test_from_gram: reduced system not positive definite");
  const double denom = lambda * gram(j, j).real() - lambda * lambda * g.dot(llt.solve(g)).real();
  const cplx s = lambda * proj(j) - lambda * lambda * g.dot(llt.solve(proj_o));
  return finish_fast_test(denom, s, threshold, precision_cap);
}

double zeta_objective(const CVec& candidate, const CMat& dict_others,
                      const CMat& cov_others, double gamma_l, double lambda,
                      const CVec& residual) {
  const int m = static_cast<int>(dict_others.cols());
  double quad = 0.0;
  cplx s;
  if (m == 0) {
    s = -candidate.dot(residual);
  } else {
    const CVec g = dict_others.adjoint() * candidate;
    quad = g.dot(cov_others * g).real();
    const CVec h = dict_others * (cov_others * (dict_others.adjoint() * residual));
    s = lambda * candidate.dot(h) - candidate.dot(residual);
  }
  const double cinv = lambda * candidate.squaredNorm() + gamma_l - lambda * lambda * quad;
  if (!(cinv > 0.0)) return -std::numeric_limits<double>::infinity();
  const double cp = 1.0 / cinv;
  return std::log(cp) + lambda * lambda * cp * std::norm(s);
}

Engine::Engine(const RampConfig& ramp, const AafModel& aaf_inference, VsepConfig cfg,
               EngineMode mode)
    : ramp_(ramp), aaf_(aaf_inference), cfg_(cfg), mode_(mode) {
  ramp_.validate();
  cfg_.validate();
  grid_k_ = cfg_.grid_size_k > 0 ? cfg_.grid_size_k : 2 * ramp_.n_fast;
  if (grid_k_ < ramp_.n_fast) throw ConfigError("Engine: grid size K must be >= N");
  dk_box_ = cfg_.theta_dk_box > 0.0 ? cfg_.theta_dk_box : 0.2 * std::abs(ramp_.slope_k);
  if (!(dk_box_ > 0.0)) dk_box_ = 1.0;
  const double sweep = dk_box_ * ramp_.n_fast * ramp_.ts();
  df0_box_ = cfg_.theta_df0_box > 0.0 ? cfg_.theta_df0_box : 0.65 * ramp_.f_s + sweep;
  grid_spacing_hz_ = ramp_.f_s / grid_k_;
  psi_ = interference_grid(grid_k_, ramp_.n_fast);
  env_table_ = std::make_shared<EnvelopeTable>(aaf_, ramp_, -dk_box_, dk_box_,
                                               std::max(2, cfg_.envelope_dk_count));
}

CVec Engine::envelope_for(const ChirpParams& theta) const {
  return env_table_->envelope(theta, ramp_.n_fast, ramp_.ts());
}

double Engine::theta_cost(const ChirpParams& theta, const std::vector<int>& active,
                          const RVec& gamma, double lambda, const CVec& ramp_residual) const {
  const int kh = static_cast<int>(active.size());
  if (kh == 0) return 0.0;
  const CVec env = envelope_for(theta);
  CMat benv(ramp_.n_fast, kh);
  for (int j = 0; j < kh; ++j)
    benv.col(j) = env.cwiseProduct(psi_.col(active[static_cast<size_t>(j)]));
  CMat a = lambda * (benv.adjoint() * benv);
  a.diagonal().real() += gamma;
  Eigen::LLT<CMat> llt(a);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  double ld = 0.0;
  const auto& l = llt.matrixLLT();
  for (int i = 0; i < kh; ++i) ld += std::log(l(i, i).real());
  const CVec v = benv.adjoint() * ramp_residual;
  const double quad = v.dot(llt.solve(v)).real();
  return -2.0 * ld + lambda * lambda * quad;
}

CVec Engine::object_mean(const PosteriorState& st) const {
  CVec out = CVec::Zero(ramp_.frame_size());
  for (size_t l = 0; l < st.zetas.size(); ++l)
    out += st.alpha(static_cast<int>(l)) *
           object_steering_vector(st.zetas[l], ramp_.n_fast, ramp_.n_ramps);
  return out;
}

CVec Engine::interference_mean(const PosteriorState& st) const {
  CVec out = CVec::Zero(ramp_.frame_size());
  const int n = ramp_.n_fast;
  for (size_t p = 0; p < st.ramps.size(); ++p) {
    const auto& rp = st.ramps[p];
    if (rp.active.empty()) continue;
    const CVec env = envelope_for(rp.theta);
    CVec seg = CVec::Zero(n);
    for (size_t j = 0; j < rp.active.size(); ++j)
      seg += rp.beta(static_cast<int>(j)) * psi_.col(rp.active[j]);
    out.segment(static_cast<int>(p) * n, n) = env.cwiseProduct(seg);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Runner: mutable state of one inference run.
// ---------------------------------------------------------------------------

namespace {

struct RampWork {
  ChirpParams theta{};
  bool theta_init = false;
  double last_detect_energy = -1.0;
  std::vector<int> active;
  CVec beta;
  CMat cov;
  RVec gamma;
  CVec env;
  double env_sq = 0.0;
  CMat eff;  // N x |active|
  double df0_step = 0.0, dk_step = 0.0;
  int realign_range = 0;
};

struct Runner {
  const Engine& E;
  const RampConfig& ramp;
  const VsepConfig& cfg;
  CVec r;
  int N, P, NP, K;
  double T_alpha, T_beta;
  double lambda = 0.0;
  bool joint = false;

  std::vector<Zeta> zetas;
  CMat phi;  // NP x L
  CVec alpha;
  CMat alpha_cov;
  RVec alpha_gamma;

  std::vector<RampWork> ramps;

  // Joint-variant posterior over the concatenated dictionary.
  CMat joint_cov;
  CVec joint_mean;

  std::vector<ElboRecord> ledger;
  bool support_dirty = false;
  int cur_iter = 0;

  Runner(const Engine& e, const CVec& frame)
      : E(e), ramp(e.ramp()), cfg(e.config()), r(frame) {
    N = ramp.n_fast;
    P = ramp.n_ramps;
    NP = N * P;
    K = e.grid_size_k();
    T_alpha = db_to_linear(cfg.threshold_object_db);
    T_beta = db_to_linear(cfg.threshold_interference_db);
    joint = (e.mode() == EngineMode::Joint);
    phi.resize(NP, 0);
    alpha.resize(0);
    alpha_cov.resize(0, 0);
    alpha_gamma.resize(0);
    ramps.resize(static_cast<size_t>(P));
    for (auto& w : ramps) {
      w.env = CVec::Ones(N);
      w.env_sq = 1.0;
      w.beta.resize(0);
      w.cov.resize(0, 0);
      w.gamma.resize(0);
      w.eff.resize(N, 0);
    }
  }

  int l_hat() const { return static_cast<int>(zetas.size()); }

  // ----- joint bookkeeping -----

  int joint_size() const {
    int m = l_hat();
    for (const auto& w : ramps) m += static_cast<int>(w.active.size());
    return m;
  }

  int joint_offset(int p) const {
    int off = l_hat();
    for (int q = 0; q < p; ++q) off += static_cast<int>(ramps[static_cast<size_t>(q)].active.size());
    return off;
  }

  CMat joint_dict() const {
    CMat d = CMat::Zero(NP, joint_size());
    d.leftCols(phi.cols()) = phi;
    int c = l_hat();
    for (int p = 0; p < P; ++p) {
      const RampWork& w = ramps[static_cast<size_t>(p)];
      for (int j = 0; j < static_cast<int>(w.active.size()); ++j)
        d.col(c++).segment(p * N, N) = w.eff.col(j);
    }
    return d;
  }

  RVec joint_gamma() const {
    RVec g(joint_size());
    g.head(alpha_gamma.size()) = alpha_gamma;
    int c = l_hat();
    for (const auto& w : ramps) {
      g.segment(c, w.gamma.size()) = w.gamma;
      c += static_cast<int>(w.gamma.size());
    }
    return g;
  }

  // Recompute the joint posterior and distribute marginal blocks.
  void joint_refresh() {
    const CMat d = joint_dict();
    const WeightsUpdate up = update_weights(d, r, lambda, joint_gamma());
    joint_mean = up.mean;
    joint_cov = up.cov;
    const int lh = l_hat();
    alpha = joint_mean.head(lh);
    alpha_cov = joint_cov.topLeftCorner(lh, lh);
    int c = lh;
    for (auto& w : ramps) {
      const int kh = static_cast<int>(w.active.size());
      w.beta = joint_mean.segment(c, kh);
      w.cov = joint_cov.block(c, c, kh, kh);
      c += kh;
    }
  }

  // Others-view of the joint dictionary without global column j.
  void joint_others(int j, CMat& dict_o, CMat& cov_o) const {
    const CMat d = joint_dict();
    const RVec g = joint_gamma();
    const int m = static_cast<int>(d.cols());
    dict_o.resize(NP, m - 1);
    RVec g_o(m - 1);
    int c = 0;
    for (int i = 0; i < m; ++i) {
      if (i == j) continue;
      dict_o.col(c) = d.col(i);
      g_o(c) = g(i);
      ++c;
    }
    cov_o = update_weights(dict_o, r, lambda, g_o).cov;
  }

  // ----- means and residuals -----

  CVec object_mean_live() const {
    CVec out = CVec::Zero(NP);
    for (int l = 0; l < l_hat(); ++l) out += alpha(l) * phi.col(l);
    return out;
  }

  CVec interference_mean_live() const {
    CVec out = CVec::Zero(NP);
    if (E.mode() == EngineMode::ObjectOnly) return out;
    for (int p = 0; p < P; ++p) {
      const RampWork& w = ramps[static_cast<size_t>(p)];
      if (!w.active.empty()) out.segment(p * N, N) = w.eff * w.beta;
    }
    return out;
  }

  // ----- snapshots, ledger -----

  PosteriorState make_state() const {
    PosteriorState st;
    st.zetas = zetas;
    st.alpha = alpha;
    st.alpha_cov = alpha_cov;
    st.alpha_gamma = alpha_gamma;
    st.ramps.resize(static_cast<size_t>(P));
    for (int p = 0; p < P; ++p) {
      const RampWork& w = ramps[static_cast<size_t>(p)];
      auto& rp = st.ramps[static_cast<size_t>(p)];
      rp.theta = w.theta;
      rp.theta_initialized = w.theta_init;
      rp.active = w.active;
      rp.beta = w.beta;
      rp.cov = w.cov;
      rp.gamma = w.gamma;
    }
    st.lambda = lambda;
    if (joint) {
      st.joint_cov = joint_cov;
      st.joint_weights = joint_mean;
    }
    return st;
  }

  double elbo_live() const { return E.elbo(make_state(), r); }

  void record() {
    if (!cfg.record_elbo_ledger) return;
    ledger.push_back({elbo_live(), support_dirty, cur_iter});
    support_dirty = false;
  }

  // ----- per-ramp helpers -----

  void set_env(RampWork& w, const ChirpParams& theta) {
    w.theta = theta;
    w.env = E.envelope_for(theta);
    w.env_sq = w.env.squaredNorm() / N;
  }

  void rebuild_eff(RampWork& w) {
    const int kh = static_cast<int>(w.active.size());
    w.eff.resize(N, kh);
    for (int j = 0; j < kh; ++j)
      w.eff.col(j) = w.env.cwiseProduct(E.grid().col(w.active[static_cast<size_t>(j)]));
  }

  void rebuild_ramp(RampWork& w, const CVec& seg) {
    rebuild_eff(w);
    if (joint) {
      joint_refresh();
      return;
    }
    const WeightsUpdate up = update_weights(w.eff, seg, lambda, w.gamma);
    w.beta = up.mean;
    w.cov = up.cov;
  }

  void refresh_object(const CVec& resid) {
    if (joint) {
      joint_refresh();
      return;
    }
    const WeightsUpdate up = update_weights(phi, resid, lambda, alpha_gamma);
    alpha = up.mean;
    alpha_cov = up.cov;
  }

  // ----- chirp parameter estimation -----

  double detect_score(const ChirpParams& theta, const CVec& seg) const {
    const CVec env = E.envelope_for(theta);
    const double esq = env.squaredNorm() / N;
    if (!(esq > 1e-30)) return 0.0;
    const CVec a = E.grid().adjoint() * env.conjugate().cwiseProduct(seg);
    return a.cwiseAbs2().maxCoeff() / esq;
  }

  void coarse_detect(RampWork& w, const CVec& seg) {
    const double energy = seg.squaredNorm();
    if (w.theta_init && w.last_detect_energy > 0.0 &&
        energy < 2.0 * w.last_detect_energy && energy > 0.5 * w.last_detect_energy)
      return;
    w.last_detect_energy = energy;
    const int nf = cfg.theta_grid_df0, nk = cfg.theta_grid_dk;
    double best = -1.0;
    ChirpParams best_theta{0.0, 0.0};
    for (int i = 0; i < nf; ++i) {
      const double df0 = -E.theta_df0_box() + 2.0 * E.theta_df0_box() * i / (nf - 1);
      for (int j = 0; j < nk; ++j) {
        const double dk = -E.theta_dk_box() + 2.0 * E.theta_dk_box() * j / (nk - 1);
        const double s = detect_score({df0, dk}, seg);
        if (s > best) {
          best = s;
          best_theta = {df0, dk};
        }
      }
    }
    set_env(w, best_theta);
    w.theta_init = true;
    w.df0_step = 0.5 * ramp.f_s / K;
    w.dk_step = E.theta_dk_box() / (nk - 1);
    const double spacing = 2.0 * E.theta_df0_box() / (nf - 1);
    w.realign_range =
        std::min(cfg.theta_realign_max,
                 static_cast<int>(std::ceil(0.5 * spacing / (ramp.f_s / K))) + 2);
    rebuild_eff(w);
  }

  void refine_theta(RampWork& w, const CVec& seg) {
    if (w.active.empty()) return;
    const double sp = ramp.f_s / K;
    double cur = E.theta_cost(w.theta, w.active, w.gamma, lambda, seg);
    bool changed = false;

    double sf = std::clamp(w.df0_step * 4.0, sp / 8.0, 4.0 * sp);
    double sk = std::clamp(w.dk_step * 4.0, E.theta_dk_box() * 1e-7,
                           E.theta_dk_box() / (cfg.theta_grid_dk - 1));
    for (int round = 0; round < cfg.theta_refine_rounds; ++round) {
      const ChirpParams cand[4] = {{w.theta.delta_f0 + sf, w.theta.delta_k},
                                   {w.theta.delta_f0 - sf, w.theta.delta_k},
                                   {w.theta.delta_f0, w.theta.delta_k + sk},
                                   {w.theta.delta_f0, w.theta.delta_k - sk}};
      double best_val = cur;
      int best_i = -1;
      for (int i = 0; i < 4; ++i) {
        if (std::abs(cand[i].delta_f0) > E.theta_df0_box() ||
            std::abs(cand[i].delta_k) > E.theta_dk_box())
          continue;
        const double v = E.theta_cost(cand[i], w.active, w.gamma, lambda, seg);
        if (v > best_val) {
          best_val = v;
          best_i = i;
        }
      }
      if (best_i >= 0) {
        w.theta = cand[best_i];
        cur = best_val;
        changed = true;
      } else {
        sf *= 0.5;
        sk *= 0.5;
      }
    }
    w.df0_step = sf;
    w.dk_step = sk;

    // The model is nearly invariant under a joint shift of delta_f0 by one
    // grid spacing and of all active indices by one; scan the shift that best
    // places the envelope window.
    const int range = std::max(1, w.realign_range);
    int best_m = 0;
    double best_val = cur;
    for (int m = -range; m <= range; ++m) {
      if (m == 0) continue;
      const double df0 = w.theta.delta_f0 + m * sp;
      if (std::abs(df0) > E.theta_df0_box()) continue;
      std::vector<int> shifted(w.active.size());
      bool ok = true;
      for (size_t j = 0; j < w.active.size(); ++j) {
        const int idx = w.active[j] + m;
        if (idx < 0 || idx >= K) {
          ok = false;
          break;
        }
        shifted[j] = idx;
      }
      if (!ok) continue;
      const double v = E.theta_cost({df0, w.theta.delta_k}, shifted, w.gamma, lambda, seg);
      if (v > best_val) {
        best_val = v;
        best_m = m;
      }
    }
    if (best_m != 0) {
      w.theta.delta_f0 += best_m * sp;
      for (auto& idx : w.active) idx += best_m;
      changed = true;
      support_dirty = true;
    }
    w.realign_range = 4;

    if (changed) {
      set_env(w, w.theta);
      rebuild_ramp(w, seg);
      record();
    }
  }

  // ----- interference subroutine -----

  struct CandidateStats {
    int index = -1;
    double rho = 0.0, omega_sq = 0.0, ratio = -1.0;
  };

  // Factorized variant: best passive grid column against this ramp's active set.
  CandidateStats best_passive_candidate(const RampWork& w, const CVec& seg) const {
    CandidateStats out;
    const int kh = static_cast<int>(w.active.size());
    if (kh >= K) return out;
    const CVec a = E.grid().adjoint() * w.env.conjugate().cwiseProduct(seg);
    CMat gx, tm;
    CVec h;
    if (kh > 0) {
      gx = E.grid().adjoint() * (w.env.conjugate().asDiagonal() * w.eff);  // K x kh
      tm = gx * w.cov;
      h = w.cov * (w.eff.adjoint() * seg);
    }
    std::vector<char> is_active(static_cast<size_t>(K), 0);
    for (int idx : w.active) is_active[static_cast<size_t>(idx)] = 1;
    for (int k = 0; k < K; ++k) {
      if (is_active[static_cast<size_t>(k)]) continue;
      double quad = 0.0;
      cplx cross(0.0, 0.0);
      for (int j = 0; j < kh; ++j) {
        quad += (tm(k, j) * std::conj(gx(k, j))).real();
        cross += gx(k, j) * h(j);
      }
      const double denom = lambda * w.env_sq - lambda * lambda * quad;
      if (!(denom > 0.0)) continue;
      const cplx s = lambda * a(k) - lambda * lambda * cross;
      const double ratio = std::norm(s) / denom;
      if (ratio > out.ratio) {
        out.index = k;
        out.ratio = ratio;
        out.rho = 1.0 / denom;
        out.omega_sq = std::norm(s) / (denom * denom);
      }
    }
    return out;
  }

  // Joint variant: candidate tested against the full concatenated dictionary.
  CandidateStats best_passive_candidate_joint(int p, const RampWork& w) const {
    CandidateStats out;
    const int kh = static_cast<int>(w.active.size());
    if (kh >= K) return out;
    const CVec seg = r.segment(p * N, N);
    const CVec a = E.grid().adjoint() * w.env.conjugate().cwiseProduct(seg);
    const int lh = l_hat();
    const int m = joint_size();
    const int off = joint_offset(p);
    const int ms = lh + kh;

    CMat gsub(K, ms);  // candidate^H [object cols | own-ramp cols]
    if (lh > 0)
      gsub.leftCols(lh) =
          E.grid().adjoint() *
          (w.env.conjugate().asDiagonal() * phi.middleRows(p * N, N));
    if (kh > 0)
      gsub.rightCols(kh) =
          E.grid().adjoint() * (w.env.conjugate().asDiagonal() * w.eff);

    // Covariance restricted to the sub-block, and C * (D^H r) restricted too.
    std::vector<int> sub(static_cast<size_t>(ms));
    for (int i = 0; i < lh; ++i) sub[static_cast<size_t>(i)] = i;
    for (int j = 0; j < kh; ++j) sub[static_cast<size_t>(lh + j)] = off + j;
    CMat csub(ms, ms);
    for (int i = 0; i < ms; ++i)
      for (int j = 0; j < ms; ++j)
        csub(i, j) = (m > 0) ? joint_cov(sub[static_cast<size_t>(i)], sub[static_cast<size_t>(j)])
                             : cplx(0.0, 0.0);
    CVec cproj_sub(ms);
    if (m > 0) {
      const CMat d = joint_dict();
      const CVec cproj = joint_cov * (d.adjoint() * r);
      for (int i = 0; i < ms; ++i) cproj_sub(i) = cproj(sub[static_cast<size_t>(i)]);
    } else {
      cproj_sub.setZero();
    }

    std::vector<char> is_active(static_cast<size_t>(K), 0);
    for (int idx : w.active) is_active[static_cast<size_t>(idx)] = 1;
    for (int k = 0; k < K; ++k) {
      if (is_active[static_cast<size_t>(k)]) continue;
      double quad = 0.0;
      cplx cross(0.0, 0.0);
      if (ms > 0) {
        const auto g = gsub.row(k);
        quad = (g * csub * g.adjoint())(0, 0).real();
        cross = (g * cproj_sub)(0);
      }
      const double denom = lambda * w.env_sq - lambda * lambda * quad;
      if (!(denom > 0.0)) continue;
      const cplx s = lambda * a(k) - lambda * lambda * cross;
      const double ratio = std::norm(s) / denom;
      if (ratio > out.ratio) {
        out.index = k;
        out.ratio = ratio;
        out.rho = 1.0 / denom;
        out.omega_sq = std::norm(s) / (denom * denom);
      }
    }
    return out;
  }

  void add_interference_component(RampWork& w, const CVec& seg, int index, double gamma) {
    w.active.push_back(index);
    w.gamma = append_entry(w.gamma, gamma);
    rebuild_ramp(w, seg);
    support_dirty = true;
    record();
  }

  void prune_interference_component(RampWork& w, const CVec& seg, int i) {
    w.active.erase(w.active.begin() + i);
    w.gamma = erase_entry(w.gamma, i);
    rebuild_ramp(w, seg);
    support_dirty = true;
    record();
  }

  void alg2(int p, RampWork& w, const CVec& seg) {
    // Find one possible new component.
    const CandidateStats cand =
        joint ? best_passive_candidate_joint(p, w) : best_passive_candidate(w, seg);
    if (cand.index >= 0 && cand.ratio > T_beta) {
      const double gap = cand.omega_sq - cand.rho;
      if (!(gap > 0.0))
        throw NumericalError("interference add: omega^2 <= rho for kept component");
      add_interference_component(w, seg, cand.index, std::min(1.0 / gap, cfg.precision_cap));
    }
    // Re-test and update every active component.
    if (joint) {
      int i = 0;
      while (i < static_cast<int>(w.active.size())) {
        const int ji = joint_offset(p) + i;
        CMat dict_o, cov_o;
        joint_others(ji, dict_o, cov_o);
        CVec col = CVec::Zero(NP);
        col.segment(p * N, N) = w.eff.col(i);
        const FastTest ft =
            fast_component_test(dict_o, cov_o, r, lambda, col, T_beta, cfg.precision_cap);
        if (ft.keep) {
          w.gamma(i) = ft.gamma;
          joint_refresh();
          record();
          ++i;
        } else {
          prune_interference_component(w, seg, i);
        }
      }
      return;
    }
    CMat gram = w.eff.adjoint() * w.eff;
    CVec proj = w.eff.adjoint() * seg;
    int i = 0;
    while (i < static_cast<int>(w.active.size())) {
      const FastTest ft =
          fast_test_from_gram(gram, proj, w.gamma, lambda, i, T_beta, cfg.precision_cap);
      if (ft.keep) {
        w.gamma(i) = ft.gamma;
        CMat a = lambda * gram;
        a.diagonal().real() += w.gamma;
        Eigen::LLT<CMat> llt(a);
        if (llt.info() != Eigen::Success)
          throw NumericalError("interference update: precision matrix not PD");
        w.cov = llt.solve(CMat::Identity(gram.rows(), gram.cols()));
        w.beta = lambda * (w.cov * proj);
        record();
        ++i;
      } else {
        // Drop row/column i from the cached products and rebuild.
        const int m = static_cast<int>(gram.rows());
        CMat gram2(m - 1, m - 1);
        CVec proj2(m - 1);
        int rr = 0;
        for (int x = 0; x < m; ++x) {
          if (x == i) continue;
          int cc = 0;
          for (int y = 0; y < m; ++y) {
            if (y == i) continue;
            gram2(rr, cc++) = gram(x, y);
          }
          proj2(rr) = proj(x);
          ++rr;
        }
        gram = gram2;
        proj = proj2;
        prune_interference_component(w, seg, i);
      }
    }
  }

  void interference_stage() {
    const CVec r_beta = joint ? r : CVec(r - object_mean_live());
    for (int p = 0; p < P; ++p) {
      RampWork& w = ramps[static_cast<size_t>(p)];
      // Joint variant: the chirp cost consumes the object-cancelled segment.
      const CVec seg = joint
                           ? CVec(r.segment(p * N, N) -
                                  object_mean_live().segment(p * N, N))
                           : CVec(r_beta.segment(p * N, N));
      if (w.active.empty())
        coarse_detect(w, seg);
      else
        refine_theta(w, seg);
      alg2(p, w, seg);
      if (!w.active.empty()) refine_theta(w, seg);
    }
  }

  // ----- object subroutine -----

  Zeta dft_peak(const CVec& q) const {
    const int on = 4 * N;
    const int op = (P == 1) ? 1 : 4 * P;
    std::vector<cplx> buf(static_cast<size_t>(on) * op, cplx(0.0, 0.0));
    for (int p = 0; p < P; ++p)
      for (int n = 0; n < N; ++n) buf[static_cast<size_t>(p) * on + n] = q(p * N + n);
    const std::vector<cplx> spec = (op == 1) ? fft(buf, +1) : fft2(buf, op, on, +1);
    double best = -1.0;
    int bi = 0;
    for (size_t i = 0; i < spec.size(); ++i) {
      const double m = std::norm(spec[i]);
      if (m > best) {
        best = m;
        bi = static_cast<int>(i);
      }
    }
    const int bp = bi / on, bn = bi % on;
    Zeta z;
    z.beat = wrap_norm_freq(static_cast<double>(bn) / on);
    z.doppler = (op == 1) ? 0.0 : wrap_norm_freq(static_cast<double>(bp) / op);
    return z;
  }

  Zeta refine_zeta(const Zeta& seed, const CMat& dict_others, const CMat& cov_others,
                   double gamma_l, const CVec& resid) const {
    CVec wvec;
    if (dict_others.cols() > 0) {
      const CVec h = dict_others * (cov_others * (dict_others.adjoint() * resid));
      wvec = lambda * h - resid;
    } else {
      wvec = -resid;
    }
    auto objective = [&](const Zeta& z) -> double {
      const CVec c = object_steering_vector(z, N, P);
      double quad = 0.0;
      if (dict_others.cols() > 0) {
        const CVec g = dict_others.adjoint() * c;
        quad = g.dot(cov_others * g).real();
      }
      const double cinv = lambda + gamma_l - lambda * lambda * quad;
      if (!(cinv > 0.0)) return -std::numeric_limits<double>::infinity();
      const double cp = 1.0 / cinv;
      return std::log(cp) + lambda * lambda * cp * std::norm(c.dot(wvec));
    };

    Zeta cur = seed;
    double cur_val = objective(cur);
    double sb = 1.0 / (8.0 * N);
    double sd = 1.0 / (8.0 * P);
    for (int round = 0; round < cfg.zeta_refine_rounds; ++round) {
      const int ncand = (P == 1) ? 2 : 4;
      Zeta cand[4];
      cand[0] = {wrap_norm_freq(cur.beat + sb), cur.doppler};
      cand[1] = {wrap_norm_freq(cur.beat - sb), cur.doppler};
      if (P > 1) {
        cand[2] = {cur.beat, wrap_norm_freq(cur.doppler + sd)};
        cand[3] = {cur.beat, wrap_norm_freq(cur.doppler - sd)};
      }
      double best_val = cur_val;
      Zeta best = cur;
      for (int i = 0; i < ncand; ++i) {
        const double v = objective(cand[i]);
        if (v > best_val) {
          best_val = v;
          best = cand[i];
        }
      }
      if (best_val > cur_val) {
        cur = best;
        cur_val = best_val;
      } else {
        sb *= 0.5;
        sd *= 0.5;
        if (sb < 1e-9 && sd < 1e-9) break;
      }
    }
    return cur;
  }

  // Dictionary and covariance of all object components except l (factorized),
  // or of all joint components except object column l (joint).
  void object_others(int l, const CVec& resid, CMat& dict_o, CMat& cov_o) const {
    if (joint) {
      joint_others(l, dict_o, cov_o);
      return;
    }
    const int m = l_hat();
    dict_o.resize(NP, m - 1);
    RVec gamma_o(m - 1);
    int c = 0;
    for (int j = 0; j < m; ++j) {
      if (j == l) continue;
      dict_o.col(c) = phi.col(j);
      gamma_o(c) = alpha_gamma(j);
      ++c;
    }
    cov_o = update_weights(dict_o, resid, lambda, gamma_o).cov;
  }

  void add_object_component(const Zeta& z, const CVec& col, double gamma, const CVec& resid) {
    zetas.push_back(z);
    phi.conservativeResize(Eigen::NoChange, phi.cols() + 1);
    phi.col(phi.cols() - 1) = col;
    alpha_gamma = append_entry(alpha_gamma, gamma);
    refresh_object(resid);
    support_dirty = true;
    record();
  }

  void prune_object_component(int i, const CVec& resid) {
    zetas.erase(zetas.begin() + i);
    CMat phi2(NP, phi.cols() - 1);
    int c = 0;
    for (int j = 0; j < phi.cols(); ++j) {
      if (j == i) continue;
      phi2.col(c++) = phi.col(j);
    }
    phi = phi2;
    alpha_gamma = erase_entry(alpha_gamma, i);
    refresh_object(resid);
    support_dirty = true;
    record();
  }

  void object_stage() {
    const CVec r_alpha = joint ? r : CVec(r - interference_mean_live());
    refresh_object(r_alpha);
    record();

    // Propose one new component from the residual spectrum peak.
    const CVec q = joint ? CVec(r - joint_model_mean()) : CVec(r_alpha - object_mean_live());
    if (q.squaredNorm() > 0.0) {
      const Zeta seed = dft_peak(q);
      CMat dict_all = joint ? joint_dict() : phi;
      CMat cov_all = joint ? joint_cov : alpha_cov;
      const Zeta z = refine_zeta(seed, dict_all, cov_all, 0.0, r_alpha);
      const CVec col = object_steering_vector(z, N, P);
      const FastTest ft = fast_component_test(dict_all, cov_all, r_alpha, lambda, col,
                                              T_alpha, cfg.precision_cap);
      if (ft.keep) add_object_component(z, col, ft.gamma, r_alpha);
    }

    // Refine, re-test, and update every existing component.
    int i = 0;
    while (i < l_hat()) {
      CMat dict_o, cov_o;
      if (!joint && l_hat() == 1) {
        dict_o.resize(NP, 0);
        cov_o.resize(0, 0);
      } else {
        object_others(i, r_alpha, dict_o, cov_o);
      }
      const Zeta z = refine_zeta(zetas[static_cast<size_t>(i)], dict_o, cov_o,
                                 alpha_gamma(i), r_alpha);
      zetas[static_cast<size_t>(i)] = z;
      phi.col(i) = object_steering_vector(z, N, P);
      refresh_object(r_alpha);
      record();

      const FastTest ft = fast_component_test(dict_o, cov_o, r_alpha, lambda, phi.col(i),
                                              T_alpha, cfg.precision_cap);
      if (ft.keep) {
        alpha_gamma(i) = ft.gamma;
        refresh_object(r_alpha);
        record();
        ++i;
      } else {
        prune_object_component(i, r_alpha);
      }
    }
  }

  CVec joint_model_mean() const {
    if (joint_size() == 0) return CVec::Zero(NP);
    return joint_dict() * joint_mean;
  }

  // ----- noise precision, final refresh, main loop -----

  void update_lambda() {
    double resid_sq, trace_obj = 0.0, trace_int = 0.0;
    if (joint) {
      resid_sq = (r - joint_model_mean()).squaredNorm();
      if (joint_size() > 0) {
        const CMat d = joint_dict();
        trace_obj = ((d.adjoint() * d) * joint_cov).trace().real();
      }
    } else {
      const CVec model = object_mean_live() + interference_mean_live();
      resid_sq = (r - model).squaredNorm();
      if (phi.cols() > 0) trace_obj = ((phi.adjoint() * phi) * alpha_cov).trace().real();
      for (const auto& w : ramps)
        if (!w.active.empty())
          trace_int += ((w.eff.adjoint() * w.eff) * w.cov).trace().real();
    }
    lambda = noise_precision_formula(NP, resid_sq, trace_obj, trace_int);
  }

  void final_refresh() {
    if (joint) {
      joint_refresh();
      record();
      return;
    }
    if (E.mode() == EngineMode::ObjectOnly) return;
    const CVec r_beta = r - object_mean_live();
    for (int p = 0; p < P; ++p) {
      RampWork& w = ramps[static_cast<size_t>(p)];
      if (w.active.empty()) continue;
      const WeightsUpdate up =
          update_weights(w.eff, r_beta.segment(p * N, N), lambda, w.gamma);
      w.beta = up.mean;
      w.cov = up.cov;
    }
    record();
  }

  PosteriorState run() {
    for (int i = 0; i < r.size(); ++i)
      if (!std::isfinite(r(i).real()) || !std::isfinite(r(i).imag()))
        throw InputError("run_vsep: non-finite input samples");
    const double r_sq = r.squaredNorm();
    if (r_sq <= 0.0) {
      PosteriorState st;
      st.ramps.resize(static_cast<size_t>(P));
      st.converged = true;
      return st;
    }
    lambda = 2.0 * (NP - 1) / r_sq;

    double prev_elbo = -std::numeric_limits<double>::infinity();
    int streak = 0;
    bool converged = false;
    int iters = 0;
    for (int it = 1; it <= cfg.max_iterations; ++it) {
      cur_iter = it;
      iters = it;
      if (E.mode() != EngineMode::ObjectOnly) interference_stage();
      update_lambda();
      record();
      object_stage();
      update_lambda();
      record();
      final_refresh();

      const double e = elbo_live();
      const double rel = std::abs(e - prev_elbo) / std::max(std::abs(prev_elbo), 1.0);
      if (it > 1 && rel < cfg.convergence_tol)
        ++streak;
      else
        streak = 0;
      prev_elbo = e;
      if (streak >= cfg.convergence_streak) {
        converged = true;
        break;
      }
    }

    PosteriorState st = make_state();
    st.iterations = iters;
    st.converged = converged;
    st.elbo_ledger = std::move(ledger);
    return st;
  }
};

}  // namespace

PosteriorState Engine::run(const CVec& frame) const {
  if (frame.size() != ramp_.frame_size())
    throw InputError("Engine::run: frame length must be n_fast * n_ramps");
  Runner rn(*this, frame);
  return rn.run();
}

double Engine::elbo(const PosteriorState& st, const CVec& frame) const {
  const int np = ramp_.frame_size();
  const CVec model = object_mean(st) + interference_mean(st);
  const double resid_sq = (frame - model).squaredNorm();

  double trace_total = 0.0;
  double gamma_terms = 0.0;
  double entropy = 0.0;
  const int lh = st.l_hat();
  const bool joint = st.joint_cov.size() > 0;

  CMat phi(np, lh);
  for (int l = 0; l < lh; ++l)
    phi.col(l) =
        object_steering_vector(st.zetas[static_cast<size_t>(l)], ramp_.n_fast, ramp_.n_ramps);

  if (joint) {
    // One Gaussian block over the concatenated dictionary.
    const int m = static_cast<int>(st.joint_cov.rows());
    CMat d = CMat::Zero(np, m);
    d.leftCols(lh) = phi;
    int c = lh;
    for (const auto& rp : st.ramps) {
      if (rp.active.empty()) continue;
      const CVec env = envelope_for(rp.theta);
      for (size_t j = 0; j < rp.active.size(); ++j)
        d.col(c++).segment((&rp - st.ramps.data()) * ramp_.n_fast, ramp_.n_fast) =
            env.cwiseProduct(psi_.col(rp.active[j]));
    }
    trace_total = ((d.adjoint() * d) * st.joint_cov).trace().real();
    if (m > 0)
      entropy += m * std::log(M_PI * std::exp(1.0)) + logdet_hpd(st.joint_cov, "elbo joint cov");
    for (int l = 0; l < lh; ++l) {
      gamma_terms += -std::log(M_PI) - st.alpha_gamma(l) * (std::norm(st.joint_weights(l)) +
                                                            st.joint_cov(l, l).real());
      entropy += 1.0 + std::log(st.alpha_gamma(l));
    }
    c = lh;
    for (const auto& rp : st.ramps)
      for (int j = 0; j < static_cast<int>(rp.active.size()); ++j, ++c) {
        gamma_terms += -std::log(M_PI) - rp.gamma(j) * (std::norm(st.joint_weights(c)) +
                                                        st.joint_cov(c, c).real());
        entropy += 1.0 + std::log(rp.gamma(j));
      }
  } else {
    if (lh > 0) {
      trace_total += ((phi.adjoint() * phi) * st.alpha_cov).trace().real();
      for (int l = 0; l < lh; ++l) {
        gamma_terms += -std::log(M_PI) -
                       st.alpha_gamma(l) * (std::norm(st.alpha(l)) + st.alpha_cov(l, l).real());
        entropy += 1.0 + std::log(st.alpha_gamma(l));
      }
      entropy += lh * std::log(M_PI * std::exp(1.0)) + logdet_hpd(st.alpha_cov, "elbo obj cov");
    }
    for (const auto& rp : st.ramps) {
      const int kh = static_cast<int>(rp.active.size());
      if (kh == 0) continue;
      const CVec env = envelope_for(rp.theta);
      CMat eff(ramp_.n_fast, kh);
      for (int j = 0; j < kh; ++j)
        eff.col(j) = env.cwiseProduct(psi_.col(rp.active[static_cast<size_t>(j)]));
      trace_total += ((eff.adjoint() * eff) * rp.cov).trace().real();
      for (int j = 0; j < kh; ++j) {
        gamma_terms +=
            -std::log(M_PI) - rp.gamma(j) * (std::norm(rp.beta(j)) + rp.cov(j, j).real());
        entropy += 1.0 + std::log(rp.gamma(j));
      }
      entropy += kh * std::log(M_PI * std::exp(1.0)) + logdet_hpd(rp.cov, "elbo int cov");
    }
  }

  const double lam = st.lambda;
  const double e_ln_lambda = digamma(static_cast<double>(np)) - std::log(np / lam);
  double val =
      -np * std::log(M_PI) + (np - 1) * e_ln_lambda - lam * (resid_sq + trace_total);
  val += np - std::log(np / lam) + std::lgamma(static_cast<double>(np)) +
         (1.0 - np) * digamma(static_cast<double>(np));
  val += gamma_terms + entropy;
  return val;
}

PosteriorState run_vsep(const CVec& frame, const RampConfig& ramp, const AafModel& aaf,
                        const VsepConfig& cfg) {
  Engine engine(ramp, aaf, cfg, EngineMode::Factorized);
  return engine.run(frame);
}

}  // namespace vsep
