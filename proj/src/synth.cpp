#include "vsep/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "vsep/dictionary.hpp"

namespace vsep {

namespace {

constexpr double kC0 = 299792458.0;  // speed of light [m/s]

int snap_to_grid(double norm_freq, int grid_size_k) {
  const double w = wrap_norm_freq(norm_freq);
  int idx = static_cast<int>(std::lround((w + 0.5) * grid_size_k));
  idx %= grid_size_k;
  if (idx < 0) idx += grid_size_k;
  return idx;
}

// Accumulates (grid index, weight) pairs, merging duplicates.
void add_channel_component(std::map<int, cplx>& acc, int idx, cplx w) {
  auto it = acc.find(idx);
  if (it == acc.end())
    acc.emplace(idx, w);
  else
    it->second += w;
}

InterferenceBurst finalize_burst(int ramp_index, const ChirpParams& chirp,
                                 const std::map<int, cplx>& acc) {
  InterferenceBurst b;
  b.ramp_index = ramp_index;
  b.chirp = chirp;
  b.grid_indices.reserve(acc.size());
  b.weights.resize(static_cast<int>(acc.size()));
  int i = 0;
  for (const auto& [idx, w] : acc) {
    b.grid_indices.push_back(idx);
    b.weights(i++) = w;
  }
  return b;
}

}  // namespace

void ScenarioConfig::validate() const {
  ramp.validate();
  if (!std::isfinite(snr_db)) throw ScenarioError("ScenarioConfig: snr_db must be finite");
  if (grid_size_k != 0 && grid_size_k < ramp.n_fast)
    throw ConfigError("ScenarioConfig: grid_size_k must be >= n_fast");
  if (gen_oversampling < 4)
    throw ConfigError("ScenarioConfig: gen_oversampling must be >= 4");
  // Assumption: at most one burst per ramp index.
  std::set<int> ramps;
  for (const auto& t : burst_templates)
    if (!ramps.insert(t.ramp_index).second)
      throw ScenarioError("ScenarioConfig: more than one burst template on a ramp");
}

ScenarioConfig simulation1_preset() {
  ScenarioConfig cfg;
  cfg.name = "simulation1";
  cfg.ramp.f0 = 79e9;
  cfg.ramp.slope_k = 1e13;
  cfg.ramp.n_fast = 256;
  cfg.ramp.n_ramps = 1;
  cfg.ramp.f_s = 10.2e6;
  // The sampled window N/f_s slightly exceeds the nominal 25 us ramp.
  cfg.ramp.t_sw = std::max(25e-6, cfg.ramp.n_fast / cfg.ramp.f_s);
  cfg.ramp.t_p = cfg.ramp.t_sw;

  const double tau = 80.06e-9;
  ObjectComponent obj;
  obj.weight = {1.0, 0.0};
  obj.beat_freq_norm = wrap_norm_freq(cfg.ramp.slope_k * tau / cfg.ramp.f_s);
  obj.doppler_norm = 0.0;
  cfg.explicit_objects = {obj};

  BurstTemplate burst;
  burst.ramp_index = 0;
  burst.chirp = {10e6, -0.8e12};  // f_I - f0 = 10 MHz, k_I - k = -0.8 GHz/ms
  burst.interferer_slope = 9.2e12;
  burst.delays_s = {0.0};
  burst.rel_mag_db = {0.0};
  cfg.burst_templates = {burst};

  cfg.aaf_inference = AafModel::raised_cosine(cfg.ramp.f_s / 4.0, 0.25);
  cfg.aaf_generation = cfg.aaf_inference;
  cfg.snr_db = 30.0;
  cfg.sir_db = 0.0;
  return cfg;
}

ScenarioConfig simulation2_preset() {
  ScenarioConfig cfg;
  cfg.name = "simulation2";
  cfg.ramp.f0 = 79e9;
  cfg.ramp.slope_k = 1e13;
  cfg.ramp.n_fast = 128;
  cfg.ramp.n_ramps = 16;
  cfg.ramp.f_s = 5.1e6;
  cfg.ramp.t_sw = std::max(25e-6, cfg.ramp.n_fast / cfg.ramp.f_s);
  cfg.ramp.t_p = cfg.ramp.t_sw;

  ObjectPopulation pop;
  pop.count = 10;
  pop.delay_min_s = 3.97e-9;
  pop.delay_max_s = 127e-9;
  pop.doppler_min_hz = -5e3;
  pop.doppler_max_hz = 5e3;
  pop.pathloss_factor = 40.0;
  pop.jitter_db_lo = -3.0;
  pop.jitter_db_hi = 3.0;
  cfg.object_draw = pop;

  InterferenceDrawSpec spec;
  spec.triples = {
      {79.002e9, 9.8321e12, 25.02e-6, 75.01e-6, 2},
      {79.004e9, 9.7122e12, 25.02e-6, 50.01e-6, 4},
      {79.008e9, 9.3925e12, 25.02e-6, 25.02e-6, 8},
  };
  spec.channel_components = 10;
  spec.delay_min_s = 3.97e-9;
  spec.delay_max_s = 127e-9;
  spec.pathloss_factor = 20.0;
  spec.jitter_db_lo = -10.0;
  spec.jitter_db_hi = 0.0;
  cfg.interferer_draw = spec;

  cfg.aaf_inference = AafModel::raised_cosine(cfg.ramp.f_s / 4.0, 0.25);
  cfg.aaf_generation = cfg.aaf_inference;
  cfg.snr_db = 60.0;
  cfg.sir_db = -20.0;
  return cfg;
}

std::vector<std::string> preset_names() { return {"simulation1", "simulation2"}; }

ScenarioConfig preset_by_name(const std::string& name) {
  if (name == "simulation1") return simulation1_preset();
  if (name == "simulation2") return simulation2_preset();
  throw SchemaError("unknown preset '" + name + "'");
}

CVec synth_object(const std::vector<ObjectComponent>& objects, const RampConfig& config) {
  CVec out = CVec::Zero(config.frame_size());
  for (const auto& obj : objects) {
    obj.validate();
    out += obj.weight * object_steering_vector(obj.zeta(), config.n_fast, config.n_ramps);
  }
  return out;
}

CVec synth_interference(const std::vector<InterferenceBurst>& bursts, int grid_size_k,
                        const AafModel& aaf, const RampConfig& config) {
  CVec out = CVec::Zero(config.frame_size());
  std::set<int> seen;
  std::map<double, ChirpedAafTransfer> gbar_by_dk;
  const int n = config.n_fast;
  const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));
  for (const auto& b : bursts) {
    b.validate(grid_size_k);
    if (b.ramp_index < 0 || b.ramp_index >= config.n_ramps)
      throw ScenarioError("synth_interference: burst ramp index out of range");
    if (!seen.insert(b.ramp_index).second)
      throw ScenarioError("synth_interference: duplicate burst on one ramp");
    auto it = gbar_by_dk.find(b.chirp.delta_k);
    if (it == gbar_by_dk.end())
      it = gbar_by_dk.emplace(b.chirp.delta_k,
                              ChirpedAafTransfer(aaf, b.chirp.delta_k, config)).first;
    const ChirpedAafTransfer& gbar = it->second;
    const CVec env = envelope_matrix(b.chirp, [&gbar](double f) { return gbar(f); }, config);

    CVec seg = CVec::Zero(n);
    for (size_t j = 0; j < b.grid_indices.size(); ++j) {
      const double f = grid_freq(b.grid_indices[j], grid_size_k);
      const cplx w = b.weights(static_cast<int>(j)) * inv_sqrt_n;
      for (int m = 0; m < n; ++m) {
        const double ph = -2.0 * M_PI * f * m;
        seg(m) += w * cplx(std::cos(ph), std::sin(ph));
      }
    }
    out.segment(b.ramp_index * n, n) = env.cwiseProduct(seg);
  }
  return out;
}

CVec synth_interference_convolved(const std::vector<InterferenceBurst>& bursts,
                                  int grid_size_k, const AafModel& aaf,
                                  const RampConfig& config, int oversampling) {
  if (oversampling < 4)
    throw ConfigError("synth_interference_convolved: oversampling must be >= 4");
  if (aaf.kind() == AafModel::Kind::AllPass)
    return synth_interference(bursts, grid_size_k, aaf, config);

  CVec out = CVec::Zero(config.frame_size());
  std::set<int> seen;
  const int n = config.n_fast;
  const double ts = config.ts();
  const double dt = ts / oversampling;
  const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));

  double tg0, tg1;
  aaf.impulse_support(tg0, tg1);
  const int m_taps = static_cast<int>(std::ceil((tg1 - tg0) / dt)) + 1;
  const std::vector<cplx> g = aaf.impulse(tg0, dt, m_taps);

  for (const auto& b : bursts) {
    b.validate(grid_size_k);
    if (!seen.insert(b.ramp_index).second)
      throw ScenarioError("synth_interference_convolved: duplicate burst on one ramp");

    // Unfiltered demixed burst on the oversampled grid covering
    // [ -tg1, (n-1)*ts - tg0 ].
    const double tx0 = -tg1;
    const int m_x = (n - 1) * oversampling + (m_taps - 1) + 1;
    std::vector<cplx> x(static_cast<size_t>(m_x));
    for (int i = 0; i < m_x; ++i) {
      const double t = tx0 + i * dt;
      cplx tones(0.0, 0.0);
      for (size_t j = 0; j < b.grid_indices.size(); ++j) {
        const double f_hz = grid_freq(b.grid_indices[j], grid_size_k) * config.f_s;
        const double ph = -2.0 * M_PI * f_hz * t;
        tones += b.weights(static_cast<int>(j)) * cplx(std::cos(ph), std::sin(ph));
      }
      x[static_cast<size_t>(i)] =
          chirp_phase(t, b.chirp.delta_f0, b.chirp.delta_k) * tones * inv_sqrt_n;
    }

    // y(n*ts) = dt * sum_m g[m] * x(n*ts - (tg0 + m*dt)).
    for (int s = 0; s < n; ++s) {
      cplx acc(0.0, 0.0);
      const int base = s * oversampling + (m_taps - 1);
      for (int m = 0; m < m_taps; ++m)
        acc += g[static_cast<size_t>(m)] * x[static_cast<size_t>(base - m)];
      out(b.ramp_index * n + s) = acc * dt;
    }
  }
  return out;
}

SignalFrame add_noise(const CVec& signal, double noise_precision, Rng& rng) {
  if (!(noise_precision > 0.0))
    throw DomainError("add_noise: noise precision must be positive");
  const double sigma = std::sqrt(1.0 / noise_precision);
  SignalFrame frame;
  frame.noise_part = CVec(signal.size());
  for (int i = 0; i < signal.size(); ++i) (*frame.noise_part)(i) = sigma * rng.cnormal();
  frame.samples = signal + *frame.noise_part;
  return frame;
}

CVec SynthContext::object_signal(const GroundTruth& truth) const {
  return synth_object(truth.objects, ramp);
}

CVec SynthContext::interference_signal(const GroundTruth& truth) const {
  if (truth.bursts.empty()) return CVec::Zero(ramp.frame_size());
  if (convolved)
    return synth_interference_convolved(truth.bursts, grid_size_k, aaf_generation, ramp,
                                        oversampling);
  return synth_interference(truth.bursts, grid_size_k, aaf_generation, ramp);
}

void scale_to_snr_sir(GroundTruth& truth, const SynthContext& ctx, double snr_db,
                      std::optional<double> sir_db) {
  const double target_eo = std::pow(10.0, snr_db / 10.0) / truth.noise_precision;
  const double eo = ctx.object_signal(truth).squaredNorm();
  if (eo <= 0.0) throw ScenarioError("scale_to_snr_sir: zero object energy");
  const double so = std::sqrt(target_eo / eo);
  for (auto& obj : truth.objects) obj.weight *= so;

  if (sir_db) {
    const double ei = ctx.interference_signal(truth).squaredNorm();
    if (ei <= 0.0)
      throw ScenarioError("scale_to_snr_sir: zero interference energy with finite SIR");
    const double target_ei = target_eo / std::pow(10.0, *sir_db / 10.0);
    const double si = std::sqrt(target_ei / ei);
    for (auto& b : truth.bursts) b.weights *= si;
  }
}

namespace {

struct Crossing {
  bool present = false;
  double delta_f0 = 0.0;
};

// Does interferer ramp p_i produce a burst inside the sampled window of
// victim ramp p, and with which fast-time-origin frequency offset?
Crossing burst_crossing(const RampConfig& ramp, const InterfererTriple& tr, double t_bar,
                        int p, int p_i, double band_edge) {
  Crossing c;
  const double dk = tr.k_i - ramp.slope_k;
  const double df0 =
      (tr.f_i - ramp.f0) + tr.k_i * (ramp.t_p * p - t_bar - tr.t_p_i * p_i);
  double lo = 0.0, hi = (ramp.n_fast - 1) * ramp.ts();
  if (dk == 0.0) {
    if (std::abs(df0) > band_edge) return c;
  } else {
    double t1 = (-band_edge - df0) / dk;
    double t2 = (band_edge - df0) / dk;
    if (t1 > t2) std::swap(t1, t2);
    lo = std::max(lo, t1);
    hi = std::min(hi, t2);
  }
  // Interferer chirp must be transmitting during the crossing.
  const double act0 = t_bar + tr.t_p_i * p_i - ramp.t_p * p;
  lo = std::max(lo, act0);
  hi = std::min(hi, act0 + tr.t_sw_i);
  if (hi <= lo) return c;
  c.present = true;
  c.delta_f0 = df0;
  return c;
}

}  // namespace

std::pair<GroundTruth, SignalFrame> sample_scenario(const ScenarioConfig& config, Rng& rng) {
  config.validate();
  GroundTruth truth;
  truth.noise_precision = 1.0;
  const int grid_k = config.k();
  const double ts = config.ramp.ts();

  // Objects.
  if (!config.explicit_objects.empty()) {
    for (const auto& tmpl : config.explicit_objects) {
      ObjectComponent obj = tmpl;
      const double phase = rng.uniform(0.0, 2.0 * M_PI);
      obj.weight = std::abs(tmpl.weight) * cplx(std::cos(phase), std::sin(phase));
      truth.objects.push_back(obj);
    }
  } else if (config.object_draw) {
    const auto& pop = *config.object_draw;
    for (int l = 0; l < pop.count; ++l) {
      const double tau = rng.uniform(pop.delay_min_s, pop.delay_max_s);
      const double nu = rng.uniform(pop.doppler_min_hz, pop.doppler_max_hz);
      const double jitter = rng.uniform(pop.jitter_db_lo, pop.jitter_db_hi);
      const double mag_db = -pop.pathloss_factor * std::log10(tau * kC0 + 1.0) + jitter;
      const double mag = std::pow(10.0, mag_db / 20.0);
      const double phase = rng.uniform(0.0, 2.0 * M_PI);
      ObjectComponent obj;
      obj.weight = mag * cplx(std::cos(phase), std::sin(phase));
      obj.beat_freq_norm = wrap_norm_freq(config.ramp.slope_k * tau * ts);
      obj.doppler_norm = wrap_norm_freq(nu * config.ramp.t_p);
      truth.objects.push_back(obj);
    }
  }

  // Interference.
  if (!config.burst_templates.empty()) {
    for (const auto& tmpl : config.burst_templates) {
      std::map<int, cplx> acc;
      for (size_t j = 0; j < tmpl.delays_s.size(); ++j) {
        const int idx = snap_to_grid(tmpl.interferer_slope * tmpl.delays_s[j] * ts, grid_k);
        const double mag = std::pow(10.0, tmpl.rel_mag_db[j] / 20.0);
        const double phase = rng.uniform(0.0, 2.0 * M_PI);
        add_channel_component(acc, idx, mag * cplx(std::cos(phase), std::sin(phase)));
      }
      truth.bursts.push_back(finalize_burst(tmpl.ramp_index, tmpl.chirp, acc));
    }
  } else if (config.interferer_draw) {
    const auto& spec = *config.interferer_draw;
    const double band_edge = config.aaf_generation.passband_edge(config.ramp.f_s);
    const bool need_burst = config.sir_db.has_value();
    const int max_attempts = 1000;
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
      const auto& tr = spec.triples[rng.uniform_index(spec.triples.size())];
      const double t_bar = rng.uniform(0.0, config.ramp.n_ramps * config.ramp.t_p);
      // Which victim ramps see a burst (first interferer ramp wins per victim ramp).
      std::vector<std::pair<int, double>> hits;  // (ramp, delta_f0)
      for (int p = 0; p < config.ramp.n_ramps; ++p) {
        for (int pi = 0; pi < tr.p_i; ++pi) {
          const Crossing c = burst_crossing(config.ramp, tr, t_bar, p, pi, band_edge);
          if (c.present) {
            hits.emplace_back(p, c.delta_f0);
            break;
          }
        }
      }
      if (hits.empty()) {
        if (!need_burst) break;
        continue;
      }
      // Delay-only channel: magnitudes shared over ramps, phases per ramp.
      const int n_comp = std::max(1, spec.channel_components);
      std::vector<int> comp_idx(static_cast<size_t>(n_comp));
      std::vector<double> comp_mag(static_cast<size_t>(n_comp));
      comp_idx[0] = snap_to_grid(0.0, grid_k);  // direct path at excess delay zero
      comp_mag[0] = 1.0;
      for (int j = 1; j < n_comp; ++j) {
        const double tau = rng.uniform(spec.delay_min_s, spec.delay_max_s);
        const double jitter = rng.uniform(spec.jitter_db_lo, spec.jitter_db_hi);
        const double mag_db = -spec.pathloss_factor * std::log10(tau * kC0 + 1.0) + jitter;
        comp_idx[static_cast<size_t>(j)] = snap_to_grid(tr.k_i * tau * ts, grid_k);
        comp_mag[static_cast<size_t>(j)] = std::pow(10.0, mag_db / 20.0);
      }
      const double dk = tr.k_i - config.ramp.slope_k;
      for (const auto& [p, df0] : hits) {
        std::map<int, cplx> acc;
        for (int j = 0; j < n_comp; ++j) {
          const double phase = rng.uniform(0.0, 2.0 * M_PI);
          add_channel_component(acc, comp_idx[static_cast<size_t>(j)],
                                comp_mag[static_cast<size_t>(j)] *
                                    cplx(std::cos(phase), std::sin(phase)));
        }
        truth.bursts.push_back(finalize_burst(p, ChirpParams{df0, dk}, acc));
      }
      break;
    }
    if (need_burst && truth.bursts.empty())
      throw ScenarioError("sample_scenario: no interference burst lands in the frame");
  }

  const SynthContext ctx = SynthContext::from(config);
  scale_to_snr_sir(truth, ctx, config.snr_db, config.sir_db);

  const CVec object = ctx.object_signal(truth);
  const CVec interference = ctx.interference_signal(truth);
  SignalFrame frame = add_noise(object + interference, truth.noise_precision, rng);
  frame.object_part = object;
  frame.interference_part = interference;
  return {std::move(truth), std::move(frame)};
}

}  // namespace vsep
