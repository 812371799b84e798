#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vsep/aaf.hpp"
#include "vsep/rng.hpp"
#include "vsep/types.hpp"

namespace vsep {

// Ground-truth parameters of one realization.
struct GroundTruth {
  std::vector<ObjectComponent> objects;
  std::vector<InterferenceBurst> bursts;
  double noise_precision = 1.0;  // lambda-tilde
};

// Distribution spec for drawing object components (log-distance magnitude law).
struct ObjectPopulation {
  int count = 0;
  double delay_min_s = 0.0, delay_max_s = 0.0;
  double doppler_min_hz = 0.0, doppler_max_hz = 0.0;
  double pathloss_factor = 40.0;  // |a|^2 [dB] = -factor*log10(tau*c0 + 1) + jitter
  double jitter_db_lo = -3.0, jitter_db_hi = 3.0;
};

// One interferer transmit parameter set.
struct InterfererTriple {
  double f_i = 0.0;     // interferer start frequency [Hz]
  double k_i = 0.0;     // interferer slope [Hz/s]
  double t_sw_i = 0.0;  // interferer ramp duration [s]
  double t_p_i = 0.0;   // interferer pulse interval [s]
  int p_i = 0;          // number of interferer ramps
};

// Distribution spec for drawing the interferer and its delay-only channel.
struct InterferenceDrawSpec {
  std::vector<InterfererTriple> triples;
  int channel_components = 1;  // first component fixed at excess delay 0, magnitude 1
  double delay_min_s = 0.0, delay_max_s = 0.0;
  double pathloss_factor = 20.0;
  double jitter_db_lo = -10.0, jitter_db_hi = 0.0;
};

// Explicit burst description (fixed chirp offset and channel).
struct BurstTemplate {
  int ramp_index = 0;
  ChirpParams chirp;
  double interferer_slope = 0.0;   // maps channel delays to beat frequencies
  std::vector<double> delays_s;    // channel component delays
  std::vector<double> rel_mag_db;  // relative magnitudes
};

struct ScenarioConfig {
  std::string name = "custom";
  RampConfig ramp;
  // Objects: the explicit list wins when non-empty, else the population draw.
  std::vector<ObjectComponent> explicit_objects;
  std::optional<ObjectPopulation> object_draw;
  // Interference: explicit templates win when non-empty, else the draw spec.
  std::vector<BurstTemplate> burst_templates;
  std::optional<InterferenceDrawSpec> interferer_draw;
  AafModel aaf_inference = AafModel::all_pass();
  AafModel aaf_generation = AafModel::all_pass();
  double snr_db = 20.0;
  std::optional<double> sir_db;
  std::uint64_t seed = 1;
  int grid_size_k = 0;  // 0 -> 2 * n_fast
  bool convolved_generation = false;
  int gen_oversampling = 8;

  int k() const { return grid_size_k > 0 ? grid_size_k : 2 * ramp.n_fast; }
  bool has_interference() const {
    return !burst_templates.empty() || interferer_draw.has_value();
  }
  void validate() const;
};

// Table-driven presets.
ScenarioConfig simulation1_preset();
ScenarioConfig simulation2_preset();
std::vector<std::string> preset_names();
ScenarioConfig preset_by_name(const std::string& name);

// Phi(zeta)*alpha over the whole frame.
CVec synth_object(const std::vector<ObjectComponent>& objects, const RampConfig& config);

// Per interfered ramp p: segment = U(theta_p) * Psi_p * beta_p; zero elsewhere.
// Throws ScenarioError on duplicate ramp indices.
CVec synth_interference(const std::vector<InterferenceBurst>& bursts, int grid_size_k,
                        const AafModel& aaf, const RampConfig& config);

// Generation-side alternative: time-domain convolution of the unfiltered
// demixed burst with the filter impulse response on an oversampled grid, then
// decimation to f_s. Used to inject AAF model error.
CVec synth_interference_convolved(const std::vector<InterferenceBurst>& bursts,
                                  int grid_size_k, const AafModel& aaf,
                                  const RampConfig& config, int oversampling);

// Adds circular complex Gaussian noise with per-sample variance 1/lambda.
SignalFrame add_noise(const CVec& signal, double noise_precision, Rng& rng);

// Generation context: how ground truth maps to signals for this scenario.
struct SynthContext {
  RampConfig ramp;
  int grid_size_k = 0;
  AafModel aaf_generation = AafModel::all_pass();
  bool convolved = false;
  int oversampling = 8;

  static SynthContext from(const ScenarioConfig& cfg) {
    return {cfg.ramp, cfg.k(), cfg.aaf_generation, cfg.convolved_generation,
            cfg.gen_oversampling};
  }
  CVec object_signal(const GroundTruth& truth) const;
  CVec interference_signal(const GroundTruth& truth) const;
};

// Rescales weights so that lambda*||object||^2 hits snr_db and
// ||object||^2 / ||interference||^2 hits sir_db (when given). lambda fixed.
void scale_to_snr_sir(GroundTruth& truth, const SynthContext& ctx, double snr_db,
                      std::optional<double> sir_db);

// Draws one realization and assembles the received frame with its
// ground-truth decomposition.
std::pair<GroundTruth, SignalFrame> sample_scenario(const ScenarioConfig& config, Rng& rng);

}  // namespace vsep
