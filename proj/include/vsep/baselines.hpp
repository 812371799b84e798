#pragma once

#include "vsep/engine.hpp"
#include "vsep/types.hpp"

namespace vsep {

// Boolean mask of interfered samples, derived from the ground-truth
// interference part: sample marked iff |interference| > threshold_mult * noise std.
struct InterferenceMask {
  std::vector<bool> marked;

  static InterferenceMask from_truth(const SignalFrame& frame, double noise_precision,
                                     double threshold_mult = 3.0);
  int count() const;
};

// Sets masked samples to zero; others untouched.
SignalFrame zeroing(const SignalFrame& frame, const InterferenceMask& mask);

struct McaConfig {
  int iterations = 100;
  int stft_window = 0;        // 0 -> n_fast / 8
  double stft_overlap = 0.75;
  double noise_std = 1.0;       // sets the final threshold level
  double lambda_min_scale = 3.0;  // lambda_min = scale * noise_std
};

// Morphological component analysis per ramp: tonal part sparse in the DFT
// basis, burst part sparse in the STFT basis; alternating hard thresholding
// with a linearly decreasing threshold.
struct McaSeparation {
  CVec object_estimate;
  CVec interference_estimate;
};
McaSeparation mca_separate(const CVec& frame, const RampConfig& config,
                           const McaConfig& mca);

// Inference variants used as comparison points.
PosteriorState object_only_vsep(const CVec& frame, const RampConfig& ramp,
                                const AafModel& aaf, const VsepConfig& cfg);
PosteriorState joint_dictionary_vsep(const CVec& frame, const RampConfig& ramp,
                                     const AafModel& aaf, const VsepConfig& cfg);

}  // namespace vsep
