#include "vsep/types.hpp"

#include <cmath>
#include <set>
#include <sstream>

namespace vsep {

void RampConfig::validate() const {
  if (!(f_s > 0.0)) throw DomainError("RampConfig: f_s must be positive");
  if (n_fast < 2) throw DomainError("RampConfig: n_fast must be >= 2");
  if (n_ramps < 1) throw DomainError("RampConfig: n_ramps must be >= 1");
  if (!(n_fast / f_s <= t_sw))
    throw DomainError("RampConfig: sampled window n_fast/f_s exceeds t_sw");
  if (!(t_sw <= t_p)) throw DomainError("RampConfig: t_sw must not exceed t_p");
  if (!std::isfinite(f0) || !std::isfinite(slope_k))
    throw DomainError("RampConfig: non-finite chirp parameters");
}

double wrap_norm_freq(double f) {
  double w = f - std::floor(f + 0.5);
  if (w >= 0.5) w -= 1.0;  // guard the upper edge
  return w;
}

void ObjectComponent::validate() const {
  if (!in_unit_interval(beat_freq_norm) || !in_unit_interval(doppler_norm))
    throw DomainError("ObjectComponent: normalized frequency outside [-1/2, 1/2)");
  if (!std::isfinite(weight.real()) || !std::isfinite(weight.imag()))
    throw DomainError("ObjectComponent: non-finite weight");
}

void ChirpParams::validate() const {
  if (!std::isfinite(delta_f0) || !std::isfinite(delta_k))
    throw DomainError("ChirpParams: non-finite value");
}

void InterferenceBurst::validate(int grid_size_k) const {
  chirp.validate();
  if (static_cast<int>(grid_indices.size()) != weights.size())
    throw DomainError("InterferenceBurst: weights length != grid_indices length");
  std::set<int> seen;
  for (int k : grid_indices) {
    if (k < 0 || k >= grid_size_k) {
      std::ostringstream os;
      os << "InterferenceBurst: grid index " << k << " outside [0, " << grid_size_k << ")";
      throw DomainError(os.str());
    }
    if (!seen.insert(k).second)
      throw DomainError("InterferenceBurst: duplicate grid index");
  }
}

void SignalFrame::validate() const {
  if (!has_decomposition()) return;
  if (object_part->size() != samples.size() ||
      interference_part->size() != samples.size() ||
      noise_part->size() != samples.size())
    throw DomainError("SignalFrame: decomposition length mismatch");
  const CVec sum = *object_part + *interference_part + *noise_part;
  const double err = (sum - samples).norm();
  const double scale = std::max(samples.norm(), 1e-300);
  if (err > 1e-12 * scale)
    throw DomainError("SignalFrame: decomposition does not sum to samples");
}

}  // namespace vsep
