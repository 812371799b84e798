#include "vsep/aaf.hpp"

#include <algorithm>
#include <cmath>

#include "vsep/fft.hpp"

namespace vsep {
namespace {

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  return std::sin(M_PI * x) / (M_PI * x);
}

int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

AafModel AafModel::all_pass() { return AafModel{}; }

AafModel AafModel::raised_cosine(double nyquist_bw_hz, double rolloff) {
  if (!(nyquist_bw_hz > 0.0) || rolloff < 0.0 || rolloff > 1.0)
    throw ConfigError("raised_cosine: need bw > 0 and rolloff in [0,1]");
  AafModel m;
  m.kind_ = Kind::RaisedCosine;
  m.nyquist_bw_ = nyquist_bw_hz;
  m.rolloff_ = rolloff;
  return m;
}

AafModel AafModel::butterworth(int order, double cutoff_hz) {
  if (order < 1 || order > 12 || !(cutoff_hz > 0.0))
    throw ConfigError("butterworth: need 1 <= order <= 12 and cutoff > 0");
  AafModel m;
  m.kind_ = Kind::Butterworth;
  m.order_ = order;
  m.cutoff_ = cutoff_hz;
  return m;
}

AafModel AafModel::tabulated(std::vector<double> freq_hz, std::vector<cplx> values) {
  if (freq_hz.size() != values.size() || freq_hz.size() < 2)
    throw ConfigError("tabulated: need matching grids with >= 2 points");
  for (size_t i = 1; i < freq_hz.size(); ++i)
    if (!(freq_hz[i] > freq_hz[i - 1]))
      throw ConfigError("tabulated: frequency grid must be strictly ascending");
  AafModel m;
  m.kind_ = Kind::Tabulated;
  m.tab_freq_ = std::move(freq_hz);
  m.tab_val_ = std::move(values);
  return m;
}

double AafModel::tabulated_max_freq() const {
  if (kind_ != Kind::Tabulated) return 0.0;
  return std::max(std::abs(tab_freq_.front()), std::abs(tab_freq_.back()));
}

cplx AafModel::transfer(double f) const {
  switch (kind_) {
    case Kind::AllPass:
      return {1.0, 0.0};
    case Kind::RaisedCosine: {
      const double af = std::abs(f);
      const double lo = (1.0 - rolloff_) * nyquist_bw_;
      const double hi = (1.0 + rolloff_) * nyquist_bw_;
      if (af <= lo) return {1.0, 0.0};
      if (af >= hi) return {0.0, 0.0};
      const double v = 0.5 * (1.0 + std::cos(M_PI * (af - lo) / (hi - lo)));
      return {v, 0.0};
    }
    case Kind::Butterworth: {
      // H(s) = prod 1 / (s/wc - p_k), poles on the left unit semicircle.
      const cplx s(0.0, f / cutoff_);
      cplx denom(1.0, 0.0);
      for (int k = 0; k < order_; ++k) {
        const double ang = M_PI * (2.0 * k + order_ + 1.0) / (2.0 * order_);
        const cplx pole(std::cos(ang), std::sin(ang));
        denom *= (s - pole);
      }
      return 1.0 / denom;
    }
    case Kind::Tabulated: {
      if (f <= tab_freq_.front() || f >= tab_freq_.back()) {
        if (f == tab_freq_.front()) return tab_val_.front();
        if (f == tab_freq_.back()) return tab_val_.back();
        return {0.0, 0.0};
      }
      auto it = std::upper_bound(tab_freq_.begin(), tab_freq_.end(), f);
      const size_t i = static_cast<size_t>(it - tab_freq_.begin());
      const double w = (f - tab_freq_[i - 1]) / (tab_freq_[i] - tab_freq_[i - 1]);
      return tab_val_[i - 1] * (1.0 - w) + tab_val_[i] * w;
    }
  }
  return {0.0, 0.0};
}

double AafModel::passband_edge(double f_s_fallback) const {
  switch (kind_) {
    case Kind::AllPass:
      return 0.5 * f_s_fallback;
    case Kind::RaisedCosine:
      return (1.0 + rolloff_) * nyquist_bw_;
    case Kind::Butterworth:
      // -20 dB point of an order-n Butterworth.
      return cutoff_ * std::pow(10.0, 1.0 / order_);
    case Kind::Tabulated: {
      double peak = 0.0;
      for (const cplx& v : tab_val_) peak = std::max(peak, std::abs(v));
      double edge = 0.0;
      for (size_t i = 0; i < tab_freq_.size(); ++i)
        if (std::abs(tab_val_[i]) > 0.01 * peak)
          edge = std::max(edge, std::abs(tab_freq_[i]));
      return edge;
    }
  }
  return 0.5 * f_s_fallback;
}

void AafModel::impulse_support(double& t_begin, double& t_end) const {
  switch (kind_) {
    case Kind::AllPass:
      t_begin = t_end = 0.0;
      return;
    case Kind::RaisedCosine: {
      // |g| decays ~ 1/t^3; 32 Nyquist periods keep the truncated tail below ~1e-5.
      const double half = 32.0 / nyquist_bw_;
      t_begin = -half;
      t_end = half;
      return;
    }
    case Kind::Butterworth: {
      const double wc = 2.0 * M_PI * cutoff_;
      const double slowest = wc * std::sin(M_PI / (2.0 * order_));
      t_begin = 0.0;
      t_end = 16.1 / slowest;  // exp(-16.1) ~ 1e-7
      return;
    }
    case Kind::Tabulated: {
      // Resolution of the tabulated grid bounds the usable time support.
      double df_min = tab_freq_[1] - tab_freq_[0];
      for (size_t i = 1; i < tab_freq_.size(); ++i)
        df_min = std::min(df_min, tab_freq_[i] - tab_freq_[i - 1]);
      const double half = 0.5 / df_min;
      t_begin = -half;
      t_end = half;
      return;
    }
  }
}

std::vector<cplx> AafModel::impulse(double t0, double dt, int count) const {
  std::vector<cplx> g(static_cast<size_t>(count));
  switch (kind_) {
    case Kind::AllPass:
      throw ConfigError("all-pass filter has no ordinary impulse response");
    case Kind::RaisedCosine: {
      const double B = nyquist_bw_;
      const double b = rolloff_;
      for (int m = 0; m < count; ++m) {
        const double t = t0 + m * dt;
        const double u = 4.0 * b * B * t;
        double v;
        if (std::abs(1.0 - u * u) < 1e-10) {
          v = 2.0 * B * (M_PI / 4.0) * sinc(2.0 * B * t);
        } else {
          v = 2.0 * B * sinc(2.0 * B * t) * std::cos(2.0 * M_PI * b * B * t) / (1.0 - u * u);
        }
        g[static_cast<size_t>(m)] = {v, 0.0};
      }
      return g;
    }
    case Kind::Butterworth: {
      const double wc = 2.0 * M_PI * cutoff_;
      std::vector<cplx> poles(static_cast<size_t>(order_));
      for (int k = 0; k < order_; ++k) {
        const double ang = M_PI * (2.0 * k + order_ + 1.0) / (2.0 * order_);
        poles[static_cast<size_t>(k)] = wc * cplx(std::cos(ang), std::sin(ang));
      }
      // Residues of wc^n / prod(s - s_k).
      std::vector<cplx> res(static_cast<size_t>(order_));
      for (int k = 0; k < order_; ++k) {
        cplx d(1.0, 0.0);
        for (int j = 0; j < order_; ++j)
          if (j != k) d *= (poles[static_cast<size_t>(k)] - poles[static_cast<size_t>(j)]);
        res[static_cast<size_t>(k)] = std::pow(cplx(wc, 0.0), order_) / d;
      }
      for (int m = 0; m < count; ++m) {
        const double t = t0 + m * dt;
        cplx v(0.0, 0.0);
        if (t >= 0.0)
          for (int k = 0; k < order_; ++k)
            v += res[static_cast<size_t>(k)] * std::exp(poles[static_cast<size_t>(k)] * t);
        g[static_cast<size_t>(m)] = v;
      }
      return g;
    }
    case Kind::Tabulated: {
      // Trapezoid quadrature of the inverse transform over the tabulated grid.
      const size_t n = tab_freq_.size();
      for (int m = 0; m < count; ++m) {
        const double t = t0 + m * dt;
        cplx acc(0.0, 0.0);
        for (size_t i = 0; i + 1 < n; ++i) {
          const double df = tab_freq_[i + 1] - tab_freq_[i];
          const double ph0 = 2.0 * M_PI * tab_freq_[i] * t;
          const double ph1 = 2.0 * M_PI * tab_freq_[i + 1] * t;
          const cplx e0(std::cos(ph0), std::sin(ph0));
          const cplx e1(std::cos(ph1), std::sin(ph1));
          acc += 0.5 * df * (tab_val_[i] * e0 + tab_val_[i + 1] * e1);
        }
        g[static_cast<size_t>(m)] = acc;
      }
      return g;
    }
  }
  return g;
}

ChirpedAafTransfer::ChirpedAafTransfer(const AafModel& aaf, double delta_k,
                                       const RampConfig& config) {
  delta_k_ = delta_k;
  if (aaf.kind() == AafModel::Kind::AllPass) {
    flat_ = true;
    return;
  }
  if (aaf.kind() == AafModel::Kind::Tabulated) {
    // The implied time step 1/(2*f_max) must be at least 4x faster than Ts.
    if (aaf.tabulated_max_freq() < 2.0 * config.f_s)
      throw ConfigError("tabulated AAF grid too coarse: needs span >= 2*f_s for 4x oversampling");
  }
  if (delta_k == 0.0) {
    direct_ = true;
    direct_model_ = std::make_shared<AafModel>(aaf);
    return;
  }

  double t0, t1;
  aaf.impulse_support(t0, t1);
  const double t_abs = std::max(std::abs(t0), std::abs(t1));
  const double band = aaf.passband_edge(config.f_s);
  // Quadratic phase spreads the spectrum by |delta_k| * support.
  const double content = 1.25 * (2.0 * band + std::abs(delta_k) * t_abs) + 0.05 * config.f_s;
  const double dt = std::min(config.ts() / 8.0, 0.5 / content);
  const int n_samp = static_cast<int>(std::ceil((t1 - t0) / dt)) + 1;
  const int n_fft = next_pow2(8 * n_samp);
  const double f_max = std::min(content, (0.5 / dt) * 0.9);
  build_table(aaf, delta_k, dt, n_fft, f_max);
  // keep t0 via table construction below
  (void)t_abs;
}

void ChirpedAafTransfer::build_table(const AafModel& aaf, double delta_k, double dt,
                                     int n_fft, double f_max) {
  double t0, t1;
  aaf.impulse_support(t0, t1);
  const int n_samp = static_cast<int>(std::ceil((t1 - t0) / dt)) + 1;
  std::vector<cplx> g = aaf.impulse(t0, dt, n_samp);
  std::vector<cplx> gbar(static_cast<size_t>(n_fft), cplx(0.0, 0.0));
  for (int m = 0; m < n_samp; ++m) {
    const double t = t0 + m * dt;
    const double ph = M_PI * delta_k * t * t;
    gbar[static_cast<size_t>(m)] = g[static_cast<size_t>(m)] * cplx(std::cos(ph), std::sin(ph));
  }
  std::vector<cplx> spec = fft(gbar, -1);

  df_ = 1.0 / (n_fft * dt);
  const int q_max = static_cast<int>(std::floor(f_max / df_));
  f_max_ = q_max * df_;
  const int n_out = 2 * q_max + 1;
  table_.assign(static_cast<size_t>(n_out), cplx(0.0, 0.0));
  for (int i = 0; i < n_out; ++i) {
    const int q = i - q_max;  // signed bin
    const double f = q * df_;
    const int idx = (q >= 0) ? q : q + n_fft;
    // Undo the t0 offset and apply the quadrature scale dt.
    const double ph = -2.0 * M_PI * f * t0;
    table_[static_cast<size_t>(i)] =
        spec[static_cast<size_t>(idx)] * dt * cplx(std::cos(ph), std::sin(ph));
  }
}

cplx ChirpedAafTransfer::operator()(double f) const {
  if (flat_) return {1.0, 0.0};
  if (direct_) return direct_model_->transfer(f);
  if (std::abs(f) >= f_max_) return {0.0, 0.0};
  const double x = (f + f_max_) / df_;
  const int i = static_cast<int>(x);
  const double w = x - i;
  return table_[static_cast<size_t>(i)] * (1.0 - w) + table_[static_cast<size_t>(i + 1)] * w;
}

EnvelopeTable::EnvelopeTable(const AafModel& aaf, const RampConfig& config, double dk_min,
                             double dk_max, int dk_count) {
  if (aaf.kind() == AafModel::Kind::AllPass) {
    flat_ = true;
    return;
  }
  if (dk_count < 2 || !(dk_max > dk_min))
    throw ConfigError("EnvelopeTable: need dk_count >= 2 and dk_max > dk_min");
  dk_min_ = dk_min;
  dk_count_ = dk_count;
  dk_step_ = (dk_max - dk_min) / (dk_count - 1);

  // Shared grid sized for the worst-case |delta_k|.
  double t0, t1;
  aaf.impulse_support(t0, t1);
  const double t_abs = std::max(std::abs(t0), std::abs(t1));
  const double band = aaf.passband_edge(config.f_s);
  const double dk_abs = std::max(std::abs(dk_min), std::abs(dk_max));
  const double content = 1.25 * (2.0 * band + dk_abs * t_abs) + 0.05 * config.f_s;
  const double dt = std::min(config.ts() / 8.0, 0.5 / content);
  const int n_samp = static_cast<int>(std::ceil((t1 - t0) / dt)) + 1;
  const int n_fft = next_pow2(8 * n_samp);
  const double f_max = std::min(content, (0.5 / dt) * 0.9);

  for (int j = 0; j < dk_count; ++j) {
    const double dk = dk_min_ + j * dk_step_;
    ChirpedAafTransfer t;
    t.delta_k_ = dk;
    t.build_table(aaf, dk, dt, n_fft, f_max);
    if (j == 0) {
      f_max_ = t.f_max_;
      df_ = t.df_;
      n_f_ = static_cast<int>(t.table_.size());
      grid_.resize(static_cast<size_t>(dk_count) * n_f_);
    }
    std::copy(t.table_.begin(), t.table_.end(), grid_.begin() + static_cast<size_t>(j) * n_f_);
  }
}

cplx EnvelopeTable::gbar(double f, double delta_k) const {
  if (flat_) return {1.0, 0.0};
  if (std::abs(f) >= f_max_) return {0.0, 0.0};
  double y = (delta_k - dk_min_) / dk_step_;
  y = std::clamp(y, 0.0, static_cast<double>(dk_count_ - 1));
  int j = static_cast<int>(y);
  if (j >= dk_count_ - 1) j = dk_count_ - 2;
  const double wy = y - j;

  const double x = (f + f_max_) / df_;
  int i = static_cast<int>(x);
  if (i >= n_f_ - 1) i = n_f_ - 2;
  const double wx = x - i;

  const cplx* row0 = grid_.data() + static_cast<size_t>(j) * n_f_;
  const cplx* row1 = row0 + n_f_;
  const cplx a = row0[i] * (1.0 - wx) + row0[i + 1] * wx;
  const cplx b = row1[i] * (1.0 - wx) + row1[i + 1] * wx;
  return a * (1.0 - wy) + b * wy;
}

CVec EnvelopeTable::envelope(const ChirpParams& theta, int n_fast, double ts) const {
  CVec env(n_fast);
  for (int n = 0; n < n_fast; ++n) {
    const double t = ts * n;
    const cplx u = chirp_phase(t, theta.delta_f0, theta.delta_k);
    env(n) = flat_ ? u : u * gbar(theta.delta_f0 + theta.delta_k * t, theta.delta_k);
  }
  return env;
}

}  // namespace vsep
