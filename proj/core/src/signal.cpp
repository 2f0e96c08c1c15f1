#include "restgate/signal.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "restgate/errors.hpp"

namespace restgate::signal {

using cd = std::complex<double>;

std::complex<double> BiquadCascade::response(double freq_hz) const {
  const double w = 2.0 * std::numbers::pi * freq_hz / fs;
  const cd z1 = std::polar(1.0, -w);  // z^-1
  const cd z2 = z1 * z1;
  cd h = 1.0;
  for (const auto& s : sections) h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
  return h;
}

std::vector<std::complex<double>> BiquadCascade::poles() const {
  std::vector<cd> out;
  for (const auto& s : sections) {
    // z^2 + a1 z + a2 = 0
    const cd disc = std::sqrt(cd(s.a1 * s.a1 - 4.0 * s.a2, 0.0));
    out.push_back((-s.a1 + disc) / 2.0);
    out.push_back((-s.a1 - disc) / 2.0);
  }
  return out;
}

BiquadCascade design_butterworth_bandpass(int prototype_order, double f_lo, double f_hi, double fs) {
  if (prototype_order < 1) throw DomainError("butterworth: order must be at least 1");
  if (!(fs > 0.0) || !(f_lo > 0.0) || !(f_lo < f_hi) || !(f_hi < fs / 2.0))
    throw DomainError("butterworth: need 0 < f_lo < f_hi < fs/2");

  const int n = prototype_order;
  const double pi = std::numbers::pi;
  const double fs2 = 2.0 * fs;
  const double wl = fs2 * std::tan(pi * f_lo / fs);
  const double wh = fs2 * std::tan(pi * f_hi / fs);
  const double bw = wh - wl;
  const double w0sq = wl * wh;

  std::vector<cd> analog;
  for (int k = 0; k < n; ++k) {
    const cd p = std::polar(1.0, pi * (2.0 * k + n + 1.0) / (2.0 * n));
    const cd a = p * (bw / 2.0);
    const cd d = std::sqrt(a * a - w0sq);
    analog.push_back(a + d);
    analog.push_back(a - d);
  }

  // n zeros at s = 0 map to z = 1; the n zeros at infinity map to z = -1.
  cd gain = std::pow(cd(bw * fs2, 0.0), n);
  std::vector<cd> digital;
  for (const auto& s : analog) {
    gain /= (fs2 - s);
    digital.push_back((fs2 + s) / (fs2 - s));
  }

  std::vector<cd> complex_upper;
  std::vector<double> real_poles;
  for (const auto& z : digital) {
    if (std::abs(z.imag()) <= 1e-12 * std::max(1.0, std::abs(z)))
      real_poles.push_back(z.real());
    else if (z.imag() > 0.0)
      complex_upper.push_back(z);
  }
  std::sort(complex_upper.begin(), complex_upper.end(),
            [](const cd& a, const cd& b) { return std::abs(a) < std::abs(b); });
  std::sort(real_poles.begin(), real_poles.end());

  BiquadCascade f;
  f.fs = fs;
  f.f_lo = f_lo;
  f.f_hi = f_hi;
  f.prototype_order = n;
  for (const auto& p : complex_upper)
    f.sections.push_back({1.0, 0.0, -1.0, -2.0 * p.real(), std::norm(p)});
  for (std::size_t i = 0; i + 1 < real_poles.size(); i += 2)
    f.sections.push_back({1.0, 0.0, -1.0, -(real_poles[i] + real_poles[i + 1]),
                          real_poles[i] * real_poles[i + 1]});
  if (real_poles.size() % 2 == 1)
    throw DomainError("butterworth: unpaired real pole");  // cannot happen: poles come in pairs

  const double k = gain.real();
  f.sections.front().b0 *= k;
  f.sections.front().b1 *= k;
  f.sections.front().b2 *= k;
  return f;
}

std::vector<double> apply_filter(const BiquadCascade& filter, std::span<const double> x) {
  std::vector<double> y(x.begin(), x.end());
  for (const auto& s : filter.sections) {
    double z1 = 0.0, z2 = 0.0;
    for (auto& v : y) {
      const double in = v;
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
  return y;
}

std::vector<double> apply_filter_zero_phase(const BiquadCascade& filter, std::span<const double> x) {
  auto y = apply_filter(filter, x);
  std::reverse(y.begin(), y.end());
  y = apply_filter(filter, y);
  std::reverse(y.begin(), y.end());
  return y;
}

double StandardizerState::push(double x) {
  if (!started) {
    mean = x;
    var = 0.0;
    started = true;
  } else {
    mean = (1.0 - alpha) * mean + alpha * x;
    const double d = x - mean;
    var = (1.0 - alpha) * var + alpha * d * d;
  }
  return (x - mean) / std::max(std::sqrt(var), eps);
}

std::vector<double> exp_moving_standardize(std::span<const double> x, double alpha, double eps) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("standardize: alpha must lie in (0, 1)");
  StandardizerState st;
  st.alpha = alpha;
  st.eps = eps;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = st.push(x[i]);
  return out;
}

Segments segment_bounds(std::size_t n_samples, double fs) {
  const auto two_s = static_cast<std::size_t>(std::llround(2.0 * fs));
  const auto six_s = static_cast<std::size_t>(std::llround(6.0 * fs));
  if (n_samples < six_s)
    throw LengthError("segment: trial has " + std::to_string(n_samples) + " samples, needs " +
                      std::to_string(six_s));
  return {0, two_s, two_s, six_s};
}

std::pair<std::vector<double>, std::vector<double>> segment_trial(std::span<const double> trial,
                                                                  std::size_t channels, double fs) {
  if (channels == 0 || trial.size() % channels != 0)
    throw LengthError("segment: trial size is not a multiple of the channel count");
  const std::size_t n = trial.size() / channels;
  const auto seg = segment_bounds(n, fs);
  const std::size_t r = seg.rest_end - seg.rest_begin, m = seg.mi_end - seg.mi_begin;
  std::vector<double> rest(channels * r), mi(channels * m);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* row = &trial[c * n];
    std::copy(row + seg.rest_begin, row + seg.rest_end, &rest[c * r]);
    std::copy(row + seg.mi_begin, row + seg.mi_end, &mi[c * m]);
  }
  return {std::move(rest), std::move(mi)};
}

}  // namespace restgate::signal
