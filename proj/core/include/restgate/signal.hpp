#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace restgate::signal {

// One second-order section with a0 normalized to 1:
// H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)
struct Biquad {
  double b0, b1, b2, a1, a2;
};

struct BiquadCascade {
  std::vector<Biquad> sections;
  double fs = 0.0;
  double f_lo = 0.0;
  double f_hi = 0.0;
  int prototype_order = 0;

  std::complex<double> response(double freq_hz) const;
  double gain(double freq_hz) const { return std::abs(response(freq_hz)); }
  // Poles of every section (two per section).
  std::vector<std::complex<double>> poles() const;
};

// Analog Butterworth lowpass prototype -> lowpass-to-bandpass transform ->
// bilinear transform with prewarped band edges -> second-order sections.
// A prototype of order N gives a digital bandpass of order 2N.
BiquadCascade design_butterworth_bandpass(int prototype_order = 4, double f_lo = 0.5,
                                          double f_hi = 38.0, double fs = 250.0);

// Causal direct-form-II-transposed cascade with zero initial conditions.
std::vector<double> apply_filter(const BiquadCascade& filter, std::span<const double> x);

// Forward pass, then the reversed signal again (zero phase, squared magnitude).
std::vector<double> apply_filter_zero_phase(const BiquadCascade& filter, std::span<const double> x);

struct StandardizerState {
  double alpha = 1e-3;
  double eps = 1e-4;
  double mean = 0.0;
  double var = 0.0;
  bool started = false;

  double push(double x);
};

// Exponential moving standardization of one channel, starting from
// mean = x[0], var = 0.
std::vector<double> exp_moving_standardize(std::span<const double> x, double alpha = 1e-3,
                                           double eps = 1e-4);

struct Segments {
  std::size_t rest_begin, rest_end;
  std::size_t mi_begin, mi_end;
};

// Rest = [0, 2 fs), MI = [2 fs, 6 fs). Throws LengthError when the trial is shorter than 6 s.
Segments segment_bounds(std::size_t n_samples, double fs);

// channels x samples, row-major -> (rest, mi) each channels x window.
std::pair<std::vector<double>, std::vector<double>> segment_trial(std::span<const double> trial,
                                                                  std::size_t channels, double fs);

}  // namespace restgate::signal
