#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace restgate::data {

inline constexpr int kNumClasses = 4;  // left hand, right hand, feet, tongue

struct TrialSet {
  double fs = 0.0;
  std::size_t n_channels = 0;
  std::size_t n_samples = 0;
  std::vector<float> data;  // trial-major, then channel, then sample
  std::vector<int> labels;
  std::vector<int> subject_ids;
  std::vector<std::uint8_t> probe_masks;  // empty, or n_trials * n_samples flags

  std::size_t n_trials() const { return labels.size(); }
  bool has_probes() const { return !probe_masks.empty(); }
  std::span<const float> trial(std::size_t i) const;
  std::span<float> trial(std::size_t i);
  std::span<const std::uint8_t> probe_mask(std::size_t i) const;

  // Throws DomainError when sizes or labels are inconsistent.
  void validate() const;

  TrialSet subset(std::span<const std::size_t> indices) const;
  std::vector<int> subjects() const;  // sorted, unique

  bool operator==(const TrialSet&) const = default;
};

struct SynthConfig {
  std::size_t n_subjects = 9;
  std::size_t trials_per_class = 72;
  std::size_t channels = 22;
  double fs = 250.0;
  double trial_seconds = 6.0;
  // One disjoint electrode group per class; empty means the default layout
  // (four consecutive groups of four starting at electrode 0).
  std::vector<std::vector<std::size_t>> class_groups;
  double mu_frequency = 10.0;
  double mu_amplitude = 2.0;
  double erd_depth = 0.5;
  double noise_level = 1.0;
  double mixing_scale = 0.1;
  std::uint64_t seed = 1;

  std::vector<std::vector<std::size_t>> groups() const;
  void validate() const;
};

// Pink background noise plus a shared mu-band rhythm on every electrode.
// During the MI window (2 s to 6 s) the class's electrode group has its mu
// amplitude scaled by (1 - erd_depth). Each subject applies its own linear
// mixing (identity plus a perturbation restricted to within-group blocks),
// and a mu frequency jittered by up to +-0.5 Hz. Trials are subject-major,
// with labels cycling 0,1,2,3 inside each subject.
TrialSet synth_generate(const SynthConfig& config);

// Replaces a random contiguous window of probe_seconds inside each trial's MI
// segment with freshly generated rest-statistics signal of the same subject,
// and records it in probe_masks. probe_seconds == 0 returns the input with all-false masks.
TrialSet splice_rest_probe(const TrialSet& trials, const SynthConfig& config, double probe_seconds,
                           std::uint64_t seed);

// Stationary standard deviation of the pink-noise filter driven by unit white noise.
double pink_noise_stddev();

// Container: "EEGTRLS1", u32le header length, JSON header, float32le payload,
// then bit-packed probe masks (LSB first) when present.
std::vector<std::uint8_t> encode(const TrialSet& trials);
TrialSet decode(std::span<const std::uint8_t> bytes);

void save(const TrialSet& trials, const std::string& path);
TrialSet load(const std::string& path);

}  // namespace restgate::data
