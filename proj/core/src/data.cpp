#include "restgate/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

#include <json.hpp>

#include "restgate/errors.hpp"
#include "restgate/io.hpp"
#include "restgate/rng.hpp"
#include "restgate/signal.hpp"

namespace restgate::data {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'E', 'E', 'G', 'T', 'R', 'L', 'S', '1'};

constexpr std::uint64_t kSubjectStream = 0x5B1;
constexpr std::uint64_t kTrialStream = 0x7A1;
constexpr std::uint64_t kProbeStream = 0x9B0;
constexpr std::uint64_t kLayoutStream = 0x1A7;

// Paul Kellett's economy pink filter: three leaky integrators plus a direct term.
constexpr double kPinkPole[3] = {0.99765, 0.96300, 0.57000};
constexpr double kPinkGain[3] = {0.0990460, 0.2965164, 1.0526913};
constexpr double kPinkDirect = 0.1848;

constexpr std::size_t kBurnIn = 2000;
constexpr double kMuBandwidthHz = 2.0;

struct SubjectTraits {
  std::vector<double> mixing;  // C x C
  double mu_frequency;
};

SubjectTraits subject_traits(const SynthConfig& cfg, const std::vector<std::vector<std::size_t>>& groups,
                             std::size_t subject) {
  const std::size_t C = cfg.channels;
  Rng rng(mix_keys({cfg.seed, kSubjectStream, subject}));
  // Blocks: each class group, plus every electrode outside the groups.
  std::vector<int> block(C, -1);
  for (std::size_t g = 0; g < groups.size(); ++g)
    for (auto c : groups[g]) block[c] = static_cast<int>(g);
  std::vector<std::size_t> block_size(groups.size() + 1, 0);
  for (std::size_t c = 0; c < C; ++c) {
    if (block[c] < 0) block[c] = static_cast<int>(groups.size());
    ++block_size[static_cast<std::size_t>(block[c])];
  }
  SubjectTraits t;
  t.mixing.assign(C * C, 0.0);
  for (std::size_t i = 0; i < C; ++i)
    for (std::size_t j = 0; j < C; ++j) {
      const double r = rng.normal();
      if (block[i] != block[j]) continue;
      const double n = static_cast<double>(block_size[static_cast<std::size_t>(block[i])]);
      t.mixing[i * C + j] = (i == j ? 1.0 : 0.0) + cfg.mixing_scale * r / std::sqrt(n);
    }
  t.mu_frequency = cfg.mu_frequency + rng.uniform(-0.5, 0.5);
  return t;
}

std::vector<double> channel_mu_gains(const SynthConfig& cfg) {
  Rng rng(mix_keys({cfg.seed, kLayoutStream}));
  std::vector<double> g(cfg.channels);
  for (auto& v : g) v = rng.uniform(0.75, 1.25);
  return g;
}

double resonator_stddev(double a1, double a2) {
  // Stationary variance of y[n] = x[n] - a1 y[n-1] - a2 y[n-2] for unit white x.
  return std::sqrt((1.0 + a2) / ((1.0 - a2) * ((1.0 + a2) * (1.0 + a2) - a1 * a1)));
}

// One trial, channels x samples, already mixed.
std::vector<double> generate_trial(const SynthConfig& cfg, const std::vector<std::vector<std::size_t>>& groups,
                                   const SubjectTraits& traits, const std::vector<double>& gains,
                                   std::uint64_t stream, int label, bool erd) {
  const std::size_t C = cfg.channels;
  const auto S = static_cast<std::size_t>(std::llround(cfg.trial_seconds * cfg.fs));
  const auto seg = signal::segment_bounds(S, cfg.fs);
  Rng rng(stream);

  const double w = 2.0 * std::numbers::pi * traits.mu_frequency / cfg.fs;
  const double r = 1.0 - std::numbers::pi * kMuBandwidthHz / cfg.fs;
  const double a1 = -2.0 * r * std::cos(w), a2 = r * r;
  const double mu_scale = cfg.mu_amplitude / resonator_stddev(a1, a2);
  std::vector<double> mu(S);
  {
    double y1 = 0.0, y2 = 0.0;
    for (std::size_t n = 0; n < kBurnIn + S; ++n) {
      const double y = rng.normal() - a1 * y1 - a2 * y2;
      y2 = y1;
      y1 = y;
      if (n >= kBurnIn) mu[n - kBurnIn] = y * mu_scale;
    }
  }

  std::vector<bool> in_group(C, false);
  if (erd && label >= 0)
    for (auto c : groups[static_cast<std::size_t>(label)]) in_group[c] = true;

  const double noise_scale = cfg.noise_level / pink_noise_stddev();
  std::vector<double> raw(C * S);
  for (std::size_t c = 0; c < C; ++c) {
    double b[3] = {0.0, 0.0, 0.0};
    for (std::size_t n = 0; n < kBurnIn + S; ++n) {
      const double white = rng.normal();
      for (int k = 0; k < 3; ++k) b[k] = kPinkPole[k] * b[k] + white * kPinkGain[k];
      if (n < kBurnIn) continue;
      const std::size_t t = n - kBurnIn;
      const double pink = b[0] + b[1] + b[2] + white * kPinkDirect;
      const bool attenuated = in_group[c] && t >= seg.mi_begin && t < seg.mi_end;
      const double env = attenuated ? 1.0 - cfg.erd_depth : 1.0;
      raw[c * S + t] = noise_scale * pink + gains[c] * env * mu[t];
    }
  }

  std::vector<double> out(C * S, 0.0);
  for (std::size_t i = 0; i < C; ++i)
    for (std::size_t j = 0; j < C; ++j) {
      const double m = traits.mixing[i * C + j];
      if (m == 0.0) continue;
      for (std::size_t t = 0; t < S; ++t) out[i * S + t] += m * raw[j * S + t];
    }
  return out;
}

}  // namespace

double pink_noise_stddev() {
  // pink[n] = sum_k h[k] w[n-k], h[0] = sum g + d, h[k] = sum_i g_i a_i^k.
  double h0 = kPinkDirect;
  for (double g : kPinkGain) h0 += g;
  double var = h0 * h0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const double aa = kPinkPole[i] * kPinkPole[j];
      var += kPinkGain[i] * kPinkGain[j] * aa / (1.0 - aa);
    }
  return std::sqrt(var);
}

std::span<const float> TrialSet::trial(std::size_t i) const {
  const std::size_t n = n_channels * n_samples;
  return std::span<const float>(data).subspan(i * n, n);
}

std::span<float> TrialSet::trial(std::size_t i) {
  const std::size_t n = n_channels * n_samples;
  return std::span<float>(data).subspan(i * n, n);
}

std::span<const std::uint8_t> TrialSet::probe_mask(std::size_t i) const {
  if (probe_masks.empty()) return {};
  return std::span<const std::uint8_t>(probe_masks).subspan(i * n_samples, n_samples);
}

void TrialSet::validate() const {
  if (!(fs > 0.0)) throw DomainError("trial set: sampling rate must be positive");
  if (n_channels == 0 || n_samples == 0) throw DomainError("trial set: empty trial geometry");
  if (subject_ids.size() != labels.size())
    throw DomainError("trial set: labels and subject ids differ in length");
  if (data.size() != labels.size() * n_channels * n_samples)
    throw DomainError("trial set: payload does not match trial count and geometry");
  for (int l : labels)
    if (l < 0 || l >= kNumClasses) throw DomainError("trial set: label outside [0,4)");
  if (!probe_masks.empty()) {
    if (probe_masks.size() != labels.size() * n_samples)
      throw DomainError("trial set: probe masks do not match trial count");
    const auto seg = signal::segment_bounds(n_samples, fs);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      auto mask = probe_mask(i);
      for (std::size_t t = 0; t < n_samples; ++t)
        if (mask[t] && (t < seg.mi_begin || t >= seg.mi_end))
          throw DomainError("trial set: probe mask outside the MI window");
    }
  }
}

TrialSet TrialSet::subset(std::span<const std::size_t> indices) const {
  TrialSet out;
  out.fs = fs;
  out.n_channels = n_channels;
  out.n_samples = n_samples;
  for (auto i : indices) {
    auto t = trial(i);
    out.data.insert(out.data.end(), t.begin(), t.end());
    out.labels.push_back(labels[i]);
    out.subject_ids.push_back(subject_ids[i]);
    if (has_probes()) {
      auto m = probe_mask(i);
      out.probe_masks.insert(out.probe_masks.end(), m.begin(), m.end());
    }
  }
  return out;
}

std::vector<int> TrialSet::subjects() const {
  std::vector<int> s(subject_ids);
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

std::vector<std::vector<std::size_t>> SynthConfig::groups() const {
  if (!class_groups.empty()) return class_groups;
  std::vector<std::vector<std::size_t>> g(kNumClasses);
  for (std::size_t k = 0; k < g.size(); ++k)
    for (std::size_t j = 0; j < 4; ++j) g[k].push_back(4 * k + j);
  return g;
}

void SynthConfig::validate() const {
  if (n_subjects == 0 || trials_per_class == 0) throw ConfigError("synth: need subjects and trials");
  if (!(fs > 0.0)) throw ConfigError("synth: fs must be positive");
  if (trial_seconds < 6.0) throw ConfigError("synth: trials must span at least 6 s");
  if (!(erd_depth >= 0.0 && erd_depth <= 1.0)) throw ConfigError("synth: erd_depth must lie in [0,1]");
  if (!(mu_frequency > 0.0 && mu_frequency + 0.5 < fs / 2.0))
    throw ConfigError("synth: mu frequency must lie below Nyquist");
  if (noise_level < 0.0 || mu_amplitude < 0.0 || mixing_scale < 0.0)
    throw ConfigError("synth: amplitudes must be non-negative");
  const auto g = groups();
  if (g.size() != static_cast<std::size_t>(kNumClasses))
    throw ConfigError("synth: need one channel group per class");
  std::vector<bool> used(channels, false);
  for (const auto& group : g) {
    if (group.empty()) throw ConfigError("synth: empty channel group");
    for (auto c : group) {
      if (c >= channels) throw ConfigError("synth: channel group refers to electrode " + std::to_string(c));
      if (used[c]) throw ConfigError("synth: channel groups overlap at electrode " + std::to_string(c));
      used[c] = true;
    }
  }
}

TrialSet synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  const auto groups = cfg.groups();
  const auto gains = channel_mu_gains(cfg);
  TrialSet ts;
  ts.fs = cfg.fs;
  ts.n_channels = cfg.channels;
  ts.n_samples = static_cast<std::size_t>(std::llround(cfg.trial_seconds * cfg.fs));
  const std::size_t per_subject = cfg.trials_per_class * kNumClasses;
  ts.data.reserve(cfg.n_subjects * per_subject * ts.n_channels * ts.n_samples);
  for (std::size_t s = 0; s < cfg.n_subjects; ++s) {
    const auto traits = subject_traits(cfg, groups, s);
    for (std::size_t i = 0; i < per_subject; ++i) {
      const int label = static_cast<int>(i % kNumClasses);
      const auto trial = generate_trial(cfg, groups, traits, gains,
                                        mix_keys({cfg.seed, kTrialStream, s, i}), label, true);
      for (double v : trial) ts.data.push_back(static_cast<float>(v));
      ts.labels.push_back(label);
      ts.subject_ids.push_back(static_cast<int>(s));
    }
  }
  return ts;
}

TrialSet splice_rest_probe(const TrialSet& trials, const SynthConfig& cfg, double probe_seconds,
                           std::uint64_t seed) {
  if (!(probe_seconds >= 0.0 && probe_seconds < 4.0))
    throw DomainError("probe: probe_seconds must lie in [0, 4)");
  trials.validate();
  TrialSet out = trials;
  out.probe_masks.assign(trials.n_trials() * trials.n_samples, 0);
  const auto len = static_cast<std::size_t>(std::llround(probe_seconds * trials.fs));
  if (len == 0) return out;

  cfg.validate();
  if (cfg.channels != trials.n_channels || cfg.fs != trials.fs)
    throw ConfigError("probe: synth config does not match the trial geometry");
  const auto groups = cfg.groups();
  const auto gains = channel_mu_gains(cfg);
  const auto seg = signal::segment_bounds(trials.n_samples, trials.fs);
  const std::size_t span = seg.mi_end - seg.mi_begin - len + 1;

  std::vector<SubjectTraits> traits;
  for (int s : trials.subjects()) {
    if (s < 0) throw DomainError("probe: negative subject id");
    while (traits.size() <= static_cast<std::size_t>(s)) traits.push_back(subject_traits(cfg, groups, traits.size()));
  }

  for (std::size_t i = 0; i < trials.n_trials(); ++i) {
    const auto subject = static_cast<std::size_t>(trials.subject_ids[i]);
    Rng rng(mix_keys({seed, kProbeStream, i}));
    const std::size_t start = seg.mi_begin + rng.below(span);
    const auto fresh = generate_trial(cfg, groups, traits[subject], gains,
                                      mix_keys({seed, kProbeStream, subject, i, 1}), trials.labels[i], false);
    auto dst = out.trial(i);
    for (std::size_t c = 0; c < trials.n_channels; ++c)
      for (std::size_t t = start; t < start + len; ++t)
        dst[c * trials.n_samples + t] = static_cast<float>(fresh[c * trials.n_samples + t]);
    auto* mask = &out.probe_masks[i * trials.n_samples];
    std::fill(mask + start, mask + start + len, std::uint8_t{1});
  }
  return out;
}

std::vector<std::uint8_t> encode(const TrialSet& ts) {
  ts.validate();
  const std::size_t payload = ts.data.size() * 4;
  const std::size_t mask_bytes = ts.has_probes() ? (ts.probe_masks.size() + 7) / 8 : 0;
  json header = {{"fs", ts.fs},
                 {"n_trials", ts.n_trials()},
                 {"n_channels", ts.n_channels},
                 {"n_samples", ts.n_samples},
                 {"labels", ts.labels},
                 {"subject_ids", ts.subject_ids},
                 {"has_probe_masks", ts.has_probes()},
                 {"payload_bytes", payload},
                 {"mask_bytes", mask_bytes}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put_u32le(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + payload + mask_bytes);
  for (float v : ts.data) put_f32le(out, v);
  if (ts.has_probes()) {
    std::vector<std::uint8_t> bits(mask_bytes, 0);
    for (std::size_t i = 0; i < ts.probe_masks.size(); ++i)
      if (ts.probe_masks[i]) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    out.insert(out.end(), bits.begin(), bits.end());
  }
  return out;
}

TrialSet decode(std::span<const std::uint8_t> bytes) {
  using K = FormatError::Kind;
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw FormatError(K::BadMagic, "not a trial container (bad magic)");
  if (bytes.size() < 12) throw FormatError(K::Truncated, "trial container ends inside the header length");
  const std::size_t header_len = get_u32le(&bytes[8]);
  if (bytes.size() < 12 + header_len) throw FormatError(K::Truncated, "trial container ends inside the header");

  json h;
  try {
    h = json::parse(bytes.begin() + 12, bytes.begin() + static_cast<std::ptrdiff_t>(12 + header_len));
  } catch (const json::exception& e) {
    throw FormatError(K::BadHeader, std::string("trial header: ") + e.what());
  }

  TrialSet ts;
  std::size_t n_trials = 0, payload = 0, mask_bytes = 0;
  bool has_masks = false;
  try {
    ts.fs = h.at("fs").get<double>();
    n_trials = h.at("n_trials").get<std::size_t>();
    ts.n_channels = h.at("n_channels").get<std::size_t>();
    ts.n_samples = h.at("n_samples").get<std::size_t>();
    ts.labels = h.at("labels").get<std::vector<int>>();
    ts.subject_ids = h.at("subject_ids").get<std::vector<int>>();
    has_masks = h.at("has_probe_masks").get<bool>();
    payload = h.at("payload_bytes").get<std::size_t>();
    mask_bytes = h.at("mask_bytes").get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError(K::BadHeader, std::string("trial header: ") + e.what());
  }

  if (ts.labels.size() != n_trials || ts.subject_ids.size() != n_trials)
    throw FormatError(K::SizeMismatch, "trial header: label arrays disagree with n_trials");
  if (payload != n_trials * ts.n_channels * ts.n_samples * 4)
    throw FormatError(K::SizeMismatch, "trial header: geometry disagrees with payload size");
  const std::size_t expected_masks = has_masks ? (n_trials * ts.n_samples + 7) / 8 : 0;
  if (mask_bytes != expected_masks)
    throw FormatError(K::SizeMismatch, "trial header: mask size disagrees with geometry");
  const std::size_t body = bytes.size() - 12 - header_len;
  if (body < payload + mask_bytes) throw FormatError(K::Truncated, "trial payload is truncated");
  if (body > payload + mask_bytes) throw FormatError(K::SizeMismatch, "trial container has trailing bytes");

  const std::uint8_t* p = &bytes[12 + header_len];
  ts.data.resize(payload / 4);
  for (std::size_t i = 0; i < ts.data.size(); ++i) ts.data[i] = get_f32le(p + 4 * i);
  if (has_masks) {
    const std::uint8_t* m = p + payload;
    ts.probe_masks.resize(n_trials * ts.n_samples);
    for (std::size_t i = 0; i < ts.probe_masks.size(); ++i) ts.probe_masks[i] = (m[i / 8] >> (i % 8)) & 1u;
  }
  try {
    ts.validate();
  } catch (const DomainError& e) {
    throw FormatError(K::BadHeader, std::string("trial container: ") + e.what());
  }
  return ts;
}

void save(const TrialSet& trials, const std::string& path) { atomic_write(path, encode(trials)); }

TrialSet load(const std::string& path) { return decode(read_file(path)); }

}  // namespace restgate::data
