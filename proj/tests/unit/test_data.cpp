#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <json.hpp>

#include "oracles.hpp"
#include "restgate/data.hpp"
#include "restgate/errors.hpp"
#include "restgate/io.hpp"

using namespace restgate;
using namespace restgate::data;

namespace {

SynthConfig small_synth() {
  SynthConfig c;
  c.n_subjects = 2;
  c.trials_per_class = 6;
  return c;
}

// Welch 8-12 Hz power of one channel over [begin, end) of a trial.
double mu_power(const TrialSet& ts, std::size_t trial, std::size_t channel, std::size_t begin, std::size_t end) {
  const auto t = ts.trial(trial);
  std::vector<double> x(end - begin);
  for (std::size_t i = begin; i < end; ++i) x[i - begin] = t[channel * ts.n_samples + i];
  return oracle::welch_band_power(x, ts.fs, 8.0, 12.0, 250);
}

std::vector<std::uint8_t> with_header(const std::vector<std::uint8_t>& bytes, const nlohmann::json& header) {
  const std::uint32_t old_len = get_u32le(bytes.data() + 8);
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(bytes.begin(), bytes.begin() + 8);
  put_u32le(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), bytes.begin() + 12 + old_len, bytes.end());
  return out;
}

nlohmann::json header_of(const std::vector<std::uint8_t>& bytes) {
  const std::uint32_t len = get_u32le(bytes.data() + 8);
  return nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + len);
}

template <class F>
FormatError::Kind format_kind(F&& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.kind();
  }
  FAIL("no format error");
  return FormatError::Kind::BadHeader;
}

}  // namespace

TEST_SUITE("synthetic generator") {
  TEST_CASE("default geometry") {
    const TrialSet ts = synth_generate(SynthConfig{});
    CHECK(ts.n_trials() == 2592);
    CHECK(ts.n_channels == 22);
    CHECK(ts.n_samples == 1500);
    CHECK(ts.data.size() == std::size_t{2592} * 22 * 1500);
    CHECK(ts.subjects() == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8});
    for (std::size_t i = 0; i < 8; ++i) CHECK(ts.labels[i] == static_cast<int>(i % 4));
  }

  TEST_CASE("same seed is bit identical, other seeds differ") {
    CHECK(synth_generate(small_synth()) == synth_generate(small_synth()));
    auto other = small_synth();
    other.seed = 2;
    CHECK_FALSE(synth_generate(small_synth()) == synth_generate(other));
  }

  TEST_CASE("subjects use independent substreams") {
    auto three = small_synth();
    three.n_subjects = 3;
    const auto a = synth_generate(small_synth());
    const auto b = synth_generate(three);
    CHECK(std::equal(a.data.begin(), a.data.end(), b.data.begin()));
  }

  TEST_CASE("mu power drops on the class group by the configured depth") {
    auto cfg = small_synth();
    cfg.trials_per_class = 72;
    const TrialSet ts = synth_generate(cfg);
    const auto groups = cfg.groups();
    for (int k = 0; k < kNumClasses; ++k) {
      double rest = 0.0, mi = 0.0;
      for (std::size_t i = 0; i < ts.n_trials(); ++i) {
        if (ts.labels[i] != k) continue;
        for (std::size_t c : groups[static_cast<std::size_t>(k)]) {
          rest += mu_power(ts, i, c, 0, 500);
          mi += mu_power(ts, i, c, 500, 1500);
        }
      }
      const double ratio = mi / rest;
      const double expected = (1.0 - cfg.erd_depth) * (1.0 - cfg.erd_depth);
      INFO("class " << k << " ratio " << ratio);
      CHECK(ratio < 1.0);
      CHECK(std::abs(ratio - expected) <= 0.2 * expected);
    }
  }

  TEST_CASE("power outside the class groups does not depend on the class") {
    auto cfg = small_synth();
    cfg.n_subjects = 1;
    cfg.trials_per_class = 72;
    const TrialSet ts = synth_generate(cfg);
    for (std::size_t c : {16u, 19u, 21u}) {
      std::vector<double> left, right;
      for (std::size_t i = 0; i < ts.n_trials(); ++i) {
        if (ts.labels[i] == 0) left.push_back(mu_power(ts, i, c, 500, 1500));
        if (ts.labels[i] == 1) right.push_back(mu_power(ts, i, c, 500, 1500));
      }
      CHECK(oracle::welch_t_pvalue(left, right) > 0.01);
    }
  }

  TEST_CASE("invalid configurations") {
    auto cfg = small_synth();
    cfg.class_groups = {{0, 1}, {1, 2}, {3}, {4}};
    CHECK_THROWS_AS(synth_generate(cfg), ConfigError);
    cfg.class_groups = {{0}, {1}, {2}, {40}};
    CHECK_THROWS_AS(synth_generate(cfg), ConfigError);
    cfg = small_synth();
    cfg.erd_depth = 1.5;
    CHECK_THROWS_AS(synth_generate(cfg), ConfigError);
    cfg = small_synth();
    cfg.trial_seconds = 5.0;
    CHECK_THROWS_AS(synth_generate(cfg), ConfigError);
  }
}

TEST_SUITE("rest probes") {
  const SynthConfig cfg = small_synth();
  const TrialSet base = synth_generate(cfg);

  TEST_CASE("zero-length probe leaves data alone") {
    const auto ts = splice_rest_probe(base, cfg, 0.0, 1);
    CHECK(ts.data == base.data);
    CHECK(ts.has_probes());
    for (auto m : ts.probe_masks) CHECK(m == 0);
  }

  TEST_CASE("one-second probe marks 250 contiguous MI samples") {
    const auto ts = splice_rest_probe(base, cfg, 1.0, 2);
    for (std::size_t i = 0; i < ts.n_trials(); ++i) {
      const auto mask = ts.probe_mask(i);
      std::size_t count = 0, first = mask.size(), last = 0;
      for (std::size_t t = 0; t < mask.size(); ++t)
        if (mask[t]) {
          ++count;
          first = std::min(first, t);
          last = t;
        }
      CHECK(count == 250);
      CHECK(last - first + 1 == 250);
      CHECK(first >= 500);
      CHECK(last < 1500);
      const auto a = ts.trial(i), b = base.trial(i);
      for (std::size_t t = 0; t < 1500; ++t)
        if (!mask[t]) CHECK(a[t] == b[t]);
    }
    CHECK(splice_rest_probe(base, cfg, 1.0, 2) == ts);
  }

  TEST_CASE("probe length must stay below the MI window") {
    CHECK_THROWS_AS(splice_rest_probe(base, cfg, 4.0, 1), DomainError);
  }
}

TEST_SUITE("trial container") {
  const SynthConfig cfg = small_synth();
  const TrialSet ts = splice_rest_probe(synth_generate(cfg), cfg, 1.0, 3);

  TEST_CASE("round trip through bytes and files") {
    const auto bytes = encode(ts);
    CHECK(std::equal(bytes.begin(), bytes.begin() + 8, "EEGTRLS1"));
    CHECK(decode(bytes) == ts);
    CHECK(encode(decode(bytes)) == bytes);
    const auto path = (std::filesystem::temp_directory_path() / "restgate_test_roundtrip.eeg").string();
    save(ts, path);
    CHECK(read_file(path) == bytes);
    CHECK(load(path) == ts);
    std::filesystem::remove(path);
  }

  TEST_CASE("corruptions map to distinct errors") {
    const auto bytes = encode(ts);
    auto bad_magic = bytes;
    bad_magic[3] ^= 0x20;
    CHECK(format_kind([&] { decode(bad_magic); }) == FormatError::Kind::BadMagic);

    const std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 100);
    CHECK(format_kind([&] { decode(truncated); }) == FormatError::Kind::Truncated);
    const std::vector<std::uint8_t> stub(bytes.begin(), bytes.begin() + 10);
    CHECK(format_kind([&] { decode(stub); }) == FormatError::Kind::Truncated);

    auto header = header_of(bytes);
    header["n_samples"] = 1499;
    CHECK(format_kind([&] { decode(with_header(bytes, header)); }) == FormatError::Kind::SizeMismatch);

    auto garbage = bytes;
    garbage[12] = '!';
    CHECK(format_kind([&] { decode(garbage); }) == FormatError::Kind::BadHeader);
  }

  TEST_CASE("missing file") {
    CHECK_THROWS_AS(load("/nonexistent/restgate.eeg"), IoError);
  }
}
