#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "restgate/errors.hpp"
#include "restgate/io.hpp"
#include "restgate/plot.hpp"
#include "restgate/rng.hpp"
#include "restgate/tsne.hpp"

using namespace restgate;
using namespace restgate::tsne;

namespace {

// Two unit-variance Gaussian clusters in 16 dimensions whose means are 10 sigma apart.
std::vector<double> two_clusters(std::size_t per_cluster, std::vector<int>& labels, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x;
  labels.clear();
  for (int k = 0; k < 2; ++k)
    for (std::size_t i = 0; i < per_cluster; ++i) {
      for (std::size_t d = 0; d < 16; ++d) x.push_back(rng.normal() + (d == 0 && k == 1 ? 10.0 : 0.0));
      labels.push_back(k);
    }
  return x;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("restgate_test_" + name)).string();
}

plot::Table gate_table(std::size_t n) {
  plot::Table t{"gate", {"sample_index", "gate_value", "cosine"}, {}};
  for (std::size_t i = 0; i < n; ++i) {
    const double c = std::cos(0.01 * static_cast<double>(i));
    t.rows.push_back({static_cast<double>(i), (1.0 - c) / 2.0, c});
  }
  return t;
}

}  // namespace

TEST_SUITE("t-SNE affinities") {
  std::vector<int> labels;
  const auto x = two_clusters(60, labels, 1);

  TEST_CASE("rows sum to one and perplexity is met") {
    const auto c = conditional_affinities(x, 120, 16, 30.0);
    for (std::size_t i = 0; i < 120; ++i) {
      double s = 0.0, h = 0.0;
      for (std::size_t j = 0; j < 120; ++j) {
        s += c.p[i * 120 + j];
        if (c.p[i * 120 + j] > 0.0) h -= c.p[i * 120 + j] * std::log(c.p[i * 120 + j]);
      }
      CHECK(c.p[i * 121] == 0.0);
      CHECK(std::abs(s - 1.0) < 1e-9);
      CHECK(std::abs(c.perplexity[i] - 30.0) < 1e-3);
      CHECK(std::abs(std::exp(h) - 30.0) < 1e-3);
    }
  }

  TEST_CASE("joint affinities are symmetric and sum to one") {
    const auto p = joint_affinities(conditional_affinities(x, 120, 16, 10.0));
    double s = 0.0;
    for (std::size_t i = 0; i < 120; ++i)
      for (std::size_t j = 0; j < 120; ++j) {
        s += p[i * 120 + j];
        CHECK(p[i * 120 + j] == p[j * 120 + i]);
      }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }

  TEST_CASE("too few points") {
    CHECK_THROWS_AS(tsne_project(x, 80, 16, {}), DomainError);
    CHECK_THROWS_AS(conditional_affinities(x, 1, 16, 5.0), DomainError);
  }
}

TEST_SUITE("t-SNE embedding") {
  TEST_CASE("separated clusters stay separated and KL settles") {
    std::vector<int> labels;
    const auto x = two_clusters(100, labels, 2);
    TsneConfig cfg;
    cfg.seed = 3;
    const auto r = tsne_project(x, 200, 16, cfg);
    CHECK(r.embedding.size() == 400);
    CHECK(r.kl_trace.size() == 1000);
    CHECK(oracle::silhouette(r.embedding, labels) > 0.8);
    for (std::size_t t = 250; t + 50 < r.kl_trace.size(); ++t) CHECK(r.kl_trace[t + 50] <= r.kl_trace[t] + 1e-9);
    CHECK(tsne_project(x, 200, 16, cfg).embedding == r.embedding);
  }
}

TEST_SUITE("plots") {
  TEST_CASE("csv layout") {
    const plot::Table t{"t", {"a", "b"}, {{1.0, 0.5}, {2.0, -0.25}}};
    CHECK(plot::to_csv(t) == "a,b\n1,0.5\n2,-0.25\n");
  }

  TEST_CASE("gate trace at full length writes matching csv and svg") {
    const auto svg = temp_path("gate.svg"), csv = temp_path("gate.csv");
    const auto table = gate_table(993);
    plot::emit_plot(plot::PlotKind::GateTrace, table, svg, csv);
    const auto bytes = read_file(csv);
    CHECK(std::count(bytes.begin(), bytes.end(), '\n') == 994);
    const auto svg_bytes = read_file(svg);
    const std::string text(svg_bytes.begin(), svg_bytes.end());
    CHECK(text.rfind("<svg", 0) == 0);
    CHECK(text.find("<script") == std::string::npos);
    plot::emit_plot(plot::PlotKind::GateTrace, table, svg, csv);
    CHECK(read_file(svg) == svg_bytes);
    CHECK(read_file(csv) == bytes);
    std::filesystem::remove(svg);
    std::filesystem::remove(csv);
  }

  TEST_CASE("every kind renders deterministically") {
    const plot::Table scatter{"s", {"x", "y", "label"}, {{0, 0, 0}, {1, 2, 1}, {3, -1, 2}}};
    CHECK(plot::to_svg(plot::PlotKind::Scatter, scatter) == plot::to_svg(plot::PlotKind::Scatter, scatter));
    const plot::Table response{"r", {"freq_hz", "gain_db"}, {{1, -200}, {10, 0}, {100, -60}}};
    CHECK(plot::to_svg(plot::PlotKind::FilterResponse, response).size() > 100);
    const plot::Table lr{"lr", {"epoch", "lr"}, {{0, 0.002}, {1, 0.001}, {2, 0.0}}};
    CHECK(plot::to_svg(plot::PlotKind::LrSchedule, lr) == plot::to_svg(plot::PlotKind::LrSchedule, lr));
  }

  TEST_CASE("empty or ragged data writes nothing") {
    const auto svg = temp_path("empty.svg"), csv = temp_path("empty.csv");
    std::filesystem::remove(svg);
    std::filesystem::remove(csv);
    CHECK_THROWS_AS(plot::emit_plot(plot::PlotKind::GateTrace, {"e", {"a", "b"}, {}}, svg, csv), IoError);
    CHECK_THROWS_AS(plot::emit_plot(plot::PlotKind::GateTrace, {"e", {"a", "b"}, {{1.0}}}, svg, csv), IoError);
    CHECK_FALSE(std::filesystem::exists(svg));
    CHECK_FALSE(std::filesystem::exists(csv));
    CHECK_THROWS_AS(plot::emit_plot(plot::PlotKind::GateTrace, gate_table(3), "/nonexistent/dir/a.svg", csv), IoError);
    CHECK_FALSE(std::filesystem::exists(csv));
  }
}
