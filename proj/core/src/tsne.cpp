#include "restgate/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "restgate/errors.hpp"
#include "restgate/rng.hpp"

namespace restgate::tsne {

std::vector<double> squared_distances(std::span<const double> x, std::size_t n, std::size_t d) {
  if (x.size() != n * d) throw DimensionError("tsne: input is not n x d");
  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = x[i * d + k] - x[j * d + k];
        s += diff * diff;
      }
      dist[i * n + j] = dist[j * n + i] = s;
    }
  return dist;
}

ConditionalAffinities conditional_affinities(std::span<const double> x, std::size_t n, std::size_t d,
                                             double perplexity, double tolerance) {
  if (n < 2) throw DomainError("tsne: need at least two points");
  if (!(perplexity > 0.0)) throw DomainError("tsne: perplexity must be positive");
  const auto dist = squared_distances(x, n, d);
  ConditionalAffinities out;
  out.n = n;
  out.p.assign(n * n, 0.0);
  out.beta.assign(n, 1.0);
  out.perplexity.assign(n, 0.0);

  std::vector<double> row(n);
  for (std::size_t i = 0; i < n; ++i) {
    double min_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) min_d = std::min(min_d, dist[i * n + j]);

    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double perp = 0.0;
    for (int iter = 0; iter < 2000; ++iter) {
      double sum = 0.0, weighted = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) {
          row[j] = 0.0;
          continue;
        }
        const double dd = dist[i * n + j] - min_d;
        row[j] = std::exp(-beta * dd);
        sum += row[j];
        weighted += dd * row[j];
      }
      const double entropy = std::log(sum) + beta * weighted / sum;
      perp = std::exp(entropy);
      if (std::abs(perp - perplexity) < tolerance) break;
      if (perp > perplexity) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += row[j];
    for (std::size_t j = 0; j < n; ++j) out.p[i * n + j] = row[j] / sum;
    out.beta[i] = beta;
    out.perplexity[i] = perp;
  }
  return out;
}

std::vector<double> joint_affinities(const ConditionalAffinities& c) {
  const std::size_t n = c.n;
  std::vector<double> p(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) p[i * n + j] = (c.p[i * n + j] + c.p[j * n + i]) / (2.0 * static_cast<double>(n));
  return p;
}

double kl_divergence(std::span<const double> p, std::span<const double> y, std::size_t n) {
  double z = 0.0;
  std::vector<double> num(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
      num[i * n + j] = 1.0 / (1.0 + dx * dx + dy * dy);
      z += num[i * n + j];
    }
  double kl = 0.0;
  for (std::size_t k = 0; k < n * n; ++k)
    if (p[k] > 0.0) kl += p[k] * std::log(p[k] / std::max(num[k] / z, 1e-300));
  return kl;
}

TsneResult tsne_project(std::span<const double> x, std::size_t n, std::size_t d, const TsneConfig& cfg) {
  if (static_cast<double>(n) < 3.0 * cfg.perplexity)
    throw DomainError("tsne: " + std::to_string(n) + " points is fewer than 3 x perplexity");
  const auto cond = conditional_affinities(x, n, d, cfg.perplexity, cfg.perplexity_tolerance);
  const auto p = joint_affinities(cond);

  Rng rng(mix_keys({cfg.seed, 0x75E}));
  TsneResult out;
  auto& y = out.embedding;
  y.resize(2 * n);
  for (auto& v : y) v = rng.normal(0.0, cfg.init_stddev);

  std::vector<double> update(2 * n, 0.0), gains(2 * n, 1.0), grad(2 * n), num(n * n);
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const double exaggeration = iter < cfg.exaggeration_iterations ? cfg.early_exaggeration : 1.0;
    const double momentum = iter < cfg.momentum_switch ? cfg.initial_momentum : cfg.final_momentum;

    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      num[i * n + i] = 0.0;
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
        const double v = 1.0 / (1.0 + dx * dx + dy * dy);
        num[i * n + j] = num[j * n + i] = v;
        z += 2.0 * v;
      }
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double w = (exaggeration * p[i * n + j] - num[i * n + j] / z) * num[i * n + j];
        grad[2 * i] += 4.0 * w * (y[2 * i] - y[2 * j]);
        grad[2 * i + 1] += 4.0 * w * (y[2 * i + 1] - y[2 * j + 1]);
      }

    for (std::size_t k = 0; k < 2 * n; ++k) {
      const bool same_sign = (grad[k] > 0.0) == (update[k] > 0.0);
      gains[k] = same_sign ? std::max(gains[k] * 0.8, 0.01) : gains[k] + 0.2;
      update[k] = momentum * update[k] - cfg.learning_rate * gains[k] * grad[k];
      y[k] += update[k];
    }
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mx += y[2 * i];
      my += y[2 * i + 1];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[2 * i] -= mx;
      y[2 * i + 1] -= my;
    }
    out.kl_trace.push_back(kl_divergence(p, y, n));
  }
  return out;
}

}  // namespace restgate::tsne
