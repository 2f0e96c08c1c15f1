#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace restgate::tsne {

struct TsneConfig {
  double perplexity = 30.0;
  int iterations = 1000;
  double learning_rate = 200.0;
  double early_exaggeration = 12.0;
  int exaggeration_iterations = 250;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  int momentum_switch = 250;
  double perplexity_tolerance = 1e-3;
  double init_stddev = 1e-4;
  std::uint64_t seed = 0;
};

struct ConditionalAffinities {
  std::size_t n = 0;
  std::vector<double> p;            // n x n, row i is p(j | i), zero diagonal
  std::vector<double> beta;         // precision 1 / (2 sigma_i^2) per point
  std::vector<double> perplexity;   // achieved perplexity per point
};

// Squared Euclidean distances between rows of x [n, d].
std::vector<double> squared_distances(std::span<const double> x, std::size_t n, std::size_t d);

// Per-point bandwidth search (bisection on beta) so each conditional
// distribution has the requested perplexity within `tolerance`.
ConditionalAffinities conditional_affinities(std::span<const double> x, std::size_t n, std::size_t d,
                                             double perplexity, double tolerance = 1e-3);

// P = (P_cond + P_cond^T) / (2n).
std::vector<double> joint_affinities(const ConditionalAffinities& conditional);

// KL(P || Q) for embedding y [n, 2] under the Student-t kernel.
double kl_divergence(std::span<const double> p, std::span<const double> y, std::size_t n);

struct TsneResult {
  std::vector<double> embedding;  // n x 2
  std::vector<double> kl_trace;   // KL(P || Q) with the true P after every iteration
};

// Exact O(n^2) t-SNE. Throws DomainError when n < 3 * perplexity.
TsneResult tsne_project(std::span<const double> x, std::size_t n, std::size_t d, const TsneConfig& config = {});

}  // namespace restgate::tsne
