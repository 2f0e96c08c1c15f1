#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "restgate/tensor.hpp"

namespace restgate::optim {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.075;
};

struct Moments {
  std::vector<double> m;
  std::vector<double> v;
};

// One AdamW update at step t >= 1 with decoupled weight decay:
// theta -= lr * m_hat / (sqrt(v_hat) + eps) + lr * wd * theta (both terms use the old theta).
void adamw_update(std::span<double> theta, std::span<const double> grad, Moments& moments,
                  std::uint64_t t, double lr, const AdamWConfig& config);

class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig config);

  // Applies one update from each parameter's accumulated gradient (absent
  // gradient counts as zero) and clears the gradients.
  void step(double lr);
  std::uint64_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<Moments> moments_;
  AdamWConfig config_;
  std::uint64_t t_ = 0;
};

// eta_min + (lr_max - eta_min) * (1 + cos(pi * t / t_max)) / 2; t past t_max gives eta_min.
double cosine_lr(double t, double t_max, double lr_max, double eta_min = 0.0);

}  // namespace restgate::optim
