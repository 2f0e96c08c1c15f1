#include "restgate/optim.hpp"

#include <cmath>
#include <numbers>

#include "restgate/errors.hpp"

namespace restgate::optim {

void adamw_update(std::span<double> theta, std::span<const double> grad, Moments& moments,
                  std::uint64_t t, double lr, const AdamWConfig& config) {
  if (t < 1) throw DomainError("adamw: step index starts at 1");
  if (grad.size() != theta.size())
    throw DimensionError("adamw: gradient has " + std::to_string(grad.size()) + " values for " +
                         std::to_string(theta.size()) + " parameters");
  if (moments.m.empty()) {
    moments.m.assign(theta.size(), 0.0);
    moments.v.assign(theta.size(), 0.0);
  }
  if (moments.m.size() != theta.size()) throw DimensionError("adamw: moment buffers changed size");

  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    moments.m[i] = config.beta1 * moments.m[i] + (1.0 - config.beta1) * g;
    moments.v[i] = config.beta2 * moments.v[i] + (1.0 - config.beta2) * g * g;
    const double m_hat = moments.m[i] / bc1;
    const double v_hat = moments.v[i] / bc2;
    const double old = theta[i];
    theta[i] = old - lr * (m_hat / (std::sqrt(v_hat) + config.eps)) - lr * config.weight_decay * old;
  }
}

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig config)
    : params_(std::move(params)), moments_(params_.size()), config_(config) {}

void AdamW::step(double lr) {
  ++t_;
  std::vector<double> zeros;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    std::span<const double> g = p.grad();
    if (!p.has_grad()) {
      zeros.assign(p.numel(), 0.0);
      g = zeros;
    }
    adamw_update(p.mutable_data(), g, moments_[i], t_, lr, config_);
    p.zero_grad();
  }
}

double cosine_lr(double t, double t_max, double lr_max, double eta_min) {
  if (t >= t_max) return eta_min;
  if (t <= 0.0) return lr_max;
  return eta_min + (lr_max - eta_min) * (1.0 + std::cos(std::numbers::pi * t / t_max)) / 2.0;
}

}  // namespace restgate::optim
