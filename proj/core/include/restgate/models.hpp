#pragma once

#include <cstdint>
#include <vector>

#include "restgate/gate.hpp"

namespace restgate::models {

struct ClassifierConfig {
  std::size_t channels = 22;
  std::size_t samples = 1000;  // MI window length
  std::size_t n_classes = 4;
  std::size_t kernels = 8;
  std::size_t temporal_length = 25;
  std::size_t pool_window = 75;
  std::size_t pool_stride = 15;
  double dropout = 0.25;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  std::size_t pooled_length() const;
  std::size_t feature_width() const { return kernels * pooled_length(); }
  std::size_t min_samples() const { return temporal_length - 1 + pool_window; }
};

// Temporal conv -> spatial conv -> batch norm -> square -> average pool -> log -> dropout -> dense.
struct ClassifierParams {
  ClassifierConfig config;
  Tensor temporal;  // [K, 1, 1, temporal_length]
  Tensor spatial;   // [K, K, C, 1]
  BatchNormState bn;
  Tensor dense_weight;  // [n_classes, feature_width]
  Tensor dense_bias;    // [n_classes]

  static ClassifierParams init(const ClassifierConfig& config, std::uint64_t seed);

  std::vector<NamedTensor> parameters() const;
  std::vector<NamedTensor> buffers() const;
};

// x: [B,1,C,T] or [B,C,T] -> [B, feature_width], the activations that feed the dense layer.
Tensor classifier_features(const Tensor& x, ClassifierParams& params, const ForwardContext& ctx);

// x: [B,1,C,T] or [B,C,T] -> logits [B, n_classes].
Tensor classifier_forward(const Tensor& x, ClassifierParams& params, const ForwardContext& ctx);

struct ModelConfig {
  gate::GateConfig gate;
  ClassifierConfig classifier;
  bool use_gate = true;
};

struct IntegratedModel {
  gate::GateParams gate;
  ClassifierParams classifier;
  bool use_gate = true;

  static IntegratedModel init(const ModelConfig& config, std::uint64_t seed);

  ModelConfig config() const;
  // Gate parameters are listed only when the gate is in use.
  std::vector<NamedTensor> parameters() const;
  std::vector<NamedTensor> buffers() const;
  std::size_t parameter_count() const;
};

// rest: [B,C,T_rest], mi: [B,C,T_mi]. Without the gate the classifier sees raw MI.
Tensor integrated_forward(const Tensor& rest, const Tensor& mi, IntegratedModel& model,
                          const ForwardContext& ctx, const gate::GateOptions& options = {});

// Eval-mode penultimate features for projection.
Tensor extract_features(const Tensor& rest, const Tensor& mi, IntegratedModel& model);

}  // namespace restgate::models
