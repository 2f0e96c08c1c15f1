#include "restgate/models.hpp"

#include <cmath>

#include "restgate/errors.hpp"
#include "restgate/rng.hpp"

namespace restgate::models {

namespace {

constexpr std::uint64_t kClassifierDropoutLayer = 21;

Tensor uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = rng.uniform(-bound, bound);
  t.set_requires_grad();
  return t;
}

Tensor as_image(const Tensor& x) {
  if (x.rank() == 4 && x.dim(1) == 1) return x;
  if (x.rank() == 3) return reshape(x, {x.dim(0), 1, x.dim(1), x.dim(2)});
  throw DimensionError("classifier: expected [B,1,C,T] or [B,C,T], got " + shape_str(x.shape()));
}

}  // namespace

std::size_t ClassifierConfig::pooled_length() const {
  if (samples < min_samples())
    throw LengthError("classifier: " + std::to_string(samples) + " samples, needs at least " +
                      std::to_string(min_samples()));
  return (samples - temporal_length + 1 - pool_window) / pool_stride + 1;
}

ClassifierParams ClassifierParams::init(const ClassifierConfig& config, std::uint64_t seed) {
  Rng rng(mix_keys({seed, 0xC1A5}));
  const std::size_t K = config.kernels, C = config.channels, F = config.feature_width();
  ClassifierParams p{config,
                     uniform_fan_in({K, 1, 1, config.temporal_length}, config.temporal_length, rng),
                     uniform_fan_in({K, K, C, 1}, K * C, rng),
                     BatchNormState(K, config.bn_eps, config.bn_momentum),
                     uniform_fan_in({config.n_classes, F}, F, rng),
                     uniform_fan_in({config.n_classes}, F, rng)};
  return p;
}

std::vector<NamedTensor> ClassifierParams::parameters() const {
  return {{"classifier.temporal.kernel", temporal},
          {"classifier.spatial.kernel", spatial},
          {"classifier.bn.gamma", bn.gamma},
          {"classifier.bn.beta", bn.beta},
          {"classifier.dense.weight", dense_weight},
          {"classifier.dense.bias", dense_bias}};
}

std::vector<NamedTensor> ClassifierParams::buffers() const {
  return {{"classifier.bn.running_mean", Tensor({bn.running_mean.size()}, bn.running_mean)},
          {"classifier.bn.running_var", Tensor({bn.running_var.size()}, bn.running_var)}};
}

Tensor classifier_features(const Tensor& x, ClassifierParams& params, const ForwardContext& ctx) {
  const Tensor img = as_image(x);
  const auto& cfg = params.config;
  if (img.dim(2) != cfg.channels)
    throw DimensionError("classifier: expected " + std::to_string(cfg.channels) + " channels, got " +
                         std::to_string(img.dim(2)));
  if (img.dim(3) != cfg.samples)
    throw LengthError("classifier: expected " + std::to_string(cfg.samples) + " samples, got " +
                      std::to_string(img.dim(3)));
  (void)cfg.pooled_length();

  Tensor h = conv2d(img, params.temporal, Padding::Valid);
  h = conv2d(h, params.spatial, Padding::Valid);
  h = batch_norm(h, params.bn, ctx.mode);
  h = activation(Activation::Square, h);
  h = avg_pool2d(h, {1, cfg.pool_window}, {1, cfg.pool_stride});
  h = activation(Activation::LogClamped, h);
  h = dropout(h, cfg.dropout, ctx.mode, ctx.dropout_stream(kClassifierDropoutLayer));
  return reshape(h, {h.dim(0), cfg.feature_width()});
}

Tensor classifier_forward(const Tensor& x, ClassifierParams& params, const ForwardContext& ctx) {
  return dense(classifier_features(x, params, ctx), params.dense_weight, params.dense_bias);
}

IntegratedModel IntegratedModel::init(const ModelConfig& config, std::uint64_t seed) {
  if (config.gate.channels != config.classifier.channels)
    throw ConfigError("model: gate and classifier disagree on the channel count");
  return {gate::GateParams::init(config.gate, seed), ClassifierParams::init(config.classifier, seed),
          config.use_gate};
}

ModelConfig IntegratedModel::config() const { return {gate.config, classifier.config, use_gate}; }

std::vector<NamedTensor> IntegratedModel::parameters() const {
  std::vector<NamedTensor> out;
  if (use_gate) out = gate.parameters();
  for (auto& p : classifier.parameters()) out.push_back(std::move(p));
  return out;
}

std::vector<NamedTensor> IntegratedModel::buffers() const {
  std::vector<NamedTensor> out;
  if (use_gate) out = gate.buffers();
  for (auto& b : classifier.buffers()) out.push_back(std::move(b));
  return out;
}

std::size_t IntegratedModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

namespace {

Tensor classifier_input(const Tensor& rest, const Tensor& mi, IntegratedModel& model,
                        const ForwardContext& ctx, const gate::GateOptions& options) {
  if (!model.use_gate) return mi;
  return gate::gate_block_forward(rest, mi, model.gate, ctx, options).gated_mi;
}

}  // namespace

Tensor integrated_forward(const Tensor& rest, const Tensor& mi, IntegratedModel& model,
                          const ForwardContext& ctx, const gate::GateOptions& options) {
  return classifier_forward(classifier_input(rest, mi, model, ctx, options), model.classifier, ctx);
}

Tensor extract_features(const Tensor& rest, const Tensor& mi, IntegratedModel& model) {
  NoGradGuard no_grad;
  const ForwardContext ctx{Mode::Eval, 0, 0, 0};
  return classifier_features(classifier_input(rest, mi, model, ctx, {}), model.classifier, ctx);
}

}  // namespace restgate::models
