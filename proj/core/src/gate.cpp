#include "restgate/gate.hpp"

#include <cmath>

#include "restgate/errors.hpp"
#include "restgate/rng.hpp"

namespace restgate {

std::uint64_t ForwardContext::dropout_stream(std::uint64_t layer) const {
  return mix_keys({seed, epoch, batch, layer});
}

namespace gate {

namespace {

constexpr std::uint64_t kRestDropoutLayer = 11;
constexpr std::uint64_t kMiDropoutLayer = 12;

Tensor uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = rng.uniform(-bound, bound);
  t.set_requires_grad();
  return t;
}

Tensor identity(std::size_t n) {
  Tensor eye({n, n});
  for (std::size_t i = 0; i < n; ++i) eye.mutable_data()[i * n + i] = 1.0;
  return eye;
}

}  // namespace

std::size_t temporal_kernel_length(double fs) {
  const auto k = static_cast<std::size_t>(std::llround(fs / 32.0));
  return k == 0 ? 1 : k;
}

GateParams GateParams::init(const GateConfig& config, std::uint64_t seed) {
  if (config.channels == 0) throw ConfigError("gate: channel count must be positive");
  Rng rng(mix_keys({seed, 0x6A7E}));
  const std::size_t kt = temporal_kernel_length(config.fs);
  const std::size_t C = config.channels;
  GateParams p{config,
               uniform_fan_in({kFeatureMaps, 1, 1, kt}, kt, rng),
               uniform_fan_in({kFeatureMaps, kFeatureMaps, C, 1}, kFeatureMaps * C, rng),
               Tensor({C, C}, 0.0),
               BatchNormState(kFeatureMaps, config.bn_eps, config.bn_momentum),
               BatchNormState(kFeatureMaps, config.bn_eps, config.bn_momentum)};
  p.adjacency_raw.set_requires_grad();
  return p;
}

std::vector<NamedTensor> GateParams::parameters() const {
  return {{"gate.temporal.kernel", temporal},
          {"gate.temporal.bn.gamma", bn_temporal.gamma},
          {"gate.temporal.bn.beta", bn_temporal.beta},
          {"gate.graph.adjacency_raw", adjacency_raw},
          {"gate.spatial.kernel", spatial},
          {"gate.spatial.bn.gamma", bn_spatial.gamma},
          {"gate.spatial.bn.beta", bn_spatial.beta}};
}

std::vector<NamedTensor> GateParams::buffers() const {
  auto vec = [](const std::vector<double>& v) { return Tensor({v.size()}, v); };
  return {{"gate.temporal.bn.running_mean", vec(bn_temporal.running_mean)},
          {"gate.temporal.bn.running_var", vec(bn_temporal.running_var)},
          {"gate.spatial.bn.running_mean", vec(bn_spatial.running_mean)},
          {"gate.spatial.bn.running_var", vec(bn_spatial.running_var)}};
}

Tensor effective_adjacency(const Tensor& raw) {
  if (raw.rank() != 2 || raw.dim(0) != raw.dim(1))
    throw DimensionError("adjacency must be square, got " + shape_str(raw.shape()));
  const std::size_t C = raw.dim(0);
  Tensor off_diagonal({C, C}, 1.0);
  for (std::size_t i = 0; i < C; ++i) off_diagonal.mutable_data()[i * C + i] = 0.0;
  const Tensor sym = scale(add(raw, transpose(raw)), 0.5);
  return mul(activation(Activation::Softplus, sym), off_diagonal);
}

Tensor normalized_adjacency(const Tensor& adjacency) {
  if (adjacency.rank() != 2 || adjacency.dim(0) != adjacency.dim(1))
    throw DimensionError("adjacency must be square, got " + shape_str(adjacency.shape()));
  const std::size_t C = adjacency.dim(0);
  const Tensor with_loops = add(adjacency, identity(C));
  const Tensor inv_sqrt_degree = pow_scalar(reduce_sum(with_loops, {1}), -0.5);
  const Tensor outer = mul(reshape(inv_sqrt_degree, {C, 1}), reshape(inv_sqrt_degree, {1, C}));
  return mul(outer, with_loops);
}

Tensor attention_matrix(const Tensor& adjacency) {
  return activation(Activation::Sigmoid, normalized_adjacency(adjacency));
}

Tensor graph_attention_from_adjacency(const Tensor& adjacency, const Tensor& x) {
  return channel_mix(attention_matrix(adjacency), x);
}

Tensor graph_attention(const Tensor& raw_adjacency, const Tensor& x) {
  return graph_attention_from_adjacency(effective_adjacency(raw_adjacency), x);
}

Tensor temporal_block(const Tensor& x, GateParams& params, Mode mode) {
  if (x.rank() != 4 || x.dim(1) != 1)
    throw DimensionError("temporal_block: expected [B,1,C,T], got " + shape_str(x.shape()));
  const std::size_t kt = params.temporal.dim(3);
  if (x.dim(3) < kt)
    throw LengthError("temporal_block: " + std::to_string(x.dim(3)) +
                      " samples is shorter than the kernel length " + std::to_string(kt));
  return batch_norm(conv2d(x, params.temporal, Padding::Valid), params.bn_temporal, mode);
}

Tensor spatial_block(const Tensor& x, GateParams& params, const ForwardContext& ctx,
                     std::uint64_t dropout_layer) {
  if (x.rank() != 4 || x.dim(2) != params.spatial.dim(2))
    throw DimensionError("spatial_block: input " + shape_str(x.shape()) + " does not have " +
                         std::to_string(params.spatial.dim(2)) + " electrode rows");
  Tensor h = conv2d(x, params.spatial, Padding::Valid);
  h = batch_norm(h, params.bn_spatial, ctx.mode);
  h = activation(Activation::Elu, h);
  return dropout(h, params.config.dropout, ctx.mode, ctx.dropout_stream(dropout_layer));
}

SimilarityGate similarity_gate(const Tensor& rest_features, const Tensor& mi_features) {
  auto as3 = [](const Tensor& t, const char* name) {
    if (t.rank() == 4 && t.dim(2) == 1) return reshape(t, {t.dim(0), t.dim(1), t.dim(3)});
    if (t.rank() == 3) return t;
    throw DimensionError(std::string("similarity_gate: ") + name + " must be [B,D,1,T] or [B,D,T], got " +
                         shape_str(t.shape()));
  };
  const Tensor rest = as3(rest_features, "rest");
  const Tensor mi = as3(mi_features, "mi");
  if (rest.dim(0) != mi.dim(0) || rest.dim(1) != mi.dim(1))
    throw DimensionError("similarity_gate: rest " + shape_str(rest.shape()) + " vs mi " +
                         shape_str(mi.shape()));
  SimilarityGate out;
  out.center = reduce_mean(rest, {2});
  out.cosine = cosine_similarity_columns(out.center, mi);
  out.gate = add_scalar(scale(out.cosine, -0.5), 0.5);
  return out;
}

Tensor apply_gate(const Tensor& raw_mi, const Tensor& gate) {
  if (raw_mi.rank() != 3 || gate.rank() != 2 || gate.dim(0) != raw_mi.dim(0))
    throw DimensionError("apply_gate: raw " + shape_str(raw_mi.shape()) + ", gate " +
                         shape_str(gate.shape()));
  for (double g : gate.values())
    if (!(g >= 0.0 && g <= 1.0)) throw ContractError("apply_gate: gate value outside [0, 1]");
  const std::size_t B = raw_mi.dim(0), T = raw_mi.dim(2);
  const Tensor up = linear_resample(gate, T);
  return mul(raw_mi, reshape(up, {B, 1, T}));
}

GateOutput gate_block_forward(const Tensor& rest_raw, const Tensor& mi_raw, GateParams& params,
                              const ForwardContext& ctx, const GateOptions& options) {
  if (rest_raw.rank() != 3 || mi_raw.rank() != 3 || rest_raw.dim(0) != mi_raw.dim(0) ||
      rest_raw.dim(1) != mi_raw.dim(1))
    throw DimensionError("gate: rest " + shape_str(rest_raw.shape()) + " and mi " +
                         shape_str(mi_raw.shape()) + " must be [B,C,T] with matching B and C");
  if (rest_raw.dim(1) != params.config.channels)
    throw DimensionError("gate: expected " + std::to_string(params.config.channels) +
                         " channels, got " + std::to_string(rest_raw.dim(1)));
  const std::size_t B = rest_raw.dim(0), C = rest_raw.dim(1);
  const std::size_t T_rest = rest_raw.dim(2), T_mi = mi_raw.dim(2);

  const Tensor rest_t = temporal_block(reshape(rest_raw, {B, 1, C, T_rest}), params, ctx.mode);
  const Tensor mi_t = temporal_block(reshape(mi_raw, {B, 1, C, T_mi}), params, ctx.mode);
  const Tensor rest_g = graph_attention(params.adjacency_raw, rest_t);

  SimilarityGate sim;
  if (params.config.center == CenterMode::PostSpatial) {
    const Tensor rest_s = spatial_block(rest_g, params, ctx, kRestDropoutLayer);
    const Tensor mi_s = spatial_block(mi_t, params, ctx, kMiDropoutLayer);
    sim = similarity_gate(rest_s, mi_s);
  } else {
    const std::size_t R = rest_g.dim(3), M = mi_t.dim(3);
    sim = similarity_gate(reshape(rest_g, {B, kFeatureMaps * C, R}),
                          reshape(mi_t, {B, kFeatureMaps * C, M}));
  }

  GateOutput out;
  out.center = sim.center;
  out.cosine = sim.cosine;
  out.gate = options.force_gate ? Tensor(sim.gate.shape(), *options.force_gate) : sim.gate;
  out.upsampled_gate = linear_resample(out.gate, T_mi);
  out.gated_mi = apply_gate(mi_raw, out.gate);
  return out;
}

}  // namespace gate
}  // namespace restgate
