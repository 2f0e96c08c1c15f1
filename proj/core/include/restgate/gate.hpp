#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "restgate/ops.hpp"
#include "restgate/param_io.hpp"
#include "restgate/tensor.hpp"

namespace restgate {

// Mode plus the key material for counter-based dropout masks.
struct ForwardContext {
  Mode mode = Mode::Eval;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::uint64_t batch = 0;

  std::uint64_t dropout_stream(std::uint64_t layer) const;
};

namespace gate {

// Where the rest center vector is taken. PostSpatial compares D = 16 feature
// vectors after the spatial block; PreSpatial compares the 16*C node
// embeddings straight out of the graph block against temporal MI features.
enum class CenterMode { PostSpatial, PreSpatial };

inline constexpr std::size_t kFeatureMaps = 16;

struct GateConfig {
  std::size_t channels = 22;
  double fs = 250.0;
  double dropout = 0.25;
  CenterMode center = CenterMode::PostSpatial;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
};

// round(fs / 32), at least 1.
std::size_t temporal_kernel_length(double fs);

struct GateParams {
  GateConfig config;
  Tensor temporal;       // [16, 1, 1, k_t]
  Tensor spatial;        // [16, 16, C, 1]
  Tensor adjacency_raw;  // [C, C], unconstrained
  BatchNormState bn_temporal;
  BatchNormState bn_spatial;

  // Kernels uniform in +-1/sqrt(fan_in); adjacency_raw all zeros.
  static GateParams init(const GateConfig& config, std::uint64_t seed);

  std::vector<NamedTensor> parameters() const;
  std::vector<NamedTensor> buffers() const;
};

// A = softplus((W + W^T) / 2) with the diagonal zeroed.
Tensor effective_adjacency(const Tensor& raw);

// D^-1/2 (A + I) D^-1/2 with D the row sums of A + I.
Tensor normalized_adjacency(const Tensor& adjacency);

// sigmoid(normalized_adjacency(A)), elementwise.
Tensor attention_matrix(const Tensor& adjacency);

// X' = S X per batch item, feature map and time step, S = attention_matrix(effective_adjacency(W)).
Tensor graph_attention(const Tensor& raw_adjacency, const Tensor& x);

// Same as graph_attention but with A supplied directly (skips the softplus map).
Tensor graph_attention_from_adjacency(const Tensor& adjacency, const Tensor& x);

// x: [B,1,C,T] -> [B,16,C,T-k_t+1]: valid temporal conv + batch norm.
Tensor temporal_block(const Tensor& x, GateParams& params, Mode mode);

// x: [B,16,C,T] -> [B,16,1,T]: C x 1 conv, batch norm, ELU, dropout.
Tensor spatial_block(const Tensor& x, GateParams& params, const ForwardContext& ctx,
                     std::uint64_t dropout_layer);

struct SimilarityGate {
  Tensor center;  // [B, D]
  Tensor cosine;  // [B, M]
  Tensor gate;    // [B, M], (1 - cosine) / 2
};

// rest: [B,D,1,R] (or [B,D,R]), mi: [B,D,1,M] (or [B,D,M]).
SimilarityGate similarity_gate(const Tensor& rest_features, const Tensor& mi_features);

// raw_mi: [B,C,T], gate: [B,M] in [0,1] -> [B,C,T]. The gate is linearly
// resampled to T and multiplied into every channel.
Tensor apply_gate(const Tensor& raw_mi, const Tensor& gate);

struct GateOutput {
  Tensor gate;            // [B, M]
  Tensor upsampled_gate;  // [B, T_mi]
  Tensor gated_mi;        // [B, C, T_mi]
  Tensor center;          // [B, D]
  Tensor cosine;          // [B, M]
};

struct GateOptions {
  // Replaces the computed gate by a constant; used to check the identity path.
  std::optional<double> force_gate;
};

// rest_raw: [B,C,T_rest], mi_raw: [B,C,T_mi].
GateOutput gate_block_forward(const Tensor& rest_raw, const Tensor& mi_raw, GateParams& params,
                              const ForwardContext& ctx, const GateOptions& options = {});

}  // namespace gate
}  // namespace restgate
