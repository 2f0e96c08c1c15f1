#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "restgate/tensor.hpp"

namespace restgate {

enum class Mode { Train, Eval };

enum class Padding { Valid, Same };

enum class Activation { Elu, Sigmoid, Softplus, Square, LogClamped };

inline constexpr double kLogClampFloor = 1e-7;

// Learnable affine parameters plus running statistics for one batch-norm layer.
// Normalization divides by max(std, eps), so a degenerate channel maps to the shift.
struct BatchNormState {
  explicit BatchNormState(std::size_t channels, double eps = 1e-5, double momentum = 0.1);

  Tensor gamma;
  Tensor beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double eps;
  double momentum;
  std::uint64_t updates = 0;
};

// x: [B,Cin,H,W], kernel: [Cout,Cin,kh,kw], stride 1. Same padding puts the odd
// extra zero on the trailing side.
Tensor conv2d(const Tensor& x, const Tensor& kernel, Padding padding = Padding::Valid);

// Per-channel normalization of [B,C,H,W] over (B,H,W). Train mode updates the
// running statistics in `state` (unbiased variance, exponential momentum).
Tensor batch_norm(const Tensor& x, BatchNormState& state, Mode mode);

Tensor activation(Activation kind, const Tensor& x);

Tensor reduce_mean(const Tensor& x, std::span<const std::size_t> axes);
Tensor reduce_mean(const Tensor& x, std::initializer_list<std::size_t> axes);
Tensor reduce_sum(const Tensor& x, std::span<const std::size_t> axes);
Tensor reduce_sum(const Tensor& x, std::initializer_list<std::size_t> axes);
Tensor sum(const Tensor& x);

inline constexpr double kCosineEps = 1e-8;

// Scalar cosine of two rank-1 tensors with norms floored at eps; clamped to [-1, 1].
Tensor cosine_similarity(const Tensor& a, const Tensor& b, double eps = kCosineEps);

// center: [B,D], features: [B,D,M] -> [B,M]: cosine of every column of
// features[b] against center[b].
Tensor cosine_similarity_columns(const Tensor& center, const Tensor& features,
                                 double eps = kCosineEps);

// Linear interpolation of the last axis from M to `length` samples, endpoints
// preserved. M == 1 or length == 1 yields the first value repeated.
Tensor linear_resample(const Tensor& v, std::size_t length);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise with NumPy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor pow_scalar(const Tensor& x, double exponent);

Tensor reshape(const Tensor& x, Shape shape);

// x: [B,in], weight: [out,in], bias: [out] -> [B,out].
Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Average pooling over the two trailing axes of [B,C,H,W].
Tensor avg_pool2d(const Tensor& x, std::array<std::size_t, 2> window,
                  std::array<std::size_t, 2> stride);

// Train mode zeroes each element with probability p (decided by a counter-based
// draw keyed on `stream`) and scales survivors by 1/(1-p). Eval mode and p == 0
// return the input unchanged.
Tensor dropout(const Tensor& x, double p, Mode mode, std::uint64_t stream);

// Mean cross-entropy over rows of logits [B,K] (or a single row [K]).
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

// Row-wise softmax, not recorded on the tape.
std::vector<double> softmax_rows(const Tensor& logits);

// out[b,f,i,t] = sum_j mixing[i,j] * x[b,f,j,t]; mixing: [C,C], x: [B,F,C,T].
Tensor channel_mix(const Tensor& mixing, const Tensor& x);

}  // namespace restgate
