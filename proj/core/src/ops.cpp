#include "restgate/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "restgate/errors.hpp"
#include "restgate/rng.hpp"

namespace restgate {

namespace {

using ImplPtr = std::shared_ptr<TensorImpl>;

Tensor finish(const char* op, Shape shape, std::vector<double> data,
              std::initializer_list<const Tensor*> inputs, Tape::BackwardFn fn) {
  for (double v : data)
    if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");

  Tensor out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;

  bool needs = false;
  for (const Tensor* t : inputs) needs = needs || t->requires_grad();
  if (!needs) return out;

  out.set_requires_grad(true);
  Tape::Entry entry{op, {}, out.impl(), std::move(fn)};
  for (const Tensor* t : inputs) entry.inputs.push_back(t->impl());
  Tape::current().record(std::move(entry));
  return out;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* name) {
  if (t.rank() != rank)
    throw DimensionError(std::string(op) + ": " + name + " must have rank " +
                         std::to_string(rank) + ", got " + shape_str(t.shape()));
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  bool same = false;
};

Broadcast broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  Broadcast bc;
  if (a == b) {
    bc.out = a;
    bc.same = true;
    return bc;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  bc.out.assign(rank, 1);
  std::vector<std::size_t> ea(rank, 1), eb(rank, 1);
  std::copy(a.begin(), a.end(), ea.begin() + static_cast<std::ptrdiff_t>(rank - a.size()));
  std::copy(b.begin(), b.end(), eb.begin() + static_cast<std::ptrdiff_t>(rank - b.size()));
  for (std::size_t i = 0; i < rank; ++i) {
    if (ea[i] != eb[i] && ea[i] != 1 && eb[i] != 1)
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                           shape_str(b));
    bc.out[i] = std::max(ea[i], eb[i]);
  }
  const auto sa = strides_of(ea);
  const auto sb = strides_of(eb);
  bc.stride_a.resize(rank);
  bc.stride_b.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    bc.stride_a[i] = ea[i] == 1 ? 0 : sa[i];
    bc.stride_b[i] = eb[i] == 1 ? 0 : sb[i];
  }
  return bc;
}

template <class F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  const std::size_t n = shape_numel(bc.out);
  if (bc.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t rank = bc.out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < n; ++o) {
    f(o, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += bc.stride_a[d];
      ib += bc.stride_b[d];
      if (idx[d] < bc.out[d]) break;
      ia -= bc.stride_a[d] * idx[d];
      ib -= bc.stride_b[d] * idx[d];
      idx[d] = 0;
    }
  }
}

// Maps every input flat index to its reduced output index.
std::vector<std::size_t> reduction_map(const Shape& in, std::span<const std::size_t> axes,
                                       Shape& out_shape) {
  std::vector<bool> reduced(in.size(), false);
  for (auto a : axes) {
    if (a >= in.size())
      throw DimensionError("reduce: axis " + std::to_string(a) + " out of range for " +
                           shape_str(in));
    reduced[a] = true;
  }
  out_shape.clear();
  for (std::size_t i = 0; i < in.size(); ++i)
    if (!reduced[i]) out_shape.push_back(in[i]);
  const auto out_strides = strides_of(out_shape);
  std::vector<std::size_t> step(in.size(), 0);
  for (std::size_t i = 0, k = 0; i < in.size(); ++i)
    if (!reduced[i]) step[i] = out_strides[k++];

  const std::size_t n = shape_numel(in);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(in.size(), 0);
  std::size_t o = 0;
  for (std::size_t i = 0; i < n; ++i) {
    map[i] = o;
    for (std::size_t d = in.size(); d-- > 0;) {
      ++idx[d];
      o += step[d];
      if (idx[d] < in[d]) break;
      o -= step[d] * idx[d];
      idx[d] = 0;
    }
  }
  return map;
}

}  // namespace

BatchNormState::BatchNormState(std::size_t channels, double eps_, double momentum_)
    : gamma(Shape{channels}, 1.0),
      beta(Shape{channels}, 0.0),
      running_mean(channels, 0.0),
      running_var(channels, 1.0),
      eps(eps_),
      momentum(momentum_) {
  gamma.set_requires_grad();
  beta.set_requires_grad();
}

namespace {

// Four interleaved partial sums let the compiler keep several multiply-adds in
// flight; the summation order is fixed, so results stay deterministic.
double dot_shifted(const double* g, const double* x, std::ptrdiff_t lo, std::ptrdiff_t hi, std::ptrdiff_t shift) {
  double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
  std::ptrdiff_t j = lo;
  for (; j + 4 <= hi; j += 4) {
    a0 += g[j] * x[j + shift];
    a1 += g[j + 1] * x[j + 1 + shift];
    a2 += g[j + 2] * x[j + 2 + shift];
    a3 += g[j + 3] * x[j + 3 + shift];
  }
  for (; j < hi; ++j) a0 += g[j] * x[j + shift];
  return (a0 + a1) + (a2 + a3);
}

// Output columns are processed in tiles so the input rows a tile touches stay
// cache resident while every output channel reuses them.
constexpr std::ptrdiff_t kConvTile = 256;

struct ConvGeometry {
  std::size_t B, Cin, H, W, Cout, kh, kw, Ho, Wo, pad_top, pad_left;

  // For output column j and kernel tap q the input column is j + shift; returns
  // the [lo, hi) range of j, clipped to the tile [t0, t1), for which it exists.
  std::array<std::ptrdiff_t, 3> columns(std::size_t q, std::ptrdiff_t t0, std::ptrdiff_t t1) const {
    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(q) - static_cast<std::ptrdiff_t>(pad_left);
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(t0, -shift);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(t1, static_cast<std::ptrdiff_t>(W) - shift);
    return {lo, std::max(lo, hi), shift};
  }

  // Input row feeding output row i through kernel row p, or -1 when it falls in the padding.
  std::ptrdiff_t input_row(std::size_t i, std::size_t p) const {
    const std::ptrdiff_t row = static_cast<std::ptrdiff_t>(i + p) - static_cast<std::ptrdiff_t>(pad_top);
    return row < 0 || row >= static_cast<std::ptrdiff_t>(H) ? -1 : row;
  }
};

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, Padding padding) {
  require_rank(x, 4, "conv2d", "input");
  require_rank(kernel, 4, "conv2d", "kernel");
  ConvGeometry G{};
  G.B = x.dim(0);
  G.Cin = x.dim(1);
  G.H = x.dim(2);
  G.W = x.dim(3);
  G.Cout = kernel.dim(0);
  G.kh = kernel.dim(2);
  G.kw = kernel.dim(3);
  if (kernel.dim(1) != G.Cin)
    throw DimensionError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                         " input channels, input has " + std::to_string(G.Cin));

  if (padding == Padding::Same) {
    G.pad_top = (G.kh - 1) / 2;
    G.pad_left = (G.kw - 1) / 2;
    G.Ho = G.H;
    G.Wo = G.W;
  } else {
    if (G.kh > G.H || G.kw > G.W)
      throw LengthError("conv2d: kernel " + shape_str(kernel.shape()) + " larger than input " +
                        shape_str(x.shape()));
    G.Ho = G.H - G.kh + 1;
    G.Wo = G.W - G.kw + 1;
  }

  const auto& xd = x.values();
  const auto& kd = kernel.values();
  const std::size_t B = G.B, Cin = G.Cin, H = G.H, W = G.W, Cout = G.Cout, kh = G.kh, kw = G.kw,
                    Ho = G.Ho, Wo = G.Wo;
  std::vector<double> out(B * Cout * Ho * Wo, 0.0);
  const auto n_cols = static_cast<std::ptrdiff_t>(Wo);

  for (std::size_t b = 0; b < B; ++b)
    for (std::ptrdiff_t t0 = 0; t0 < n_cols; t0 += kConvTile) {
      const std::ptrdiff_t t1 = std::min(n_cols, t0 + kConvTile);
      for (std::size_t o = 0; o < Cout; ++o)
        for (std::size_t i = 0; i < Ho; ++i) {
          double* yr = &out[((b * Cout + o) * Ho + i) * Wo];
          for (std::size_t c = 0; c < Cin; ++c)
            for (std::size_t p = 0; p < kh; ++p) {
              const std::ptrdiff_t row = G.input_row(i, p);
              if (row < 0) continue;
              const double* xr = &xd[((b * Cin + c) * H + static_cast<std::size_t>(row)) * W];
              const double* kr = &kd[((o * Cin + c) * kh + p) * kw];
              for (std::size_t q = 0; q < kw; ++q) {
                const double w = kr[q];
                const auto [lo, hi, shift] = G.columns(q, t0, t1);
                for (std::ptrdiff_t j = lo; j < hi; ++j) yr[j] += w * xr[j + shift];
              }
            }
        }
    }

  auto xi = x.impl();
  auto ki = kernel.impl();
  return finish("conv2d", {B, Cout, Ho, Wo}, std::move(out), {&x, &kernel},
                [=](const TensorImpl& y) {
                  const auto& g = y.grad;
                  const auto& xv = xi->data;
                  const auto& kv = ki->data;
                  std::span<double> gx, gk;
                  if (xi->requires_grad) gx = xi->grad_buffer();
                  if (ki->requires_grad) gk = ki->grad_buffer();
                  for (std::size_t b = 0; b < B; ++b)
                    for (std::ptrdiff_t t0 = 0; t0 < n_cols; t0 += kConvTile) {
                      const std::ptrdiff_t t1 = std::min(n_cols, t0 + kConvTile);
                      for (std::size_t c = 0; c < Cin; ++c)
                        for (std::size_t o = 0; o < Cout; ++o)
                          for (std::size_t i = 0; i < Ho; ++i) {
                            const double* gr = &g[((b * Cout + o) * Ho + i) * Wo];
                            for (std::size_t p = 0; p < kh; ++p) {
                              const std::ptrdiff_t row = G.input_row(i, p);
                              if (row < 0) continue;
                              const std::size_t xoff = ((b * Cin + c) * H + static_cast<std::size_t>(row)) * W;
                              const std::size_t kbase = ((o * Cin + c) * kh + p) * kw;
                              for (std::size_t q = 0; q < kw; ++q) {
                                const auto [lo, hi, shift] = G.columns(q, t0, t1);
                                if (!gx.empty()) {
                                  const double w = kv[kbase + q];
                                  double* gxr = &gx[xoff];
                                  for (std::ptrdiff_t j = lo; j < hi; ++j) gxr[j + shift] += w * gr[j];
                                }
                                if (!gk.empty()) gk[kbase + q] += dot_shifted(gr, &xv[xoff], lo, hi, shift);
                              }
                            }
                          }
                    }
                });
}

Tensor batch_norm(const Tensor& x, BatchNormState& state, Mode mode) {
  require_rank(x, 4, "batch_norm", "input");
  const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (state.gamma.numel() != C)
    throw DimensionError("batch_norm: state has " + std::to_string(state.gamma.numel()) +
                         " channels, input has " + std::to_string(C));
  const std::size_t n = B * HW;
  if (mode == Mode::Train && n < 2)
    throw DomainError("batch_norm: train mode needs at least 2 values per channel");

  const auto& xd = x.values();
  const auto& gm = state.gamma.values();
  const auto& bt = state.beta.values();
  std::vector<double> mean(C), inv_std(C);
  std::vector<bool> floored(C, false);

  for (std::size_t c = 0; c < C; ++c) {
    double mu, var;
    if (mode == Mode::Train) {
      double s = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const double* p = &xd[(b * C + c) * HW];
        for (std::size_t k = 0; k < HW; ++k) s += p[k];
      }
      mu = s / static_cast<double>(n);
      double ss = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const double* p = &xd[(b * C + c) * HW];
        for (std::size_t k = 0; k < HW; ++k) ss += (p[k] - mu) * (p[k] - mu);
      }
      var = ss / static_cast<double>(n);
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mu;
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] +
                             state.momentum * var * static_cast<double>(n) / static_cast<double>(n - 1);
    } else {
      mu = state.running_mean[c];
      var = state.running_var[c];
    }
    const double sd = std::sqrt(var);
    floored[c] = !(sd > state.eps);
    mean[c] = mu;
    inv_std[c] = 1.0 / (floored[c] ? state.eps : sd);
  }
  if (mode == Mode::Train) ++state.updates;

  std::vector<double> xhat(x.numel()), out(x.numel());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t off = (b * C + c) * HW;
      for (std::size_t k = 0; k < HW; ++k) {
        const double h = (xd[off + k] - mean[c]) * inv_std[c];
        xhat[off + k] = h;
        out[off + k] = gm[c] * h + bt[c];
      }
    }

  auto xi = x.impl();
  auto gi = state.gamma.impl();
  auto bi = state.beta.impl();
  const bool train = mode == Mode::Train;
  return finish("batch_norm", x.shape(), std::move(out), {&x, &state.gamma, &state.beta},
                [=, xhat = std::move(xhat)](const TensorImpl& y) {
                  const auto& g = y.grad;
                  std::span<double> gx, gg, gb;
                  if (xi->requires_grad) gx = xi->grad_buffer();
                  if (gi->requires_grad) gg = gi->grad_buffer();
                  if (bi->requires_grad) gb = bi->grad_buffer();
                  const auto& gamma = gi->data;
                  for (std::size_t c = 0; c < C; ++c) {
                    double sum_g = 0.0, sum_gh = 0.0;
                    for (std::size_t b = 0; b < B; ++b) {
                      const std::size_t off = (b * C + c) * HW;
                      for (std::size_t k = 0; k < HW; ++k) {
                        sum_g += g[off + k];
                        sum_gh += g[off + k] * xhat[off + k];
                      }
                    }
                    if (!gg.empty()) gg[c] += sum_gh;
                    if (!gb.empty()) gb[c] += sum_g;
                    if (gx.empty()) continue;
                    const double scale_c = gamma[c] * inv_std[c];
                    const double nn = static_cast<double>(n);
                    for (std::size_t b = 0; b < B; ++b) {
                      const std::size_t off = (b * C + c) * HW;
                      for (std::size_t k = 0; k < HW; ++k) {
                        double d = g[off + k];
                        if (train) {
                          d -= sum_g / nn;
                          if (!floored[c]) d -= xhat[off + k] * sum_gh / nn;
                        }
                        gx[off + k] += scale_c * d;
                      }
                    }
                  }
                });
}

Tensor activation(Activation kind, const Tensor& x) {
  const auto& xd = x.values();
  std::vector<double> out(xd.size());
  switch (kind) {
    case Activation::Elu:
      for (std::size_t i = 0; i < xd.size(); ++i) out[i] = xd[i] >= 0.0 ? xd[i] : std::expm1(xd[i]);
      break;
    case Activation::Sigmoid:
      for (std::size_t i = 0; i < xd.size(); ++i) {
        const double v = xd[i];
        if (v >= 0.0) {
          out[i] = 1.0 / (1.0 + std::exp(-v));
        } else {
          const double e = std::exp(v);
          out[i] = e / (1.0 + e);
        }
      }
      break;
    case Activation::Softplus:
      for (std::size_t i = 0; i < xd.size(); ++i)
        out[i] = std::max(xd[i], 0.0) + std::log1p(std::exp(-std::abs(xd[i])));
      break;
    case Activation::Square:
      for (std::size_t i = 0; i < xd.size(); ++i) out[i] = xd[i] * xd[i];
      break;
    case Activation::LogClamped:
      for (std::size_t i = 0; i < xd.size(); ++i) out[i] = std::log(std::max(xd[i], kLogClampFloor));
      break;
  }

  auto xi = x.impl();
  std::vector<double> saved = kind == Activation::Sigmoid || kind == Activation::Elu ? out
                                                                                       : std::vector<double>{};
  return finish("activation", x.shape(), std::move(out), {&x},
                [=, saved = std::move(saved)](const TensorImpl& y) {
                  if (!xi->requires_grad) return;
                  auto gx = xi->grad_buffer();
                  const auto& g = y.grad;
                  const auto& v = xi->data;
                  for (std::size_t i = 0; i < v.size(); ++i) {
                    double d = 0.0;
                    switch (kind) {
                      case Activation::Elu: d = v[i] >= 0.0 ? 1.0 : saved[i] + 1.0; break;
                      case Activation::Sigmoid: d = saved[i] * (1.0 - saved[i]); break;
                      case Activation::Softplus: {
                        // logistic(v), computed without overflow
                        d = v[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-v[i]))
                                        : std::exp(v[i]) / (1.0 + std::exp(v[i]));
                        break;
                      }
                      case Activation::Square: d = 2.0 * v[i]; break;
                      case Activation::LogClamped: d = v[i] > kLogClampFloor ? 1.0 / v[i] : 0.0; break;
                    }
                    gx[i] += g[i] * d;
                  }
                });
}

Tensor reduce_sum(const Tensor& x, std::span<const std::size_t> axes) {
  Shape out_shape;
  auto map = reduction_map(x.shape(), axes, out_shape);
  std::vector<double> out(shape_numel(out_shape), 0.0);
  const auto& xd = x.values();
  for (std::size_t i = 0; i < xd.size(); ++i) out[map[i]] += xd[i];
  auto xi = x.impl();
  return finish("reduce_sum", std::move(out_shape), std::move(out), {&x},
                [xi, map = std::move(map)](const TensorImpl& y) {
                  if (!xi->requires_grad) return;
                  auto gx = xi->grad_buffer();
                  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += y.grad[map[i]];
                });
}

Tensor reduce_sum(const Tensor& x, std::initializer_list<std::size_t> axes) {
  return reduce_sum(x, std::span<const std::size_t>(axes.begin(), axes.size()));
}

Tensor reduce_mean(const Tensor& x, std::span<const std::size_t> axes) {
  if (axes.empty()) return x;
  std::size_t count = 1;
  std::vector<bool> seen(x.rank(), false);
  for (auto a : axes) {
    if (a >= x.rank())
      throw DimensionError("reduce_mean: axis " + std::to_string(a) + " out of range for " +
                           shape_str(x.shape()));
    if (!seen[a]) count *= x.dim(a);
    seen[a] = true;
  }
  return scale(reduce_sum(x, axes), 1.0 / static_cast<double>(count));
}

Tensor reduce_mean(const Tensor& x, std::initializer_list<std::size_t> axes) {
  return reduce_mean(x, std::span<const std::size_t>(axes.begin(), axes.size()));
}

Tensor sum(const Tensor& x) {
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  return reduce_sum(x, axes);
}

namespace {

constexpr double kCosineSnap = 1e-12;

struct CosineParts {
  double value;
  double na, nb;    // floored norms
  bool fa, fb;      // floor active
  double dot;
};

CosineParts cosine_parts(const double* a, const double* b, std::size_t D, std::size_t stride_b,
                         double eps) {
  double dot = 0.0, sa = 0.0, sb = 0.0;
  for (std::size_t d = 0; d < D; ++d) {
    const double x = a[d], y = b[d * stride_b];
    dot += x * y;
    sa += x * x;
    sb += y * y;
  }
  const double ra = std::sqrt(sa), rb = std::sqrt(sb);
  CosineParts p{};
  p.fa = !(ra > eps);
  p.fb = !(rb > eps);
  p.na = p.fa ? eps : ra;
  p.nb = p.fb ? eps : rb;
  p.dot = dot;
  const double denom = (!p.fa && !p.fb) ? std::sqrt(sa * sb) : p.na * p.nb;
  p.value = dot / denom;
  // Rounding leaves (anti)parallel pairs a few ulps short of +-1. The slope is
  // zero there, so snapping changes nothing but the last bits.
  if (std::abs(p.value) >= 1.0 - kCosineSnap) p.value = std::copysign(1.0, p.value);
  return p;
}

// d cos / d a (and symmetrically for b) with the norm floors treated as constants.
void cosine_grad(const double* a, const double* b, std::size_t D, std::size_t stride_b,
                 const CosineParts& p, double g, double* ga, double* gb) {
  const double inv = 1.0 / (p.na * p.nb);
  for (std::size_t d = 0; d < D; ++d) {
    const double x = a[d], y = b[d * stride_b];
    if (ga) ga[d] += g * (y * inv - (p.fa ? 0.0 : p.dot * inv * x / (p.na * p.na)));
    if (gb) gb[d * stride_b] += g * (x * inv - (p.fb ? 0.0 : p.dot * inv * y / (p.nb * p.nb)));
  }
}

}  // namespace

Tensor cosine_similarity(const Tensor& a, const Tensor& b, double eps) {
  require_rank(a, 1, "cosine_similarity", "a");
  require_rank(b, 1, "cosine_similarity", "b");
  if (a.numel() != b.numel())
    throw DimensionError("cosine_similarity: lengths differ " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  const std::size_t D = a.numel();
  const auto parts = cosine_parts(a.values().data(), b.values().data(), D, 1, eps);
  auto ai = a.impl();
  auto bi = b.impl();
  return finish("cosine_similarity", Shape{}, {parts.value}, {&a, &b},
                [=](const TensorImpl& y) {
                  double* ga = ai->requires_grad ? ai->grad_buffer().data() : nullptr;
                  double* gb = bi->requires_grad ? bi->grad_buffer().data() : nullptr;
                  cosine_grad(ai->data.data(), bi->data.data(), D, 1, parts, y.grad[0], ga, gb);
                });
}

Tensor cosine_similarity_columns(const Tensor& center, const Tensor& features, double eps) {
  require_rank(center, 2, "cosine_similarity_columns", "center");
  require_rank(features, 3, "cosine_similarity_columns", "features");
  const std::size_t B = center.dim(0), D = center.dim(1), M = features.dim(2);
  if (features.dim(0) != B || features.dim(1) != D)
    throw DimensionError("cosine_similarity_columns: center " + shape_str(center.shape()) +
                         " incompatible with features " + shape_str(features.shape()));
  std::vector<CosineParts> parts(B * M);
  std::vector<double> out(B * M);
  const auto& cd = center.values();
  const auto& fd = features.values();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < M; ++t) {
      parts[b * M + t] = cosine_parts(&cd[b * D], &fd[b * D * M + t], D, M, eps);
      out[b * M + t] = parts[b * M + t].value;
    }
  auto ci = center.impl();
  auto fi = features.impl();
  return finish("cosine_similarity_columns", {B, M}, std::move(out), {&center, &features},
                [=, parts = std::move(parts)](const TensorImpl& y) {
                  double* gc = ci->requires_grad ? ci->grad_buffer().data() : nullptr;
                  double* gf = fi->requires_grad ? fi->grad_buffer().data() : nullptr;
                  for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t t = 0; t < M; ++t)
                      cosine_grad(&ci->data[b * D], &fi->data[b * D * M + t], D, M, parts[b * M + t],
                                  y.grad[b * M + t], gc ? gc + b * D : nullptr,
                                  gf ? gf + b * D * M + t : nullptr);
                });
}

Tensor linear_resample(const Tensor& v, std::size_t length) {
  if (v.rank() == 0) throw DimensionError("linear_resample: needs at least rank 1");
  if (length == 0) throw DomainError("linear_resample: target length must be positive");
  const std::size_t M = v.shape().back();
  const std::size_t rows = v.numel() / M;

  std::vector<std::size_t> left(length);
  std::vector<double> frac(length);
  for (std::size_t i = 0; i < length; ++i) {
    if (M == 1 || length == 1) {
      left[i] = 0;
      frac[i] = 0.0;
      continue;
    }
    const std::size_t num = i * (M - 1);
    const std::size_t den = length - 1;
    left[i] = std::min(num / den, M - 2);
    frac[i] = static_cast<double>(num - left[i] * den) / static_cast<double>(den);
  }

  const auto& vd = v.values();
  std::vector<double> out(rows * length);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < length; ++i) {
      const double* row = &vd[r * M];
      const double lo = row[left[i]];
      const double hi = M > 1 ? row[left[i] + 1] : lo;
      out[r * length + i] = frac[i] == 0.0 ? lo : frac[i] == 1.0 ? hi : lo + frac[i] * (hi - lo);
    }

  Shape shape = v.shape();
  shape.back() = length;
  auto vi = v.impl();
  return finish("linear_resample", std::move(shape), std::move(out), {&v},
                [=, left = std::move(left), frac = std::move(frac)](const TensorImpl& y) {
                  if (!vi->requires_grad) return;
                  auto gv = vi->grad_buffer();
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t i = 0; i < length; ++i) {
                      const double g = y.grad[r * length + i];
                      gv[r * M + left[i]] += g * (1.0 - frac[i]);
                      if (frac[i] != 0.0) gv[r * M + left[i] + 1] += g * frac[i];
                    }
                });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul", "a");
  require_rank(b, 2, "matmul", "b");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const auto& ad = a.values();
  const auto& bd = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ad[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bd[p * n + j];
    }
  auto ai = a.impl();
  auto bi = b.impl();
  return finish("matmul", {m, n}, std::move(out), {&a, &b}, [=](const TensorImpl& y) {
    const auto& g = y.grad;
    if (ai->requires_grad) {
      auto ga = ai->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bi->data[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (bi->requires_grad) {
      auto gb = bi->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = ai->data[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose", "a");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.values()[i * n + j];
  auto ai = a.impl();
  return finish("transpose", {n, m}, std::move(out), {&a}, [=](const TensorImpl& y) {
    if (!ai->requires_grad) return;
    auto ga = ai->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += y.grad[j * m + i];
  });
}

namespace {

enum class BinaryKind { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* op) {
  auto bc = broadcast_shapes(a.shape(), b.shape(), op);
  const auto& ad = a.values();
  const auto& bd = b.values();
  std::vector<double> out(shape_numel(bc.out));
  for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    switch (kind) {
      case BinaryKind::Add: out[o] = ad[ia] + bd[ib]; break;
      case BinaryKind::Sub: out[o] = ad[ia] - bd[ib]; break;
      case BinaryKind::Mul: out[o] = ad[ia] * bd[ib]; break;
    }
  });
  auto ai = a.impl();
  auto bi = b.impl();
  Shape shape = bc.out;
  return finish(op, std::move(shape), std::move(out), {&a, &b},
                [=, bc = std::move(bc)](const TensorImpl& y) {
                  std::span<double> ga, gb;
                  if (ai->requires_grad) ga = ai->grad_buffer();
                  if (bi->requires_grad) gb = bi->grad_buffer();
                  const auto& av = ai->data;
                  const auto& bv = bi->data;
                  for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                    const double g = y.grad[o];
                    switch (kind) {
                      case BinaryKind::Add:
                        if (!ga.empty()) ga[ia] += g;
                        if (!gb.empty()) gb[ib] += g;
                        break;
                      case BinaryKind::Sub:
                        if (!ga.empty()) ga[ia] += g;
                        if (!gb.empty()) gb[ib] -= g;
                        break;
                      case BinaryKind::Mul:
                        if (!ga.empty()) ga[ia] += g * bv[ib];
                        if (!gb.empty()) gb[ib] += g * av[ia];
                        break;
                    }
                  });
                });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Mul, "mul"); }

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.values());
  for (auto& v : out) v *= factor;
  auto xi = x.impl();
  return finish("scale", x.shape(), std::move(out), {&x}, [=](const TensorImpl& y) {
    if (!xi->requires_grad) return;
    auto gx = xi->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * y.grad[i];
  });
}

Tensor add_scalar(const Tensor& x, double value) {
  std::vector<double> out(x.values());
  for (auto& v : out) v += value;
  auto xi = x.impl();
  return finish("add_scalar", x.shape(), std::move(out), {&x}, [=](const TensorImpl& y) {
    if (!xi->requires_grad) return;
    auto gx = xi->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += y.grad[i];
  });
}

Tensor pow_scalar(const Tensor& x, double exponent) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::pow(x.values()[i], exponent);
  auto xi = x.impl();
  return finish("pow_scalar", x.shape(), std::move(out), {&x}, [=](const TensorImpl& y) {
    if (!xi->requires_grad) return;
    auto gx = xi->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i)
      gx[i] += y.grad[i] * exponent * std::pow(xi->data[i], exponent - 1.0);
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  auto xi = x.impl();
  return finish("reshape", std::move(shape), x.values(), {&x}, [=](const TensorImpl& y) {
    if (!xi->requires_grad) return;
    auto gx = xi->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += y.grad[i];
  });
}

Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "dense", "input");
  require_rank(weight, 2, "dense", "weight");
  require_rank(bias, 1, "dense", "bias");
  const std::size_t B = x.dim(0), in = x.dim(1), out_f = weight.dim(0);
  if (weight.dim(1) != in || bias.dim(0) != out_f)
    throw DimensionError("dense: input " + shape_str(x.shape()) + ", weight " +
                         shape_str(weight.shape()) + ", bias " + shape_str(bias.shape()));
  const auto& xd = x.values();
  const auto& wd = weight.values();
  const auto& bd = bias.values();
  std::vector<double> out(B * out_f);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < out_f; ++o) {
      double acc = bd[o];
      for (std::size_t i = 0; i < in; ++i) acc += wd[o * in + i] * xd[b * in + i];
      out[b * out_f + o] = acc;
    }
  auto xi = x.impl();
  auto wi = weight.impl();
  auto bi = bias.impl();
  return finish("dense", {B, out_f}, std::move(out), {&x, &weight, &bias},
                [=](const TensorImpl& y) {
                  const auto& g = y.grad;
                  std::span<double> gx, gw, gb;
                  if (xi->requires_grad) gx = xi->grad_buffer();
                  if (wi->requires_grad) gw = wi->grad_buffer();
                  if (bi->requires_grad) gb = bi->grad_buffer();
                  for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t o = 0; o < out_f; ++o) {
                      const double go = g[b * out_f + o];
                      if (!gb.empty()) gb[o] += go;
                      for (std::size_t i = 0; i < in; ++i) {
                        if (!gx.empty()) gx[b * in + i] += go * wi->data[o * in + i];
                        if (!gw.empty()) gw[o * in + i] += go * xi->data[b * in + i];
                      }
                    }
                });
}

Tensor avg_pool2d(const Tensor& x, std::array<std::size_t, 2> window,
                  std::array<std::size_t, 2> stride) {
  require_rank(x, 4, "avg_pool2d", "input");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto [kh, kw] = window;
  const auto [sh, sw] = stride;
  if (kh == 0 || kw == 0 || sh == 0 || sw == 0)
    throw DomainError("avg_pool2d: window and stride must be positive");
  if (kh > H || kw > W)
    throw LengthError("avg_pool2d: window larger than input " + shape_str(x.shape()));
  const std::size_t Ho = (H - kh) / sh + 1, Wo = (W - kw) / sw + 1;
  const double inv = 1.0 / static_cast<double>(kh * kw);
  const auto& xd = x.values();
  std::vector<double> out(B * C * Ho * Wo);
  for (std::size_t bc = 0; bc < B * C; ++bc)
    for (std::size_t i = 0; i < Ho; ++i)
      for (std::size_t j = 0; j < Wo; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < kh; ++p) {
          const double* row = &xd[(bc * H + i * sh + p) * W + j * sw];
          for (std::size_t q = 0; q < kw; ++q) acc += row[q];
        }
        out[(bc * Ho + i) * Wo + j] = acc * inv;
      }
  auto xi = x.impl();
  return finish("avg_pool2d", {B, C, Ho, Wo}, std::move(out), {&x}, [=](const TensorImpl& y) {
    if (!xi->requires_grad) return;
    auto gx = xi->grad_buffer();
    for (std::size_t bc = 0; bc < B * C; ++bc)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          const double g = y.grad[(bc * Ho + i) * Wo + j] * inv;
          for (std::size_t p = 0; p < kh; ++p) {
            double* row = &gx[(bc * H + i * sh + p) * W + j * sw];
            for (std::size_t q = 0; q < kw; ++q) row[q] += g;
          }
        }
  });
}

Tensor dropout(const Tensor& x, double p, Mode mode, std::uint64_t stream) {
  if (!(p >= 0.0 && p < 1.0)) throw DomainError("dropout: p must lie in [0, 1)");
  if (mode == Mode::Eval || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = counter_uniform(stream, i) < p ? 0.0 : keep_scale;
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * mask[i];
  auto xi = x.impl();
  return finish("dropout", x.shape(), std::move(out), {&x},
                [=, mask = std::move(mask)](const TensorImpl& y) {
                  if (!xi->requires_grad) return;
                  auto gx = xi->grad_buffer();
                  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += y.grad[i] * mask[i];
                });
}

std::vector<double> softmax_rows(const Tensor& logits) {
  const std::size_t K = logits.shape().empty() ? 1 : logits.shape().back();
  const std::size_t rows = logits.numel() / K;
  std::vector<double> p(logits.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = &logits.values()[r * K];
    const double mx = *std::max_element(z, z + K);
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += (p[r * K + k] = std::exp(z[k] - mx));
    for (std::size_t k = 0; k < K; ++k) p[r * K + k] /= s;
  }
  return p;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 1 && logits.rank() != 2)
    throw DimensionError("softmax_cross_entropy: logits must be [K] or [B,K]");
  const std::size_t K = logits.shape().back();
  const std::size_t rows = logits.numel() / K;
  if (labels.size() != rows)
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(rows) + " rows");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= K)
      throw DomainError("softmax_cross_entropy: label " + std::to_string(l) + " outside [0," +
                        std::to_string(K) + ")");

  auto probs = softmax_rows(logits);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = &logits.values()[r * K];
    const double mx = *std::max_element(z, z + K);
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp(z[k] - mx);
    loss += (mx + std::log(s)) - z[labels[r]];
  }
  loss /= static_cast<double>(rows);

  auto li = logits.impl();
  std::vector<int> lab(labels.begin(), labels.end());
  return finish("softmax_cross_entropy", Shape{}, {loss}, {&logits},
                [=, probs = std::move(probs), lab = std::move(lab)](const TensorImpl& y) {
                  if (!li->requires_grad) return;
                  auto gl = li->grad_buffer();
                  const double g = y.grad[0] / static_cast<double>(rows);
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t k = 0; k < K; ++k)
                      gl[r * K + k] += g * (probs[r * K + k] - (static_cast<int>(k) == lab[r] ? 1.0 : 0.0));
                });
}

Tensor channel_mix(const Tensor& mixing, const Tensor& x) {
  require_rank(mixing, 2, "channel_mix", "mixing");
  require_rank(x, 4, "channel_mix", "input");
  const std::size_t C = mixing.dim(0);
  if (mixing.dim(1) != C || x.dim(2) != C)
    throw DimensionError("channel_mix: mixing " + shape_str(mixing.shape()) + " vs input " +
                         shape_str(x.shape()));
  const std::size_t BF = x.dim(0) * x.dim(1), T = x.dim(3);
  const auto& sd = mixing.values();
  const auto& xd = x.values();
  std::vector<double> out(x.numel(), 0.0);
  for (std::size_t bf = 0; bf < BF; ++bf)
    for (std::size_t i = 0; i < C; ++i) {
      double* yr = &out[(bf * C + i) * T];
      for (std::size_t j = 0; j < C; ++j) {
        const double s = sd[i * C + j];
        const double* xr = &xd[(bf * C + j) * T];
        for (std::size_t t = 0; t < T; ++t) yr[t] += s * xr[t];
      }
    }
  auto si = mixing.impl();
  auto xi = x.impl();
  return finish("channel_mix", x.shape(), std::move(out), {&mixing, &x},
                [=](const TensorImpl& y) {
                  std::span<double> gs, gx;
                  if (si->requires_grad) gs = si->grad_buffer();
                  if (xi->requires_grad) gx = xi->grad_buffer();
                  for (std::size_t bf = 0; bf < BF; ++bf)
                    for (std::size_t i = 0; i < C; ++i) {
                      const double* gr = &y.grad[(bf * C + i) * T];
                      for (std::size_t j = 0; j < C; ++j) {
                        const std::size_t xoff = (bf * C + j) * T;
                        if (!gs.empty()) {
                          double acc = 0.0;
                          for (std::size_t t = 0; t < T; ++t) acc += gr[t] * xi->data[xoff + t];
                          gs[i * C + j] += acc;
                        }
                        if (!gx.empty()) {
                          const double s = si->data[i * C + j];
                          double* gxr = &gx[xoff];
                          for (std::size_t t = 0; t < T; ++t) gxr[t] += s * gr[t];
                        }
                      }
                    }
                });
}

}  // namespace restgate
