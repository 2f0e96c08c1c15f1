#pragma once

#include <cstdint>

#include "restgate/rng.hpp"
#include "restgate/tensor.hpp"

namespace fixtures {

// Standard-normal entries scaled by `scale`.
inline restgate::Tensor random_tensor(restgate::Shape shape, std::uint64_t seed, double scale = 1.0) {
  restgate::Rng rng(restgate::mix_keys({seed, 0xF1C5}));
  restgate::Tensor t(std::move(shape), 0.0);
  for (auto& v : t.mutable_data()) v = scale * rng.normal();
  return t;
}

inline restgate::Tensor uniform_tensor(restgate::Shape shape, std::uint64_t seed, double lo, double hi) {
  restgate::Rng rng(restgate::mix_keys({seed, 0x0F1C}));
  restgate::Tensor t(std::move(shape), 0.0);
  for (auto& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace fixtures
