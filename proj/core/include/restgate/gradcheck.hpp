#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "restgate/tensor.hpp"

namespace restgate {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares the reverse-mode gradient of a scalar program f at x0 against
// central differences. The error for each coordinate is
// |analytic - numeric| / max(1, |analytic|); the maximum is reported.
// `coordinates` restricts the comparison to a subset of flat indices.
GradCheckResult check_gradients(const std::function<Tensor(const Tensor&)>& f, const Tensor& x0,
                                double step = 1e-5,
                                std::optional<std::vector<std::size_t>> coordinates = std::nullopt);

}  // namespace restgate
