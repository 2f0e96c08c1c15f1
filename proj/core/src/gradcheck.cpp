#include "restgate/gradcheck.hpp"

#include <cmath>
#include <numeric>

#include "restgate/errors.hpp"

namespace restgate {

GradCheckResult check_gradients(const std::function<Tensor(const Tensor&)>& f, const Tensor& x0,
                                double step, std::optional<std::vector<std::size_t>> coordinates) {
  Tensor x = x0.detach();
  x.set_requires_grad(true);
  Tape::current().clear();
  Tensor loss = f(x);
  if (loss.numel() != 1) throw ContractError("check_gradients: f must return a scalar");
  backward(loss);
  std::vector<double> analytic(x.numel(), 0.0);
  if (x.has_grad()) analytic.assign(x.grad().begin(), x.grad().end());

  std::vector<std::size_t> coords;
  if (coordinates) {
    coords = std::move(*coordinates);
  } else {
    coords.resize(x.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
  }

  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t i : coords) {
    if (i >= x.numel()) throw DimensionError("check_gradients: coordinate out of range");
    Tensor plus = x0.detach();
    Tensor minus = x0.detach();
    plus.mutable_data()[i] += step;
    minus.mutable_data()[i] -= step;
    const double numeric = (f(plus).item() - f(minus).item()) / (2.0 * step);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    if (err > result.max_rel_error || (i == coords.front() && result.max_rel_error == 0.0)) {
      result.max_rel_error = std::max(result.max_rel_error, err);
      result.worst_index = i;
      result.analytic = analytic[i];
      result.numeric = numeric;
    }
  }
  return result;
}

}  // namespace restgate
