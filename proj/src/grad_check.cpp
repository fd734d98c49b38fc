#include "popgrad/grad_check.hpp"

#include "popgrad/errors.hpp"

namespace popgrad {

std::vector<double> finite_diff_grad(const LossFn& loss_fn, std::span<const double> params,
                                     double h) {
  if (h <= 0.0) throw UsageError("finite_diff_grad requires h > 0");
  std::vector<double> point(params.begin(), params.end());
  std::vector<double> grad(params.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + h;
    const double up = loss_fn(point);
    point[i] = saved - h;
    const double down = loss_fn(point);
    point[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace popgrad
