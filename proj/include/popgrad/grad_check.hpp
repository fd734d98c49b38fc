#pragma once

#include <functional>
#include <span>
#include <vector>

namespace popgrad {

using LossFn = std::function<double(std::span<const double>)>;

/// Central-difference gradient: (L(p + h*e_i) - L(p - h*e_i)) / (2h) per
/// coordinate. Test oracle; intentionally independent of the tape machinery.
std::vector<double> finite_diff_grad(const LossFn& loss_fn, std::span<const double> params,
                                     double h);

}  // namespace popgrad
