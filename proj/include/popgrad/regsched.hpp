#pragma once

#include <span>
#include <vector>

#include "popgrad/model.hpp"
#include "popgrad/tape.hpp"

namespace popgrad {

/// Linear first-to-last interpolation over n sites:
/// y(x) = first + (last-first)*(x-1)/(n-1) for x = 1..n; n = 1 yields {first}.
std::vector<double> interpolate(double first, double last, std::size_t n);

/// Assigns interpolated probabilities to the graph's dropout sites.
/// A graph without sites is returned unchanged.
ModelGraph configure_dropout(ModelGraph graph, double p_first, double p_last);

enum class PenaltyMode { L1, L2 };

/// Mean over layers of factor_l * A_l, where A_l is the layer's mean |a|
/// (L1) or mean a^2 (L2).
double activation_penalty(const std::vector<std::vector<double>>& layer_activations,
                          std::span<const double> factors, PenaltyMode mode);

/// Same penalty expressed as tape nodes, so it participates in autodiff.
ValueId build_activation_penalty(Tape& tape, std::span<const ValueId> activations,
                                 std::span<const double> factors, PenaltyMode mode);

/// Model decorator that adds interpolated L1/L2 activation penalties to the
/// wrapped model's loss. Factor vectors must match the activation count.
class PenalizedModel : public Model {
public:
  PenalizedModel(const Model& inner, std::vector<double> l1_factors,
                 std::vector<double> l2_factors)
      : inner_(&inner), l1_(std::move(l1_factors)), l2_(std::move(l2_factors)) {}

  const ParamLayout& layout() const override { return inner_->layout(); }
  std::shared_ptr<const ParamLayout> layout_ptr() const override { return inner_->layout_ptr(); }

  LossBuild build_loss(Tape& tape, const ParamVector& params, const Batch& batch, Mode mode,
                       RngStream mask_rng) const override;

private:
  const Model* inner_;
  std::vector<double> l1_;
  std::vector<double> l2_;
};

}  // namespace popgrad
