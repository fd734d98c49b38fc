#include "popgrad/regsched.hpp"

#include <cmath>

#include "popgrad/errors.hpp"

namespace popgrad {

std::vector<double> interpolate(double first, double last, std::size_t n) {
  if (n < 1) throw UsageError("interpolate needs at least one site");
  std::vector<double> out(n);
  if (n == 1) {
    out[0] = first;
    return out;
  }
  for (std::size_t k = 0; k < n; ++k) {
    out[k] = first + (last - first) * static_cast<double>(k) / static_cast<double>(n - 1);
  }
  return out;
}

ModelGraph configure_dropout(ModelGraph graph, double p_first, double p_last) {
  if (p_first < 0.0 || p_first >= 1.0 || p_last < 0.0 || p_last >= 1.0)
    throw ConfigError("dropout probabilities must lie in [0,1)");
  const std::size_t sites = graph.dropout_sites().size();
  if (sites == 0) return graph;
  graph.set_dropout_probs(interpolate(p_first, p_last, sites));
  return graph;
}

double activation_penalty(const std::vector<std::vector<double>>& layer_activations,
                          std::span<const double> factors, PenaltyMode mode) {
  if (layer_activations.size() != factors.size())
    throw UsageError("factor count must match layer count");
  for (double f : factors) {
    if (f < 0.0) throw UsageError("penalty factors must be non-negative");
  }
  if (layer_activations.empty()) return 0.0;

  double acc = 0.0;
  for (std::size_t l = 0; l < layer_activations.size(); ++l) {
    const auto& acts = layer_activations[l];
    if (acts.empty()) throw UsageError("layer activation list must be non-empty");
    double layer_mean = 0.0;
    for (double a : acts) layer_mean += mode == PenaltyMode::L1 ? std::abs(a) : a * a;
    layer_mean /= static_cast<double>(acts.size());
    acc += factors[l] * layer_mean;
  }
  return acc / static_cast<double>(layer_activations.size());
}

ValueId build_activation_penalty(Tape& tape, std::span<const ValueId> activations,
                                 std::span<const double> factors, PenaltyMode mode) {
  if (activations.size() != factors.size())
    throw UsageError("factor count must match activation count");
  if (activations.empty()) throw UsageError("no activations to penalize");
  const double inv_layers = 1.0 / static_cast<double>(activations.size());
  ValueId acc;
  for (std::size_t l = 0; l < activations.size(); ++l) {
    ValueId layer_mean = mode == PenaltyMode::L1 ? tape.mean_abs(activations[l])
                                                 : tape.mean_square(activations[l]);
    ValueId term = tape.scale(layer_mean, factors[l] * inv_layers);
    acc = l == 0 ? term : tape.add(acc, term);
  }
  return acc;
}

LossBuild PenalizedModel::build_loss(Tape& tape, const ParamVector& params, const Batch& batch,
                                     Mode mode, RngStream mask_rng) const {
  LossBuild build = inner_->build_loss(tape, params, batch, mode, mask_rng);
  if (build.activations.empty()) return build;
  if (!l1_.empty()) {
    if (l1_.size() != build.activations.size())
      throw ConfigError("l1 factor count does not match activation count");
    build.loss = tape.add(build.loss,
                          build_activation_penalty(tape, build.activations, l1_, PenaltyMode::L1));
  }
  if (!l2_.empty()) {
    if (l2_.size() != build.activations.size())
      throw ConfigError("l2 factor count does not match activation count");
    build.loss = tape.add(build.loss,
                          build_activation_penalty(tape, build.activations, l2_, PenaltyMode::L2));
  }
  return build;
}

}  // namespace popgrad
