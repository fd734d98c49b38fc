#pragma once

#include <optional>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "popgrad/data.hpp"
#include "popgrad/model.hpp"
#include "popgrad/rng.hpp"

namespace popgrad {

/// Meta-parameters of the population-gradient estimator.
struct PopulationGradSpec {
  int population_size = 5;       // s: members per step
  double population_range = 0.1;  // r: SD of the multiplicative noise
  bool perturb_biases = true;

  void validate() const;
};

/// Multiplicative Gaussian perturbation: each coordinate becomes
/// w * (1 + r*z) with z ~ N(0,1). A draw is consumed for every coordinate
/// regardless of r or masking, so streams stay aligned across settings.
ParamVector perturb(const ParamVector& params, double range, RngStream& rng);

/// As above, but bias slices (per the layout) are left untouched.
ParamVector perturb_weights_only(const ParamVector& params, double range, RngStream& rng);

struct PopGradResult {
  ParamVector gradient;
  double mean_loss = 0.0;
};

/// Mean of `s` gradients, each taken at an independently perturbed copy of
/// the parameters. Member i draws from the sub-stream (step_rng, i); all
/// members share the mini-batch and the dropout mask stream. The running
/// mean is accumulated in member order, so the result is independent of the
/// degree of parallelism, and reduces to the plain gradient bit-for-bit
/// when r = 0.
PopGradResult population_gradient(const Model& model, const ParamVector& params,
                                  const Batch& batch, const PopulationGradSpec& spec,
                                  RngStream step_rng, Mode mode = Mode::Train, int workers = 1);

// --- gradient quality --------------------------------------------------------

struct SubsetStat {
  double distance = 0.0;                 // ||g_subset - g_full||_2
  std::optional<double> cosine;          // empty when either norm is zero
};

struct GradQualityReport {
  std::size_t subset_size = 0;
  std::size_t repeats = 0;
  std::vector<double> distances;
  std::vector<std::optional<double>> cosines;
  double distance_mean = 0.0;
  double distance_var = 0.0;             // sample variance; 0 by convention for k = 1
  std::optional<double> cosine_mean;
  std::optional<double> cosine_var;
};

/// Distance/cosine of one subset's mean gradient against the full-dataset
/// gradient (the enumerable building block of gradient_quality).
SubsetStat gradient_quality_subset(const Model& model, const ParamVector& params,
                                   const Dataset& dataset, std::span<const int> subset,
                                   const ParamVector& full_gradient);

/// k repeats of m-sample subsets drawn without replacement, each compared to
/// the full-dataset gradient. Evaluation runs in eval mode so the estimate
/// reflects sampling noise only.
GradQualityReport gradient_quality(const Model& model, const ParamVector& params,
                                   const Dataset& dataset, std::size_t subset_size,
                                   std::size_t repeats, RngStream rng);

nlohmann::json grad_quality_to_json(const GradQualityReport& report);

}  // namespace popgrad
