#include "popgrad/popgrad.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "popgrad/errors.hpp"
#include "popgrad/parallel.hpp"

namespace popgrad {

void PopulationGradSpec::validate() const {
  if (population_size < 1) throw ConfigError("population_size must be at least 1");
  if (population_range < 0.0) throw ConfigError("population_range must be non-negative");
}

namespace {

ParamVector perturb_impl(const ParamVector& params, double range, RngStream& rng,
                         bool include_biases) {
  if (range < 0.0) throw ConfigError("population_range must be non-negative");
  ParamVector out = params;
  if (include_biases || !params.layout) {
    for (double& v : out.values) v *= 1.0 + range * rng.normal();
    return out;
  }
  std::vector<bool> skip(params.size(), false);
  for (const ParamSlice& s : params.layout->slices) {
    if (!s.is_bias) continue;
    for (std::size_t i = s.offset; i < s.offset + s.count; ++i) skip[i] = true;
  }
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const double z = rng.normal();  // keep stream consumption mask-independent
    if (!skip[i]) out.values[i] *= 1.0 + range * z;
  }
  return out;
}

}  // namespace

ParamVector perturb(const ParamVector& params, double range, RngStream& rng) {
  return perturb_impl(params, range, rng, true);
}

ParamVector perturb_weights_only(const ParamVector& params, double range, RngStream& rng) {
  return perturb_impl(params, range, rng, false);
}

PopGradResult population_gradient(const Model& model, const ParamVector& params,
                                  const Batch& batch, const PopulationGradSpec& spec,
                                  RngStream step_rng, Mode mode, int workers) {
  spec.validate();
  const std::size_t s = static_cast<std::size_t>(spec.population_size);
  const RngStream mask_rng = step_rng.derive(stream_label::kDropoutMask);

  std::vector<ParamVector> gradients(s);
  std::vector<double> losses(s, 0.0);
  parallel_for(s, workers, [&](std::size_t member) {
    RngStream member_rng = step_rng.derive(stream_label::kPerturb, member);
    ParamVector perturbed = spec.perturb_biases
                                ? perturb(params, spec.population_range, member_rng)
                                : perturb_weights_only(params, spec.population_range, member_rng);
    try {
      ForwardPass pass = run_forward(model, perturbed, batch, mode, mask_rng);
      losses[member] = pass.loss;
      gradients[member] = run_backward(pass);
    } catch (const NumericDivergence& e) {
      throw NumericDivergence(e.what(), e.epoch, e.batch, static_cast<int>(member));
    }
  });

  // Incremental mean in member order: identical members stay bit-identical,
  // and the result does not depend on which thread computed which member.
  PopGradResult result;
  result.gradient = std::move(gradients[0]);
  result.mean_loss = losses[0];
  for (std::size_t member = 1; member < s; ++member) {
    const double inv = 1.0 / static_cast<double>(member + 1);
    for (std::size_t i = 0; i < result.gradient.size(); ++i) {
      result.gradient.values[i] +=
          (gradients[member].values[i] - result.gradient.values[i]) * inv;
    }
    result.mean_loss += (losses[member] - result.mean_loss) * inv;
  }
  return result;
}

// --- gradient quality ----------------------------------------------------------

namespace {

ParamVector mean_gradient(const Model& model, const ParamVector& params, const Dataset& dataset,
                          std::span<const int> indices) {
  Batch batch = gather(dataset, indices);
  ForwardPass pass = run_forward(model, params, batch, Mode::Eval, RngStream(0));
  return run_backward(pass);
}

}  // namespace

SubsetStat gradient_quality_subset(const Model& model, const ParamVector& params,
                                   const Dataset& dataset, std::span<const int> subset,
                                   const ParamVector& full_gradient) {
  ParamVector g = mean_gradient(model, params, dataset, subset);
  SubsetStat stat;
  double dist_sq = 0.0, dot = 0.0, norm_g = 0.0, norm_full = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double d = g.values[i] - full_gradient.values[i];
    dist_sq += d * d;
    dot += g.values[i] * full_gradient.values[i];
    norm_g += g.values[i] * g.values[i];
    norm_full += full_gradient.values[i] * full_gradient.values[i];
  }
  stat.distance = std::sqrt(dist_sq);
  if (norm_g > 0.0 && norm_full > 0.0) {
    stat.cosine = dot / (std::sqrt(norm_g) * std::sqrt(norm_full));
  }
  return stat;
}

GradQualityReport gradient_quality(const Model& model, const ParamVector& params,
                                   const Dataset& dataset, std::size_t subset_size,
                                   std::size_t repeats, RngStream rng) {
  const std::size_t n = dataset.size();
  if (subset_size < 1 || subset_size > n)
    throw UsageError("subset size must lie in [1, dataset size]");
  if (repeats < 1) throw UsageError("repeats must be at least 1");

  std::vector<int> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = static_cast<int>(i);
  const ParamVector full = mean_gradient(model, params, dataset, all);

  GradQualityReport report;
  report.subset_size = subset_size;
  report.repeats = repeats;
  for (std::size_t rep = 0; rep < repeats; ++rep) {
    RngStream rep_rng = rng.derive(rep);
    // partial Fisher-Yates: first `subset_size` entries form the sample
    std::vector<int> pool = all;
    for (std::size_t i = 0; i < subset_size; ++i) {
      const std::size_t j = i + rep_rng.uniform_index(n - i);
      std::swap(pool[i], pool[j]);
    }
    SubsetStat stat = gradient_quality_subset(
        model, params, dataset, std::span<const int>(pool.data(), subset_size), full);
    report.distances.push_back(stat.distance);
    report.cosines.push_back(stat.cosine);
  }

  auto mean_of = [](const std::vector<double>& xs) {
    double m = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) m += (xs[i] - m) / static_cast<double>(i + 1);
    return m;
  };
  auto var_of = [](const std::vector<double>& xs, double m) {
    if (xs.size() < 2) return 0.0;
    double acc = 0.0;
    for (double x : xs) acc += (x - m) * (x - m);
    return acc / static_cast<double>(xs.size() - 1);
  };

  report.distance_mean = mean_of(report.distances);
  report.distance_var = var_of(report.distances, report.distance_mean);

  std::vector<double> defined;
  for (const auto& c : report.cosines) {
    if (c) defined.push_back(*c);
  }
  if (!defined.empty()) {
    report.cosine_mean = mean_of(defined);
    report.cosine_var = var_of(defined, *report.cosine_mean);
  }
  return report;
}

nlohmann::json grad_quality_to_json(const GradQualityReport& report) {
  nlohmann::json j;
  j["subset_size"] = report.subset_size;
  j["repeats"] = report.repeats;
  j["distances"] = report.distances;
  nlohmann::json cosines = nlohmann::json::array();
  for (const auto& c : report.cosines) {
    if (c)
      cosines.push_back(*c);
    else
      cosines.push_back(nullptr);
  }
  j["cosines"] = std::move(cosines);
  j["distance_mean"] = report.distance_mean;
  j["distance_var"] = report.distance_var;
  j["cosine_mean"] = report.cosine_mean ? nlohmann::json(*report.cosine_mean) : nlohmann::json();
  j["cosine_var"] = report.cosine_var ? nlohmann::json(*report.cosine_var) : nlohmann::json();
  return j;
}

}  // namespace popgrad
