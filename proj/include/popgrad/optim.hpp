#pragma once

#include <span>
#include <string>
#include <vector>

namespace popgrad {

enum class OptKind { Sgd, Nesterov, RmsProp, Adam, AdamW, AmsGrad, Adamax };

std::string opt_kind_name(OptKind kind);
OptKind opt_kind_from_name(const std::string& name);

struct OptimizerConfig {
  OptKind kind = OptKind::Sgd;
  double lr = 0.01;
  double momentum = 0.9;    // sgd/nesterov/rmsprop
  double dampening = 0.0;   // sgd/nesterov
  double alpha = 0.99;      // rmsprop squared-average decay
  double beta1 = 0.9;       // adam family
  double beta2 = 0.999;
  double weight_decay = 1e-5;
  double epsilon = 1e-8;

  void validate() const;
  bool operator==(const OptimizerConfig&) const = default;
};

struct OptimizerState {
  std::vector<double> momentum_buf;   // sgd/nesterov velocity, rmsprop momentum
  std::vector<double> square_avg;     // rmsprop
  std::vector<double> m1;             // adam family first moment
  std::vector<double> m2;             // adam family second moment
  std::vector<double> m2_max;         // amsgrad running max of corrected m2
  std::vector<double> inf_norm;       // adamax
  long step = 0;

  static OptimizerState for_params(std::size_t n, OptKind kind);
};

/// One optimizer step, in place. `lr_now` is the scheduled learning rate for
/// this step. Weight decay folds into the gradient for every kind except
/// AdamW, which applies it decoupled.
void apply_update(OptimizerState& state, std::span<double> params, std::span<const double> grad,
                  const OptimizerConfig& config, double lr_now);

/// Era-based step decay: era = floor(epoch * n_eras / total_epochs),
/// lr = lr0 * era_decay^era.
double lr_schedule(int epoch, int total_epochs, int n_eras, double era_decay, double lr0);

}  // namespace popgrad
