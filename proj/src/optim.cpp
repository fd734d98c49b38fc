#include "popgrad/optim.hpp"

#include <cmath>

#include "popgrad/errors.hpp"

namespace popgrad {

std::string opt_kind_name(OptKind kind) {
  switch (kind) {
    case OptKind::Sgd: return "sgd";
    case OptKind::Nesterov: return "nesterov";
    case OptKind::RmsProp: return "rmsprop";
    case OptKind::Adam: return "adam";
    case OptKind::AdamW: return "adamw";
    case OptKind::AmsGrad: return "amsgrad";
    case OptKind::Adamax: return "adamax";
  }
  throw UsageError("unreachable optimizer kind");
}

OptKind opt_kind_from_name(const std::string& name) {
  if (name == "sgd") return OptKind::Sgd;
  if (name == "nesterov") return OptKind::Nesterov;
  if (name == "rmsprop") return OptKind::RmsProp;
  if (name == "adam") return OptKind::Adam;
  if (name == "adamw") return OptKind::AdamW;
  if (name == "amsgrad") return OptKind::AmsGrad;
  if (name == "adamax") return OptKind::Adamax;
  throw ConfigError("unknown optimizer kind \"" + name + "\"");
}

void OptimizerConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("learning rate must be positive");
  auto unit = [](double v, const char* name) {
    if (v < 0.0 || v >= 1.0) throw ConfigError(std::string(name) + " must lie in [0,1)");
  };
  unit(momentum, "momentum");
  unit(dampening, "dampening");
  unit(alpha, "alpha");
  unit(beta1, "beta1");
  unit(beta2, "beta2");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (epsilon <= 0.0) throw ConfigError("epsilon must be positive");
}

OptimizerState OptimizerState::for_params(std::size_t n, OptKind kind) {
  OptimizerState s;
  switch (kind) {
    case OptKind::Sgd:
    case OptKind::Nesterov:
      s.momentum_buf.assign(n, 0.0);
      break;
    case OptKind::RmsProp:
      s.momentum_buf.assign(n, 0.0);
      s.square_avg.assign(n, 0.0);
      break;
    case OptKind::Adam:
    case OptKind::AdamW:
      s.m1.assign(n, 0.0);
      s.m2.assign(n, 0.0);
      break;
    case OptKind::AmsGrad:
      s.m1.assign(n, 0.0);
      s.m2.assign(n, 0.0);
      s.m2_max.assign(n, 0.0);
      break;
    case OptKind::Adamax:
      s.m1.assign(n, 0.0);
      s.inf_norm.assign(n, 0.0);
      break;
  }
  return s;
}

void apply_update(OptimizerState& state, std::span<double> params, std::span<const double> grad,
                  const OptimizerConfig& config, double lr_now) {
  if (params.size() != grad.size()) throw UsageError("param/grad length mismatch");
  if (lr_now <= 0.0) throw UsageError("lr_now must be positive");
  const std::size_t n = params.size();
  const double lambda = config.weight_decay;

  state.step += 1;
  const long t = state.step;

  switch (config.kind) {
    case OptKind::Sgd:
    case OptKind::Nesterov: {
      const bool nesterov = config.kind == OptKind::Nesterov;
      const double mu = config.momentum;
      for (std::size_t i = 0; i < n; ++i) {
        const double g = grad[i] + lambda * params[i];
        // v <- mu*v + (1-dampening)*g, except the very first step takes v <- g
        const double v =
            t == 1 ? g : mu * state.momentum_buf[i] + (1.0 - config.dampening) * g;
        state.momentum_buf[i] = v;
        params[i] -= lr_now * (nesterov ? g + mu * v : v);
      }
      break;
    }
    case OptKind::RmsProp: {
      const double a = config.alpha;
      const double mu = config.momentum;
      for (std::size_t i = 0; i < n; ++i) {
        const double g = grad[i] + lambda * params[i];
        state.square_avg[i] = a * state.square_avg[i] + (1.0 - a) * g * g;
        const double scaled = g / (std::sqrt(state.square_avg[i]) + config.epsilon);
        state.momentum_buf[i] = mu * state.momentum_buf[i] + scaled;
        params[i] -= lr_now * state.momentum_buf[i];
      }
      break;
    }
    case OptKind::Adam:
    case OptKind::AdamW:
    case OptKind::AmsGrad: {
      const double b1 = config.beta1, b2 = config.beta2;
      const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
      const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
      const bool decoupled = config.kind == OptKind::AdamW;
      const bool amsgrad = config.kind == OptKind::AmsGrad;
      for (std::size_t i = 0; i < n; ++i) {
        const double g = decoupled ? grad[i] : grad[i] + lambda * params[i];
        state.m1[i] = b1 * state.m1[i] + (1.0 - b1) * g;
        state.m2[i] = b2 * state.m2[i] + (1.0 - b2) * g * g;
        const double m_hat = state.m1[i] / bc1;
        double v_hat = state.m2[i] / bc2;
        if (amsgrad) {
          state.m2_max[i] = std::max(state.m2_max[i], v_hat);
          v_hat = state.m2_max[i];
        }
        params[i] -= lr_now * m_hat / (std::sqrt(v_hat) + config.epsilon);
        if (decoupled) params[i] -= lr_now * lambda * params[i];
      }
      break;
    }
    case OptKind::Adamax: {
      const double b1 = config.beta1, b2 = config.beta2;
      const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
      for (std::size_t i = 0; i < n; ++i) {
        const double g = grad[i] + lambda * params[i];
        state.m1[i] = b1 * state.m1[i] + (1.0 - b1) * g;
        state.inf_norm[i] = std::max(b2 * state.inf_norm[i], std::abs(g));
        params[i] -= (lr_now / bc1) * state.m1[i] / (state.inf_norm[i] + config.epsilon);
      }
      break;
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(params[i]))
      throw NumericDivergence("non-finite parameter after optimizer step", -1, -1);
  }
}

double lr_schedule(int epoch, int total_epochs, int n_eras, double era_decay, double lr0) {
  if (n_eras < 1 || n_eras > total_epochs)
    throw UsageError("n_eras must lie in [1, total_epochs]");
  if (era_decay <= 0.0 || era_decay > 1.0) throw UsageError("era_decay must lie in (0,1]");
  if (epoch < 0 || epoch >= total_epochs) throw UsageError("epoch out of range");
  const long era = (static_cast<long>(epoch) * n_eras) / total_epochs;
  return lr0 * std::pow(era_decay, static_cast<double>(era));
}

}  // namespace popgrad
