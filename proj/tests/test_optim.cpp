#include <doctest.h>

#include <cmath>

#include "popgrad/errors.hpp"
#include "popgrad/optim.hpp"
#include "popgrad/rng.hpp"

using namespace popgrad;

namespace {

OptimizerConfig plain(OptKind kind) {
  OptimizerConfig cfg;
  cfg.kind = kind;
  cfg.lr = 0.1;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("plain sgd step") {
  OptimizerConfig cfg = plain(OptKind::Sgd);
  OptimizerState state = OptimizerState::for_params(1, cfg.kind);
  std::vector<double> w{1.0};
  std::vector<double> g{2.0};
  apply_update(state, w, g, cfg, cfg.lr);
  CHECK(w[0] == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("two-step momentum recurrence") {
  OptimizerConfig cfg = plain(OptKind::Sgd);
  cfg.momentum = 0.9;
  OptimizerState state = OptimizerState::for_params(1, cfg.kind);
  std::vector<double> w{0.0};
  std::vector<double> g{1.0};

  apply_update(state, w, g, cfg, cfg.lr);
  CHECK(state.momentum_buf[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(w[0] == doctest::Approx(-0.1).epsilon(1e-12));

  apply_update(state, w, g, cfg, cfg.lr);
  CHECK(state.momentum_buf[0] == doctest::Approx(1.9).epsilon(1e-15));
  CHECK(w[0] == doctest::Approx(-0.29).epsilon(1e-12));
}

TEST_CASE("adam first step with bias correction") {
  OptimizerConfig cfg;
  cfg.kind = OptKind::Adam;
  cfg.lr = 0.001;
  cfg.beta1 = 0.9;
  cfg.beta2 = 0.999;
  cfg.epsilon = 1e-8;
  cfg.weight_decay = 0.0;
  OptimizerState state = OptimizerState::for_params(1, cfg.kind);
  std::vector<double> w{0.0};
  std::vector<double> g{0.5};
  apply_update(state, w, g, cfg, cfg.lr);

  // m_hat = 0.5, v_hat = 0.25, step = -lr * 0.5 / (0.5 + eps)
  const double expected = -0.001 * 0.5 / (0.5 + 1e-8);
  CHECK(std::abs(w[0] - expected) < 1e-15);
}

TEST_CASE("nesterov steps along g + mu*v") {
  OptimizerConfig cfg = plain(OptKind::Nesterov);
  cfg.momentum = 0.5;
  OptimizerState state = OptimizerState::for_params(1, cfg.kind);
  std::vector<double> w{0.0};
  std::vector<double> g{1.0};

  apply_update(state, w, g, cfg, cfg.lr);
  // first step: v = g = 1, step = -lr*(1 + 0.5*1)
  CHECK(w[0] == doctest::Approx(-0.15).epsilon(1e-12));

  apply_update(state, w, g, cfg, cfg.lr);
  // v = 0.5*1 + 1 = 1.5 (dampening 0), step = -lr*(1 + 0.75)
  CHECK(w[0] == doctest::Approx(-0.15 - 0.175).epsilon(1e-12));
}

TEST_CASE("rmsprop recurrence") {
  OptimizerConfig cfg = plain(OptKind::RmsProp);
  cfg.alpha = 0.5;
  cfg.momentum = 0.0;
  cfg.epsilon = 1e-8;
  OptimizerState state = OptimizerState::for_params(1, cfg.kind);
  std::vector<double> w{0.0};
  std::vector<double> g{2.0};

  apply_update(state, w, g, cfg, cfg.lr);
  // sq = 0.5*4 = 2; buf = 2/(sqrt(2)+eps); w = -lr*buf
  const double expected1 = -0.1 * (2.0 / (std::sqrt(2.0) + 1e-8));
  CHECK(w[0] == doctest::Approx(expected1).epsilon(1e-12));

  apply_update(state, w, g, cfg, cfg.lr);
  const double sq2 = 0.5 * 2.0 + 0.5 * 4.0;  // 3
  const double expected2 = expected1 - 0.1 * (2.0 / (std::sqrt(sq2) + 1e-8));
  CHECK(w[0] == doctest::Approx(expected2).epsilon(1e-12));
}

TEST_CASE("adamax infinity norm recurrence") {
  OptimizerConfig cfg;
  cfg.kind = OptKind::Adamax;
  cfg.lr = 0.1;
  cfg.beta1 = 0.5;
  cfg.beta2 = 0.5;
  cfg.epsilon = 1e-8;
  cfg.weight_decay = 0.0;
  OptimizerState state = OptimizerState::for_params(1, cfg.kind);
  std::vector<double> w{0.0};

  std::vector<double> g1{4.0};
  apply_update(state, w, g1, cfg, cfg.lr);
  // m = 2, u = max(0, 4) = 4, step = -(lr/(1-0.5)) * 2/(4+eps)
  const double step1 = -(0.1 / 0.5) * 2.0 / (4.0 + 1e-8);
  CHECK(w[0] == doctest::Approx(step1).epsilon(1e-12));

  std::vector<double> g2{1.0};
  apply_update(state, w, g2, cfg, cfg.lr);
  // m = 0.5*2 + 0.5*1 = 1.5; u = max(0.5*4, 1) = 2
  const double step2 = -(0.1 / 0.75) * 1.5 / (2.0 + 1e-8);
  CHECK(w[0] == doctest::Approx(step1 + step2).epsilon(1e-12));
}

TEST_CASE("zero gradient with zero decay is a fixpoint for every optimizer") {
  for (OptKind kind : {OptKind::Sgd, OptKind::Nesterov, OptKind::RmsProp, OptKind::Adam,
                       OptKind::AdamW, OptKind::AmsGrad, OptKind::Adamax}) {
    OptimizerConfig cfg = plain(kind);
    cfg.momentum = 0.9;
    OptimizerState state = OptimizerState::for_params(3, kind);
    std::vector<double> w{1.0, -2.0, 0.5};
    const std::vector<double> w0 = w;
    std::vector<double> g{0.0, 0.0, 0.0};
    for (int i = 0; i < 5; ++i) apply_update(state, w, g, cfg, cfg.lr);
    CHECK(w == w0);
  }
}

TEST_CASE("adamw with zero decay coincides with adam bit for bit") {
  RngStream rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    OptimizerConfig adam;
    adam.kind = OptKind::Adam;
    adam.lr = 0.01;
    adam.weight_decay = 0.0;
    OptimizerConfig adamw = adam;
    adamw.kind = OptKind::AdamW;

    const std::size_t n = 4;
    OptimizerState sa = OptimizerState::for_params(n, adam.kind);
    OptimizerState sw = OptimizerState::for_params(n, adamw.kind);
    std::vector<double> wa(n), ww(n), g(n);
    for (std::size_t i = 0; i < n; ++i) wa[i] = ww[i] = rng.normal();

    for (int step = 0; step < 50; ++step) {
      for (double& v : g) v = rng.normal();
      apply_update(sa, wa, g, adam, adam.lr);
      apply_update(sw, ww, g, adamw, adamw.lr);
    }
    CHECK(wa == ww);
  }
}

TEST_CASE("amsgrad equals adam while v_hat is non-decreasing") {
  OptimizerConfig adam;
  adam.kind = OptKind::Adam;
  adam.lr = 0.01;
  adam.beta1 = 0.9;
  adam.beta2 = 0.5;
  adam.weight_decay = 0.0;
  OptimizerConfig ams = adam;
  ams.kind = OptKind::AmsGrad;

  OptimizerState sa = OptimizerState::for_params(1, adam.kind);
  OptimizerState sm = OptimizerState::for_params(1, ams.kind);
  std::vector<double> wa{0.5}, wm{0.5};

  // strongly growing gradient magnitudes keep v_hat monotone
  double prev_vhat = 0.0;
  for (int t = 1; t <= 20; ++t) {
    std::vector<double> g{static_cast<double>(t)};
    apply_update(sa, wa, g, adam, adam.lr);
    apply_update(sm, wm, g, ams, ams.lr);
    const double vhat = sa.m2[0] / (1.0 - std::pow(adam.beta2, t));
    REQUIRE(vhat >= prev_vhat);  // the premise of the equivalence
    prev_vhat = vhat;
    CHECK(wa == wm);
  }
}

TEST_CASE("weight decay folds into the gradient except for adamw") {
  OptimizerConfig sgd = plain(OptKind::Sgd);
  sgd.weight_decay = 0.5;
  OptimizerState state = OptimizerState::for_params(1, sgd.kind);
  std::vector<double> w{2.0};
  std::vector<double> g{1.0};
  apply_update(state, w, g, sgd, 0.1);
  CHECK(w[0] == doctest::Approx(2.0 - 0.1 * (1.0 + 0.5 * 2.0)).epsilon(1e-14));

  OptimizerConfig adamw;
  adamw.kind = OptKind::AdamW;
  adamw.lr = 0.1;
  adamw.weight_decay = 0.5;
  OptimizerState st2 = OptimizerState::for_params(1, adamw.kind);
  std::vector<double> w2{2.0};
  std::vector<double> g2{0.0};
  apply_update(st2, w2, g2, adamw, 0.1);
  // zero gradient: the only movement is the decoupled decay -lr*lambda*w
  CHECK(w2[0] == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0).epsilon(1e-14));
}

TEST_CASE("non-finite update raises numeric divergence") {
  OptimizerConfig cfg = plain(OptKind::Sgd);
  OptimizerState state = OptimizerState::for_params(1, cfg.kind);
  std::vector<double> w{1.0};
  std::vector<double> g{std::numeric_limits<double>::infinity()};
  CHECK_THROWS_AS(apply_update(state, w, g, cfg, cfg.lr), NumericDivergence);
}

TEST_CASE("config invariants") {
  OptimizerConfig cfg;
  cfg.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.lr = 0.1;
  cfg.beta2 = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.beta2 = 0.9999;
  cfg.validate();
  cfg.weight_decay = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("lr schedule definition") {
  CHECK(lr_schedule(49, 100, 2, 0.5, 0.01) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(lr_schedule(50, 100, 2, 0.5, 0.01) == doctest::Approx(0.005).epsilon(1e-15));
  for (int epoch : {0, 13, 99}) {
    CHECK(lr_schedule(epoch, 100, 1, 0.3, 0.02) == doctest::Approx(0.02).epsilon(1e-15));
  }
  CHECK(lr_schedule(99, 100, 4, 0.2, 0.01) == doctest::Approx(0.01 * 0.008).epsilon(1e-12));

  CHECK_THROWS_AS(lr_schedule(0, 10, 0, 0.5, 0.1), UsageError);
  CHECK_THROWS_AS(lr_schedule(0, 10, 11, 0.5, 0.1), UsageError);
  CHECK_THROWS_AS(lr_schedule(0, 10, 2, 0.0, 0.1), UsageError);
}

TEST_CASE("lr schedule is piecewise constant with n_eras levels") {
  const int total = 60;
  const int eras = 5;
  std::vector<double> seen;
  double prev = -1.0;
  for (int e = 0; e < total; ++e) {
    const double lr = lr_schedule(e, total, eras, 0.7, 0.1);
    if (lr != prev) {
      seen.push_back(lr);
      prev = lr;
    }
    CHECK(lr <= 0.1);
  }
  CHECK(seen.size() == eras);
  for (std::size_t i = 1; i < seen.size(); ++i) {
    CHECK(seen[i] == doctest::Approx(seen[i - 1] * 0.7).epsilon(1e-12));
  }
}
