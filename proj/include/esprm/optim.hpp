#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <utility>

#include "esprm/common.hpp"

namespace esprm {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  Vector m;
  Vector v;
  long t = 0;

  explicit AdamState(Eigen::Index dim, AdamConfig cfg = {})
      : config(cfg), m(Vector::Zero(dim)), v(Vector::Zero(dim)) {}
};

namespace detail {

inline void check_gradient_finite(const Vector& g, const char* who) {
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    if (!std::isfinite(g(i))) {
      throw Error(std::string(who) + ": non-finite gradient at coordinate " +
                  std::to_string(i));
    }
  }
}

}  // namespace detail

/// Advances the Adam moments and returns the bias-corrected update
/// u = lr * m_hat / (sqrt(v_hat) + eps). Shared kernel for Adam and OAdam.
inline Vector adam_direction(AdamState& state, const Vector& grad) {
  detail::check_gradient_finite(grad, "adam");
  require(grad.size() == state.m.size(),
          "adam: gradient length " + std::to_string(grad.size()) +
              " does not match state dimension " +
              std::to_string(state.m.size()));
  const auto& c = state.config;
  state.t += 1;
  state.m = c.beta1 * state.m + (1.0 - c.beta1) * grad;
  state.v = c.beta2 * state.v + (1.0 - c.beta2) * grad.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(c.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, double(state.t));
  const Vector m_hat = state.m / bc1;
  const Vector v_hat = state.v / bc2;
  return c.lr * m_hat.array().cwiseQuotient(v_hat.array().sqrt() + c.epsilon)
             .matrix();
}

inline void adam_step(AdamState& state, Vector& params, const Vector& grad) {
  params -= adam_direction(state, grad);
}

/// Optimistic Adam: params <- params - 2 u_t + u_{t-1}, with u_0 = 0.
struct OAdamState {
  AdamState base;
  Vector u_prev;

  explicit OAdamState(Eigen::Index dim, AdamConfig cfg = {})
      : base(dim, cfg), u_prev(Vector::Zero(dim)) {}
};

inline void oadam_step(OAdamState& state, Vector& params, const Vector& grad) {
  const Vector u = adam_direction(state.base, grad);
  params -= 2.0 * u - state.u_prev;
  state.u_prev = u;
}

/// Moment settings for two-player training. Heavy-ball momentum is
/// destabilizing in smooth games (it cancels the optimistic correction on
/// bilinear dynamics), so the game players run beta1 = 0 with a shorter
/// second-moment window; single-objective Adam keeps the usual defaults.
inline AdamConfig game_adam_config(double lr) {
  return AdamConfig{.lr = lr, .beta1 = 0.0, .beta2 = 0.99, .epsilon = 1e-8};
}

/// Stops after `patience` consecutive epochs without strict improvement.
struct EarlyStop {
  int patience = 5;
  double best = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int epoch = -1;
  int since_improvement = 0;

  /// Returns true exactly when the epochs-since-improvement counter
  /// reaches the patience.
  bool observe(double validation_loss) {
    ++epoch;
    if (validation_loss < best) {
      best = validation_loss;
      best_epoch = epoch;
      since_improvement = 0;
      return false;
    }
    ++since_improvement;
    return since_improvement >= patience;
  }
};

enum class OptStatus { Converged, MaxIterations, LineSearchFailed };

struct LbfgsOptions {
  int memory = 10;
  double tolerance = 1e-8;
  int max_iterations = 500;
  double armijo_c = 1e-4;
  double backtrack = 0.5;
  double min_step = 1e-20;
};

struct LbfgsResult {
  Vector x;
  double loss = std::numeric_limits<double>::infinity();
  double grad_norm = std::numeric_limits<double>::infinity();
  int iterations = 0;
  OptStatus status = OptStatus::MaxIterations;

  bool degraded() const { return status != OptStatus::Converged; }
};

/// Objective fills `grad` and returns the loss.
using Objective = std::function<double(const Vector&, Vector&)>;

/// LBFGS with two-loop recursion, gamma-scaled initial Hessian, and
/// backtracking Armijo line search. Line-search failure returns the best
/// iterate seen with a degraded status instead of throwing. Never returns a
/// loss above the loss at the initial point.
inline LbfgsResult lbfgs_minimize(const Objective& objective, const Vector& x0,
                                  const LbfgsOptions& opts = {}) {
  Vector x = x0;
  Vector g(x.size());
  double f = objective(x, g);
  if (!std::isfinite(f) || !all_finite(g)) {
    throw Error("lbfgs: objective not finite at the initial point");
  }

  LbfgsResult best;
  best.x = x;
  best.loss = f;
  best.grad_norm = g.norm();

  std::deque<std::pair<Vector, Vector>> history;  // (s, y)

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    if (g.norm() <= opts.tolerance) {
      best.status = OptStatus::Converged;
      best.iterations = iter;
      return best;
    }

    // Two-loop recursion for d = -H g.
    Vector q = g;
    std::vector<double> alpha(history.size());
    for (int i = int(history.size()) - 1; i >= 0; --i) {
      const auto& [s, y] = history[i];
      const double rho = 1.0 / y.dot(s);
      alpha[i] = rho * s.dot(q);
      q -= alpha[i] * y;
    }
    if (!history.empty()) {
      const auto& [s, y] = history.back();
      q *= s.dot(y) / y.dot(y);
    }
    for (std::size_t i = 0; i < history.size(); ++i) {
      const auto& [s, y] = history[i];
      const double rho = 1.0 / y.dot(s);
      const double beta = rho * y.dot(q);
      q += (alpha[i] - beta) * s;
    }
    Vector d = -q;

    double slope = g.dot(d);
    if (!(slope < 0.0)) {
      history.clear();
      d = -g;
      slope = -g.squaredNorm();
    }

    double step = 1.0;
    Vector x_new(x.size());
    Vector g_new(x.size());
    double f_new = 0.0;
    bool accepted = false;
    while (step >= opts.min_step) {
      x_new = x + step * d;
      f_new = objective(x_new, g_new);
      if (std::isfinite(f_new) && all_finite(g_new) &&
          f_new <= f + opts.armijo_c * step * slope) {
        accepted = true;
        break;
      }
      step *= opts.backtrack;
    }
    if (!accepted) {
      best.status = OptStatus::LineSearchFailed;
      best.iterations = iter;
      return best;
    }

    const Vector s = x_new - x;
    const Vector y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-10 * s.norm() * y.norm()) {
      history.emplace_back(s, y);
      if (int(history.size()) > opts.memory) history.pop_front();
    }

    x = std::move(x_new);
    g = g_new;
    f = f_new;
    if (f < best.loss) {
      best.x = x;
      best.loss = f;
      best.grad_norm = g.norm();
    }
    best.iterations = iter + 1;
  }

  if (g.norm() <= opts.tolerance) {
    best.status = OptStatus::Converged;
  } else {
    best.status = OptStatus::MaxIterations;
  }
  // Report the last iterate's gradient when it is also the best-loss iterate.
  if (f <= best.loss) {
    best.x = x;
    best.loss = f;
    best.grad_norm = g.norm();
  }
  return best;
}

}  // namespace esprm
