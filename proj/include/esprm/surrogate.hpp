#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "esprm/common.hpp"
#include "esprm/data.hpp"
#include "esprm/nn.hpp"
#include "esprm/optim.hpp"
#include "esprm/rng.hpp"

namespace esprm {

/// Logistic surrogate l(g, s) = 2 log(1 + exp(g)) - (s + 1) g, stable for
/// |g| up to ~700.
inline double loss(double g, double s) {
  require(s == 1.0 || s == -1.0, "loss: sign must be -1 or +1");
  return 2.0 * softplus(g) - (s + 1.0) * g;
}

/// dl/dg = 2 sigmoid(g) - (s + 1).
inline double loss_d1(double g, double s) {
  require(s == 1.0 || s == -1.0, "loss_d1: sign must be -1 or +1");
  return 2.0 * sigmoid(g) - (s + 1.0);
}

/// d2l/dg2 = 2 sigmoid(g) (1 - sigmoid(g)); does not depend on s.
inline double loss_d2(double g) {
  const double p = sigmoid(g);
  return 2.0 * p * (1.0 - p);
}

/// A policy is sign(g_theta(x)).
struct PolicyModel {
  MlpSpec spec;
  Vector theta;

  double evaluate(const Vector& x) const {
    return mlp_forward(spec, theta, x);
  }
  Vector evaluate_batch(const Matrix& X) const {
    return mlp_forward_batch(spec, theta, X);
  }
  double action(const Vector& x) const {
    return evaluate(x) >= 0.0 ? 1.0 : -1.0;
  }
};

struct RiskValue {
  double loss;
  Vector grad;
};

/// L_n(theta) = (1/n) sum_i |psi_i| l(g_theta(X_i), sign(psi_i)) and its
/// exact gradient. Rows with psi = 0 contribute nothing; their sign is never
/// evaluated.
inline RiskValue empirical_risk(const MlpSpec& spec, const Vector& theta,
                                const ScoredDataset& data) {
  require(data.n() > 0, "empirical_risk: empty dataset");
  const Vector g = mlp_forward_batch(spec, theta, data.X);
  const auto n = data.n();
  double total = 0.0;
  Vector weights(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double psi = data.psi(i);
    if (psi == 0.0) {
      weights(i) = 0.0;
      continue;
    }
    const double s = psi > 0.0 ? 1.0 : -1.0;
    const double w = std::abs(psi);
    total += w * loss(g(i), s);
    weights(i) = w * loss_d1(g(i), s);
  }
  RiskValue out;
  out.loss = total / double(n);
  out.grad = mlp_backward_batch(spec, theta, data.X, weights) / double(n);
  return out;
}

struct ErmOptions {
  LbfgsOptions lbfgs{.tolerance = 1e-9, .max_iterations = 500};
  double adam_lr = 0.001;
  int refine_patience = 5;
  int max_refine_epochs = 1000;
};

struct FitResult {
  PolicyModel model;
  double final_loss = 0.0;
  double grad_norm = 0.0;
  int lbfgs_iterations = 0;
  OptStatus status = OptStatus::Converged;
  /// Empirical minimizer lies at infinity: every weighted row is fully
  /// saturated, so the reported optimum is a direction, not a point.
  bool saturated = false;

  /// The fit contract is a gradient norm <= 1e-5 at the returned point;
  /// the optimizer's stop reason alone does not degrade a fit that meets it.
  bool degraded() const { return saturated || grad_norm > 1e-5; }
};

namespace detail {

inline bool fully_saturated(const MlpSpec& spec, const Vector& theta,
                            const ScoredDataset& data) {
  const Vector g = mlp_forward_batch(spec, theta, data.X);
  bool any = false;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const double psi = data.psi(i);
    if (psi == 0.0) continue;
    any = true;
    const double s = psi > 0.0 ? 1.0 : -1.0;
    if (std::abs(loss_d1(g(i), s)) > 1e-6) return false;
  }
  return any;
}

}  // namespace detail

/// Minimizes L_n with LBFGS from a seed-controlled random start, then
/// optionally refines with full-batch Adam under validation early stopping
/// (the refinement keeps the best-validation iterate). Deterministic in
/// (data, seed).
inline FitResult erm_fit(const ScoredDataset& data, const MlpSpec& spec,
                         const ErmOptions& opts, std::uint64_t seed,
                         const ScoredDataset* validation = nullptr) {
  require(data.n() > 0, "erm_fit: empty dataset");
  RngStream rng(seed, "erm-init");
  const Vector theta0 = init_params(spec, rng);

  Objective objective = [&](const Vector& theta, Vector& grad) {
    const RiskValue rv = empirical_risk(spec, theta, data);
    grad = rv.grad;
    return rv.loss;
  };
  const LbfgsResult lb = lbfgs_minimize(objective, theta0, opts.lbfgs);

  FitResult out;
  out.model = PolicyModel{spec, lb.x};
  out.final_loss = lb.loss;
  out.grad_norm = lb.grad_norm;
  out.lbfgs_iterations = lb.iterations;
  out.status = lb.status;

  if (validation != nullptr) {
    AdamState adam(spec.param_count(), AdamConfig{.lr = opts.adam_lr});
    EarlyStop stop{.patience = opts.refine_patience};
    Vector theta = lb.x;
    Vector best_theta = theta;
    double best_val = empirical_risk(spec, theta, *validation).loss;
    stop.observe(best_val);
    for (int epoch = 0; epoch < opts.max_refine_epochs; ++epoch) {
      const RiskValue rv = empirical_risk(spec, theta, data);
      adam_step(adam, theta, rv.grad);
      const double val = empirical_risk(spec, theta, *validation).loss;
      if (val < best_val) {
        best_val = val;
        best_theta = theta;
      }
      if (stop.observe(val)) break;
    }
    const RiskValue rv = empirical_risk(spec, best_theta, data);
    out.model.theta = best_theta;
    out.final_loss = rv.loss;
    out.grad_norm = rv.grad.norm();
  }

  out.saturated = detail::fully_saturated(spec, out.model.theta, data);
  return out;
}

}  // namespace esprm
