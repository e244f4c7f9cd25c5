#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "esprm/common.hpp"
#include "esprm/data.hpp"
#include "esprm/nn.hpp"
#include "esprm/optim.hpp"
#include "esprm/rng.hpp"
#include "esprm/surrogate.hpp"

namespace esprm {

// ---------------------------------------------------------------------------
// Game terms
// ---------------------------------------------------------------------------

/// u(x, psi; theta, f) = |psi| l'(g_theta(x), sign psi) f(x), with the policy
/// score and critic value already evaluated at x. psi = 0 contributes zero
/// and its sign is never taken.
inline double u_term(double g, double psi, double f_value) {
  if (psi == 0.0) return 0.0;
  const double s = psi > 0.0 ? 1.0 : -1.0;
  return std::abs(psi) * loss_d1(g, s) * f_value;
}

struct GameValue {
  double value = 0.0;
  Vector grad_policy;  // empty unless requested
  Vector grad_critic;  // empty unless requested
};

/// U(theta, f; anchor) = mean_i u(theta, f) - (1/4) mean_i u(anchor, f)^2.
/// The anchor term is a constant in theta (the anchor is detached), but both
/// terms move with the critic. Gradients are exact backprop.
inline GameValue game_objective(const ScoredDataset& data,
                                const MlpSpec& policy_spec,
                                const Vector& policy_params,
                                const MlpSpec& critic_spec,
                                const Vector& critic_params,
                                const Vector& anchor_params,
                                bool want_policy_grad = true,
                                bool want_critic_grad = true) {
  const Eigen::Index n = data.n();
  require(n > 0, "game_objective: empty dataset");
  const Vector g = mlp_forward_batch(policy_spec, policy_params, data.X);
  const Vector ga = mlp_forward_batch(policy_spec, anchor_params, data.X);
  const Vector f = mlp_forward_batch(critic_spec, critic_params, data.X);

  GameValue out;
  Vector policy_upstream = want_policy_grad ? Vector(n) : Vector();
  Vector critic_upstream = want_critic_grad ? Vector(n) : Vector();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double psi = data.psi(i);
    if (psi == 0.0) {
      if (want_policy_grad) policy_upstream(i) = 0.0;
      if (want_critic_grad) critic_upstream(i) = 0.0;
      continue;
    }
    const double s = psi > 0.0 ? 1.0 : -1.0;
    const double w = std::abs(psi);
    const double w1 = w * loss_d1(g(i), s);    // d u / d f at the policy
    const double wa = w * loss_d1(ga(i), s);   // the same at the anchor
    total += w1 * f(i) - 0.25 * wa * wa * f(i) * f(i);
    if (want_policy_grad) policy_upstream(i) = w * loss_d2(g(i)) * f(i);
    if (want_critic_grad) critic_upstream(i) = w1 - 0.5 * wa * wa * f(i);
  }
  out.value = total / double(n);
  if (want_policy_grad) {
    out.grad_policy = mlp_backward_batch(policy_spec, policy_params, data.X,
                                         policy_upstream) /
                      double(n);
  }
  if (want_critic_grad) {
    out.grad_critic = mlp_backward_batch(critic_spec, critic_params, data.X,
                                         critic_upstream) /
                      double(n);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Estimator
// ---------------------------------------------------------------------------

struct EsprmConfig {
  MlpSpec policy{1, {}, 0.01};
  /// Critic network; an empty optional means the critic class holds only the
  /// zero function, which degenerates the game to no policy movement.
  std::optional<MlpSpec> critic;
  /// <= 0 selects the default: 0.001 for linear policies, 0.0002 otherwise.
  double policy_lr = 0.0;
  /// Critic rate as a multiple of the policy rate.
  double critic_lr_multiple = 5.0;
  /// <= 0 selects the default min(8000000 / n, 8000), at least 1.
  int epochs = 0;
  /// <= 0 selects the default: full batch when n <= 1000, else 256.
  int batch_size = 0;
  /// Fraction of the final optimizer steps whose policy iterates are
  /// averaged into the returned parameters. The game's last iterate wanders
  /// in a noise ball (minibatch variance); the tail average sits at the
  /// orbit center. 0 (the default) returns the raw final iterate.
  double tail_average = 0.0;
  /// Start the game at the plain surrogate-risk minimizer instead of a
  /// random point. The quadratic penalty in U weights moments by the
  /// anchor's residuals, so the construction assumes an initial consistent
  /// estimate; a random start runs the early game under an arbitrary
  /// weighting and can settle on a poor solution.
  bool warm_start = false;
  /// Explicit starting point for the policy parameters (also the first
  /// anchor); takes precedence over warm_start. Empty falls back to the
  /// warm start or a random initialization.
  std::optional<Vector> policy_init;
  std::uint64_t seed = 0;
};

inline MlpSpec default_critic_spec(Eigen::Index input_dim) {
  return MlpSpec{int(input_dim), {50}, 0.01};
}

inline double resolve_policy_lr(const EsprmConfig& config) {
  if (config.policy_lr > 0.0) return config.policy_lr;
  return config.policy.linear() ? 0.001 : 0.0002;
}

inline int resolve_epochs(const EsprmConfig& config, Eigen::Index n) {
  if (config.epochs > 0) return config.epochs;
  const long by_n = 8000000 / long(n);
  return int(std::max(1L, std::min(by_n, 8000L)));
}

inline int resolve_batch_size(const EsprmConfig& config, Eigen::Index n) {
  if (config.batch_size > 0) return int(std::min<long>(config.batch_size, n));
  return n <= 1000 ? int(n) : 256;
}

struct EsprmEpochLog {
  int epoch = 0;
  double objective = 0.0;          // mean U over the epoch's batches
  double policy_grad_norm = 0.0;   // mean over batches
  double critic_grad_norm = 0.0;   // mean over batches
  double validation = std::numeric_limits<double>::quiet_NaN();
};

using EsprmObserver = std::function<void(const EsprmEpochLog&)>;

struct EsprmFit {
  PolicyModel model;
  double final_objective = 0.0;
  int epochs = 0;
  /// Validation risk of the returned iterate; NaN without a validation set.
  double validation_risk = std::numeric_limits<double>::quiet_NaN();
};

/// Adversarial fit: per batch, the critic takes an optimistic ascent step on
/// U, then the policy takes an optimistic descent step at the updated critic,
/// and the anchor moves to the policy iterate that preceded the step. With a
/// validation set the best-validation policy iterate is returned; otherwise
/// the tail average of the policy iterates over the final tail_average
/// fraction of steps (the raw final iterate when tail_average is 0).
inline EsprmFit esprm_fit(const ScoredDataset& data, const EsprmConfig& config,
                          const ScoredDataset* validation = nullptr,
                          const EsprmObserver& observer = nullptr) {
  data.validate();
  const Eigen::Index n = data.n();
  require(n > 0, "esprm_fit: empty dataset");
  require(config.policy.input_dim == data.X.cols(),
          "esprm_fit: policy input dimension mismatch");
  if (validation) {
    validation->validate();
    require(validation->X.cols() == data.X.cols(),
            "esprm_fit: validation dimension mismatch");
  }

  const double policy_lr = resolve_policy_lr(config);
  const double critic_lr = policy_lr * config.critic_lr_multiple;
  require(policy_lr > 0.0 && critic_lr > 0.0, "esprm_fit: rates must be > 0");
  require(config.tail_average >= 0.0 && config.tail_average <= 1.0,
          "esprm_fit: tail_average must be in [0, 1]");
  const int epochs = resolve_epochs(config, n);
  const int batch = resolve_batch_size(config, n);

  const long batches_per_epoch = long((n + batch - 1) / batch);
  const long total_steps = long(epochs) * batches_per_epoch;
  const long tail_steps =
      config.tail_average > 0.0
          ? std::max<long>(1, long(config.tail_average * double(total_steps)))
          : 0;
  const long tail_start = total_steps - tail_steps;

  Vector theta;
  if (config.policy_init) {
    require(config.policy_init->size() == config.policy.param_count(),
            "esprm_fit: policy_init size mismatch");
    theta = *config.policy_init;
  } else if (config.warm_start) {
    theta = erm_fit(data, config.policy, {}, config.seed).model.theta;
  } else {
    RngStream init_rng(config.seed, "esprm-policy-init");
    theta = init_params(config.policy, init_rng);
  }
  Vector anchor = theta;

  const bool has_critic = config.critic.has_value();
  MlpSpec critic_spec = has_critic ? *config.critic : MlpSpec{int(data.X.cols()), {}, 0.01};
  Vector omega;
  if (has_critic) {
    require(critic_spec.input_dim == data.X.cols(),
            "esprm_fit: critic input dimension mismatch");
    RngStream critic_rng(config.seed, "esprm-critic-init");
    omega = init_params(critic_spec, critic_rng);
  }

  OAdamState policy_state(theta.size(), game_adam_config(policy_lr));
  OAdamState critic_state(has_critic ? omega.size() : 1,
                          game_adam_config(critic_lr));

  RngStream shuffle_rng(config.seed, "esprm-shuffle");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[std::size_t(i)] = i;

  Vector best_theta = theta;
  double best_validation = std::numeric_limits<double>::infinity();
  double last_value = 0.0;
  Vector tail_sum = Vector::Zero(theta.size());
  long tail_count = 0;
  long step = 0;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    if (batch < n) shuffle_rng.shuffle(order);
    double epoch_value = 0.0, epoch_pnorm = 0.0, epoch_cnorm = 0.0;
    int batches = 0;
    ScoredDataset scratch;
    for (Eigen::Index start = 0; start < n; start += batch) {
      const Eigen::Index len = std::min<Eigen::Index>(batch, n - start);
      if (batch < n) {
        const std::vector<Eigen::Index> idx(order.begin() + start,
                                            order.begin() + start + len);
        scratch = subset(data, idx);
      }
      const ScoredDataset& part = batch < n ? scratch : data;

      double pnorm = 0.0, cnorm = 0.0, value = 0.0;
      if (has_critic) {
        // Critic ascends U; gradients evaluated before its own step.
        const auto before = game_objective(part, config.policy, theta,
                                           critic_spec, omega, anchor,
                                           /*want_policy_grad=*/false,
                                           /*want_critic_grad=*/true);
        value = before.value;
        cnorm = before.grad_critic.norm();
        if (!std::isfinite(value)) {
          throw Error("esprm_fit: non-finite objective at epoch " +
                      std::to_string(epoch) + ", batch " +
                      std::to_string(batches));
        }
        oadam_step(critic_state, omega, Vector(-before.grad_critic));

        // Policy descends U at the freshly updated critic.
        const auto after = game_objective(part, config.policy, theta,
                                          critic_spec, omega, anchor,
                                          /*want_policy_grad=*/true,
                                          /*want_critic_grad=*/false);
        pnorm = after.grad_policy.norm();
        const Vector prev = theta;
        oadam_step(policy_state, theta, after.grad_policy);
        anchor = prev;
      } else {
        // Zero critic: U == 0 identically and the policy cannot move.
        value = 0.0;
      }

      epoch_value += value;
      epoch_pnorm += pnorm;
      epoch_cnorm += cnorm;
      ++batches;
      last_value = value;
      // Without a critic theta never moves; skip averaging so the
      // returned policy is bitwise the initialization.
      if (has_critic && step >= tail_start) {
        tail_sum += theta;
        ++tail_count;
      }
      ++step;
    }

    EsprmEpochLog log;
    log.epoch = epoch;
    log.objective = epoch_value / batches;
    log.policy_grad_norm = epoch_pnorm / batches;
    log.critic_grad_norm = epoch_cnorm / batches;
    if (validation) {
      const double risk =
          empirical_risk(config.policy, theta, *validation).loss;
      log.validation = risk;
      if (risk < best_validation) {
        best_validation = risk;
        best_theta = theta;
      }
    }
    if (observer) observer(log);
  }

  EsprmFit fit;
  fit.epochs = epochs;
  fit.final_objective = last_value;
  if (validation) {
    fit.model = PolicyModel{config.policy, best_theta};
    fit.validation_risk = best_validation;
  } else if (tail_count > 0) {
    fit.model = PolicyModel{config.policy, Vector(tail_sum / double(tail_count))};
  } else {
    fit.model = PolicyModel{config.policy, theta};
  }
  return fit;
}

}  // namespace esprm
