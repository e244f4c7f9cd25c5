#pragma once

#include <optional>
#include <string>

#include "esprm/common.hpp"
#include "esprm/data.hpp"
#include "esprm/nuisance.hpp"
#include "esprm/rng.hpp"
#include "esprm/surrogate.hpp"

namespace esprm {

enum class ScenarioKind { Linear, Quadratic, WellSpecFixture };

inline std::string to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::Linear: return "linear";
    case ScenarioKind::Quadratic: return "quadratic";
    case ScenarioKind::WellSpecFixture: return "well-spec-fixture";
  }
  return "?";
}

inline ScenarioKind scenario_kind_from_string(std::string_view s) {
  if (s == "linear") return ScenarioKind::Linear;
  if (s == "quadratic") return ScenarioKind::Quadratic;
  if (s == "well-spec-fixture") return ScenarioKind::WellSpecFixture;
  throw Error("unknown scenario kind '" + std::string(s) + "'");
}

/// Synthetic data-generating process over 2-dimensional contexts.
/// Linear:    mu_t(x) = a_t'x + a_t0,            e1(x) = sigmoid(b'x + b0)
/// Quadratic: mu_t(x) = x'A_t x + a_t'x + a_t0,  e1(x) = sigmoid(x'Bx + b'x + b0)
/// WellSpecFixture: scores psi = +-c(x) drawn directly with
///   P(psi = +c(x) | x) = sigmoid(g_theta*(x)), c(x) = 0.5 + 0.4 sigmoid(x0-x1).
enum class FixtureScale { Heterogeneous, Unit };

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::Linear;
  int dim = 2;
  Vector a_pos;
  Vector a_neg;
  double a0_pos = 0.0;
  double a0_neg = 0.0;
  Vector b;
  double b0 = 0.0;
  Matrix A_pos;
  Matrix A_neg;
  Matrix B;
  Vector theta_star;  // fixture only: (slopes..., intercept)
  FixtureScale scale = FixtureScale::Heterogeneous;
};

/// Default scale function of the well-specified fixture; bounded in
/// (0.5, 0.9). Unit scale recovers the plain classification case |psi| = 1.
inline double fixture_scale(const Vector& x,
                            FixtureScale kind = FixtureScale::Heterogeneous) {
  if (kind == FixtureScale::Unit) return 1.0;
  return 0.5 + 0.4 * sigmoid(x(0) - x(1));
}

/// All coefficients iid standard normal; quadratic matrices symmetrized as
/// (M + M') / 2.
inline ScenarioSpec sample_scenario(ScenarioKind kind, std::uint64_t seed) {
  RngStream rng(seed, "scenario");
  const int d = 2;
  ScenarioSpec spec;
  spec.kind = kind;
  spec.dim = d;

  auto draw_vec = [&](int len) {
    Vector v(len);
    for (int i = 0; i < len; ++i) v(i) = rng.normal();
    return v;
  };
  auto draw_sym = [&] {
    Matrix m(d, d);
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) m(i, j) = rng.normal();
    }
    return ((m + m.transpose()) / 2.0).eval();
  };

  if (kind == ScenarioKind::WellSpecFixture) {
    spec.theta_star = draw_vec(d + 1);
    return spec;
  }
  spec.a_pos = draw_vec(d);
  spec.a0_pos = rng.normal();
  spec.a_neg = draw_vec(d);
  spec.a0_neg = rng.normal();
  spec.b = draw_vec(d);
  spec.b0 = rng.normal();
  if (kind == ScenarioKind::Quadratic) {
    spec.A_pos = draw_sym();
    spec.A_neg = draw_sym();
    spec.B = draw_sym();
  }
  return spec;
}

inline double scenario_mu(const ScenarioSpec& spec, double t, const Vector& x) {
  require(spec.kind != ScenarioKind::WellSpecFixture,
          "mu is undefined for the fixture");
  const bool pos = t > 0.0;
  double v = (pos ? spec.a_pos : spec.a_neg).dot(x) +
             (pos ? spec.a0_pos : spec.a0_neg);
  if (spec.kind == ScenarioKind::Quadratic) {
    v += x.dot((pos ? spec.A_pos : spec.A_neg) * x);
  }
  return v;
}

inline double scenario_e1(const ScenarioSpec& spec, const Vector& x) {
  require(spec.kind != ScenarioKind::WellSpecFixture,
          "e1 is undefined for the fixture");
  double z = spec.b.dot(x) + spec.b0;
  if (spec.kind == ScenarioKind::Quadratic) z += x.dot(spec.B * x);
  return sigmoid(z);
}

/// Conditional treatment effect E[Y(1) - Y(-1) | x]; for the fixture this is
/// E[psi | x] = c(x) (2 sigmoid(g*) - 1).
inline double scenario_tau(const ScenarioSpec& spec, const Vector& x) {
  if (spec.kind == ScenarioKind::WellSpecFixture) {
    const double g = spec.theta_star.head(x.size()).dot(x) +
                     spec.theta_star(x.size());
    return fixture_scale(x, spec.scale) * (2.0 * sigmoid(g) - 1.0);
  }
  return scenario_mu(spec, 1.0, x) - scenario_mu(spec, -1.0, x);
}

/// X ~ N(0, I), T ~ e1(X), Y = mu_T(X) + N(0,1).
inline Dataset generate_data(const ScenarioSpec& spec, Eigen::Index n,
                             RngStream rng) {
  require(spec.kind != ScenarioKind::WellSpecFixture,
          "generate_data: the fixture emits scored data, use generate_fixture");
  require(n >= 1, "generate_data: n must be >= 1");
  Dataset out;
  out.X.resize(n, spec.dim);
  out.T.resize(n);
  out.Y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < spec.dim; ++j) out.X(i, j) = rng.normal();
    const Vector x = out.X.row(i).transpose();
    out.T(i) = rng.uniform() < scenario_e1(spec, x) ? 1.0 : -1.0;
    out.Y(i) = scenario_mu(spec, out.T(i), x) + rng.normal();
  }
  return out;
}

inline Dataset generate_data(const ScenarioSpec& spec, Eigen::Index n,
                             std::uint64_t seed) {
  return generate_data(spec, n, RngStream(seed, "generate-data"));
}

/// One score draw at a fixed context: psi = +-c(x) with
/// P(psi = +c(x) | x) = sigmoid(g_theta*(x)).
inline double fixture_draw_psi(const Vector& theta_star, const Vector& x,
                               RngStream& rng,
                               FixtureScale scale = FixtureScale::Heterogeneous) {
  const auto d = x.size();
  const double g = theta_star.head(d).dot(x) + theta_star(d);
  const double c = fixture_scale(x, scale);
  return rng.uniform() < sigmoid(g) ? c : -c;
}

/// Scores drawn directly, which makes the linear class correctly specified:
/// E[psi_plus | x] / E[|psi| | x] = sigmoid(g_theta*(x)) and the conditional
/// moment E[|psi| l'(g_theta*(x), sign psi) | x] vanishes identically.
inline ScoredDataset generate_fixture(
    const Vector& theta_star, Eigen::Index n, RngStream rng,
    FixtureScale scale = FixtureScale::Heterogeneous) {
  const auto d = theta_star.size() - 1;
  require(d >= 1, "generate_fixture: theta_star needs slopes and an intercept");
  ScoredDataset out;
  out.kind = ScoreKind::GIVEN;
  out.X.resize(n, d);
  out.psi.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) out.X(i, j) = rng.normal();
    out.psi(i) =
        fixture_draw_psi(theta_star, out.X.row(i).transpose(), rng, scale);
  }
  return out;
}

inline ScoredDataset generate_fixture(
    const Vector& theta_star, Eigen::Index n, std::uint64_t seed,
    FixtureScale scale = FixtureScale::Heterogeneous) {
  return generate_fixture(theta_star, n, RngStream(seed, "generate-fixture"),
                          scale);
}

/// Analytic nuisances of a synthetic scenario (no estimation error).
inline NuisanceModels true_nuisances(const ScenarioSpec& spec) {
  require(spec.kind != ScenarioKind::WellSpecFixture,
          "true_nuisances: the fixture has no (T, Y) structure");
  NuisanceModels out;
  out.family = spec.kind == ScenarioKind::Linear
                   ? NuisanceFamily::LinearLogistic
                   : NuisanceFamily::CorrectSpecQuadratic;
  out.e1 = [spec](const Vector& x) { return scenario_e1(spec, x); };
  out.mu_pos = [spec](const Vector& x) { return scenario_mu(spec, 1.0, x); };
  out.mu_neg = [spec](const Vector& x) { return scenario_mu(spec, -1.0, x); };
  return out;
}

/// Parameters of the exactly-optimal linear policy, when one exists.
inline std::optional<Vector> optimal_linear_policy(const ScenarioSpec& spec) {
  if (spec.kind == ScenarioKind::WellSpecFixture) return spec.theta_star;
  if (spec.kind != ScenarioKind::Linear) return std::nullopt;
  Vector theta(spec.dim + 1);
  theta.head(spec.dim) = spec.a_pos - spec.a_neg;
  theta(spec.dim) = spec.a0_pos - spec.a0_neg;
  return theta;
}

/// Fresh context draws with the analytic effect tau; shared across every
/// method evaluated within one replication so value differences are paired.
struct OracleDraws {
  Matrix X;
  Vector tau;
  double j_star = 0.0;
  double j_star_se = 0.0;
};

inline OracleDraws make_oracle_draws(const ScenarioSpec& spec,
                                     Eigen::Index mc_size, RngStream rng) {
  require(mc_size >= 10000, "oracle draws: mc_size must be >= 10^4");
  OracleDraws out;
  out.X.resize(mc_size, spec.dim);
  out.tau.resize(mc_size);
  for (Eigen::Index i = 0; i < mc_size; ++i) {
    for (int j = 0; j < spec.dim; ++j) out.X(i, j) = rng.normal();
    out.tau(i) = scenario_tau(spec, out.X.row(i).transpose());
  }
  const Vector abs_tau = out.tau.cwiseAbs();
  out.j_star = abs_tau.mean();
  out.j_star_se = std::sqrt((abs_tau.array() - out.j_star).square().sum() /
                            double(mc_size - 1) / double(mc_size));
  return out;
}

inline OracleDraws make_oracle_draws(const ScenarioSpec& spec,
                                     Eigen::Index mc_size,
                                     std::uint64_t seed) {
  return make_oracle_draws(spec, mc_size, RngStream(seed, "oracle-draws"));
}

struct ValueEstimate {
  double value = 0.0;
  double se = 0.0;
};

/// J(pi) = E[sign(g_theta(X)) tau(X)] over the shared draws.
inline ValueEstimate oracle_policy_value(const OracleDraws& draws,
                                         const PolicyModel& policy) {
  const Vector g = policy.evaluate_batch(draws.X);
  const auto n = draws.X.rows();
  Vector contrib(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    contrib(i) = (g(i) >= 0.0 ? 1.0 : -1.0) * draws.tau(i);
  }
  ValueEstimate out;
  out.value = contrib.mean();
  out.se = std::sqrt((contrib.array() - out.value).square().sum() /
                     double(n - 1) / double(n));
  return out;
}

inline ValueEstimate oracle_policy_value(const ScenarioSpec& spec,
                                         const PolicyModel& policy,
                                         Eigen::Index mc_size,
                                         std::uint64_t seed) {
  return oracle_policy_value(make_oracle_draws(spec, mc_size, seed), policy);
}

/// Regret J* - J(policy) on the shared draws. Pointwise |tau| - pi tau >= 0,
/// so the estimate is never negative.
inline ValueEstimate oracle_regret(const OracleDraws& draws,
                                   const PolicyModel& policy) {
  const Vector g = policy.evaluate_batch(draws.X);
  const auto n = draws.X.rows();
  Vector contrib(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    contrib(i) =
        std::abs(draws.tau(i)) - (g(i) >= 0.0 ? 1.0 : -1.0) * draws.tau(i);
  }
  ValueEstimate out;
  out.value = contrib.mean();
  out.se = std::sqrt((contrib.array() - out.value).square().sum() /
                     double(n - 1) / double(n));
  return out;
}

}  // namespace esprm
