#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>

#include "esprm/game.hpp"
#include "esprm/gmm.hpp"
#include "support/oracles.hpp"

using esprm::EsprmConfig;
using esprm::Matrix;
using esprm::MlpSpec;
using esprm::RngStream;
using esprm::ScoredDataset;
using esprm::Vector;

namespace {

const MlpSpec kLinear{2, {}, 0.01};

ScoredDataset make_scored(Matrix X, Vector psi) {
  ScoredDataset data;
  data.X = std::move(X);
  data.psi = std::move(psi);
  data.kind = esprm::ScoreKind::GIVEN;
  return data;
}

ScoredDataset random_scored(int n, std::uint64_t seed) {
  RngStream rng(seed, "game-random");
  Matrix X(n, 2);
  Vector psi(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = rng.normal();
    X(i, 1) = rng.normal();
    const double u = rng.uniform();
    psi(i) = u < 0.1 ? 0.0 : rng.normal();
  }
  return make_scored(std::move(X), std::move(psi));
}

Vector fixture_theta() {
  Vector t(3);
  t << 1.0, -0.5, 0.3;
  return t;
}

}  // namespace

TEST_CASE("u_term matches the hand examples") {
  REQUIRE(esprm::u_term(0.0, 1.0, 2.0) == -2.0);   // 1 * l'(0,+1) * 2
  REQUIRE(esprm::u_term(0.0, 0.0, 5.0) == 0.0);    // psi = 0 short-circuits
  REQUIRE(esprm::u_term(0.0, -3.0, 1.0) == 3.0);   // 3 * l'(0,-1) * 1
}

TEST_CASE("game objective on a single row with anchor at the policy") {
  Matrix X(1, 2);
  X.setZero();
  Vector psi(1);
  psi << 1.0;
  const auto data = make_scored(X, psi);
  const Vector theta = Vector::Zero(3);  // g(0) = 0
  Vector omega(3);
  omega << 0.0, 0.0, 2.0;  // f(0) = 2
  const auto v = esprm::game_objective(data, kLinear, theta, kLinear, omega,
                                       theta);
  REQUIRE(v.value == Catch::Approx(-3.0).margin(1e-15));
}

TEST_CASE("a zero critic nulls the objective and the policy gradient") {
  const auto data = random_scored(25, 3);
  RngStream rng(4, "theta");
  Vector theta(3), anchor(3);
  theta << rng.normal(), rng.normal(), rng.normal();
  anchor << rng.normal(), rng.normal(), rng.normal();
  const auto v = esprm::game_objective(data, kLinear, theta, kLinear,
                                       Vector::Zero(3), anchor);
  REQUIRE(v.value == 0.0);
  REQUIRE(v.grad_policy.norm() == 0.0);
}

TEST_CASE("game gradients match finite differences") {
  const auto data = random_scored(10, 5);
  const MlpSpec critic{2, {8}, 0.01};

  auto check = [&](const MlpSpec& policy_spec, std::uint64_t seed) {
    RngStream pr(seed, "p");
    RngStream cr(seed, "c");
    RngStream ar(seed, "a");
    const Vector theta = esprm::init_params(policy_spec, pr);
    const Vector omega = esprm::init_params(critic, cr);
    const Vector anchor = esprm::init_params(policy_spec, ar);

    const auto v = esprm::game_objective(data, policy_spec, theta, critic,
                                         omega, anchor);
    const Vector fd_policy = oracles::central_diff(
        [&](const Vector& p) {
          return esprm::game_objective(data, policy_spec, p, critic, omega,
                                       anchor, false, false)
              .value;
        },
        theta, 1e-6);
    const Vector fd_critic = oracles::central_diff(
        [&](const Vector& w) {
          return esprm::game_objective(data, policy_spec, theta, critic, w,
                                       anchor, false, false)
              .value;
        },
        omega, 1e-6);
    for (Eigen::Index i = 0; i < fd_policy.size(); ++i) {
      REQUIRE(oracles::rel_err(v.grad_policy(i), fd_policy(i)) < 1e-5);
    }
    for (Eigen::Index i = 0; i < fd_critic.size(); ++i) {
      REQUIRE(oracles::rel_err(v.grad_critic(i), fd_critic(i)) < 1e-5);
    }
  };
  check(kLinear, 6);
  check(MlpSpec{2, {5}, 0.01}, 7);
}

TEST_CASE("objective is quadratic in the critic scale") {
  const auto data = random_scored(30, 8);
  const MlpSpec critic{2, {6}, 0.01};
  RngStream pr(9, "p");
  RngStream cr(9, "c");
  RngStream ar(9, "a");
  const Vector theta = esprm::init_params(kLinear, pr);
  const Vector omega = esprm::init_params(critic, cr);
  const Vector anchor = esprm::init_params(kLinear, ar);

  // Scaling the critic's output layer by c scales f by c exactly.
  auto scaled = [&](double c) {
    Vector w = omega;
    const auto layout = esprm::layer_layout(critic);
    const auto& last = layout.back();
    w.segment(last.w_offset, last.in * last.out) *= c;
    w.segment(last.b_offset, last.out) *= c;
    return esprm::game_objective(data, kLinear, theta, critic, w, anchor,
                                 false, false)
        .value;
  };

  const double u1 = scaled(1.0);
  const double u2 = scaled(2.0);
  // U(c) = c*A - c^2*B must hold for every c.
  const double b = u1 - u2 / 2.0;
  const double a = u1 + b;
  for (double c : {0.5, 3.0, -1.0, 7.5}) {
    REQUIRE(std::abs(scaled(c) - (c * a - c * c * b)) < 1e-10);
  }

  // And the two coefficients are the mean game terms themselves.
  double mean_u = 0.0, mean_usq = 0.0;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const Vector x = data.X.row(i).transpose();
    const double g = esprm::mlp_forward(kLinear, theta, x);
    const double ga = esprm::mlp_forward(kLinear, anchor, x);
    const double f = esprm::mlp_forward(critic, omega, x);
    mean_u += esprm::u_term(g, data.psi(i), f);
    const double ua = esprm::u_term(ga, data.psi(i), f);
    mean_usq += ua * ua;
  }
  mean_u /= double(data.n());
  mean_usq /= double(data.n());
  REQUIRE(std::abs(a - mean_u) < 1e-12);
  REQUIRE(std::abs(b - 0.25 * mean_usq) < 1e-12);
}

TEST_CASE("the inner supremum sits at the conditional mean ratio") {
  // Three distinct contexts, several rows each, |psi| = 1, anchor with zero
  // parameters so the anchor-side weights square to exactly one.
  RngStream rng(10, "discrete");
  const int per_point = 12;
  Matrix points(3, 2);
  points << 1.0, 0.5, -0.8, 0.2, 0.3, -1.1;
  Matrix X(3 * per_point, 2);
  Vector psi(3 * per_point);
  for (int k = 0; k < 3; ++k) {
    for (int r = 0; r < per_point; ++r) {
      X.row(k * per_point + r) = points.row(k);
      psi(k * per_point + r) = rng.uniform() < 0.3 + 0.2 * k ? 1.0 : -1.0;
    }
  }
  const auto data = make_scored(X, psi);

  Vector theta(3);
  theta << 0.6, -0.4, 0.1;
  const Vector anchor = Vector::Zero(3);

  // Conditional means of |psi| l' at the policy, per context.
  Vector abar = Vector::Zero(3);
  for (int k = 0; k < 3; ++k) {
    for (int r = 0; r < per_point; ++r) {
      const Eigen::Index i = k * per_point + r;
      const double g = esprm::mlp_forward(kLinear, theta,
                                          X.row(i).transpose());
      const double s = psi(i) > 0 ? 1.0 : -1.0;
      abar(k) += esprm::loss_d1(g, s);
    }
    abar(k) /= per_point;
  }

  // A linear critic interpolates any three values at three generic points.
  Matrix design(3, 3);
  design << points(0, 0), points(0, 1), 1.0, points(1, 0), points(1, 1), 1.0,
      points(2, 0), points(2, 1), 1.0;
  auto value_at = [&](const Vector& f_values) {
    const Vector omega = design.colPivHouseholderQr().solve(f_values);
    return esprm::game_objective(data, kLinear, theta, kLinear, omega, anchor,
                                 false, false)
        .value;
  };

  // With unit anchor weights the per-point maximizer is 2 * abar_k, i.e.
  // proportional to the conditional mean of |psi| l'.
  const Vector analytic = 2.0 * abar;
  const double at_analytic = value_at(analytic);

  for (int k = 0; k < 3; ++k) {
    double best_f = 0.0, best_v = -1e100;
    for (double f = -4.0; f <= 4.0; f += 0.001) {
      Vector probe = analytic;
      probe(k) = f;
      const double v = value_at(probe);
      if (v > best_v) {
        best_v = v;
        best_f = f;
      }
    }
    REQUIRE(std::abs(best_f - analytic(k)) <= 0.002);
    REQUIRE(at_analytic >= best_v - 1e-9);
  }
}

TEST_CASE("linear-critic first-order conditions match the gmm system") {
  RngStream rng(11, "foc");
  const auto data = esprm::generate_fixture(fixture_theta(), 1000, rng);
  const auto basis = esprm::CriticBasis::polynomial(2, 1);

  Vector anchor(3);
  anchor << 0.4, 0.2, -0.1;
  esprm::GmmOptions opts;
  opts.stages = 1;
  const auto gmm = esprm::finite_gmm_fit(data, kLinear, basis, opts, 12,
                                         &anchor);

  // Reconstruct the optimal linear critic for that stage: f = 2 h' alpha
  // with alpha = (C + rho I)^{-1} m and h the gradient features.
  const Matrix C = esprm::weighting_matrix(data, kLinear, anchor, basis);
  const double rho = esprm::gmm_rho(C, opts.rho_scale);
  const Vector m = esprm::moment_vector(data, kLinear, gmm.model.theta, basis);
  const Matrix A = C + rho * Matrix::Identity(3, 3);
  const Vector alpha = A.ldlt().solve(m);

  Vector omega(3);  // basis order (1, x0, x1) -> critic layout (w0, w1, b)
  omega << 2.0 * alpha(1), 2.0 * alpha(2), 2.0 * alpha(0);

  const auto v = esprm::game_objective(data, kLinear, gmm.model.theta, kLinear,
                                       omega, anchor);
  REQUIRE(v.grad_policy.norm() <= 1e-4);
  REQUIRE(v.grad_critic.norm() <= 1e-4);
}

TEST_CASE("config resolution follows the published schedule") {
  EsprmConfig config;
  config.policy = kLinear;
  REQUIRE(esprm::resolve_policy_lr(config) == 0.001);
  config.policy = MlpSpec{2, {50}, 0.01};
  REQUIRE(esprm::resolve_policy_lr(config) == 0.0002);
  config.policy_lr = 0.01;
  REQUIRE(esprm::resolve_policy_lr(config) == 0.01);

  REQUIRE(esprm::resolve_epochs(config, 1000) == 8000);
  REQUIRE(esprm::resolve_epochs(config, 4000) == 2000);
  REQUIRE(esprm::resolve_epochs(config, 9000000) == 1);
  config.epochs = 123;
  REQUIRE(esprm::resolve_epochs(config, 1000) == 123);

  REQUIRE(esprm::resolve_batch_size(config, 800) == 800);
  REQUIRE(esprm::resolve_batch_size(config, 5000) == 256);
  config.batch_size = 64;
  REQUIRE(esprm::resolve_batch_size(config, 5000) == 64);
}

TEST_CASE("a zero critic class leaves the policy at its initialization") {
  RngStream rng(13, "zero-critic");
  const auto data = esprm::generate_fixture(fixture_theta(), 200, rng);
  EsprmConfig config;
  config.policy = kLinear;
  config.critic.reset();
  config.epochs = 25;
  config.seed = 14;
  const auto fit = esprm::esprm_fit(data, config);

  RngStream init(14, "esprm-policy-init");
  const Vector expected = esprm::init_params(kLinear, init);
  REQUIRE(fit.model.theta == expected);
  REQUIRE(fit.final_objective == 0.0);
}

TEST_CASE("esprm fits are deterministic in the seed") {
  RngStream rng(15, "seeded");
  const auto data = esprm::generate_fixture(fixture_theta(), 300, rng);
  EsprmConfig config;
  config.policy = kLinear;
  config.critic = esprm::default_critic_spec(2);
  config.epochs = 40;
  config.seed = 16;
  const auto a = esprm::esprm_fit(data, config);
  const auto b = esprm::esprm_fit(data, config);
  REQUIRE(a.model.theta == b.model.theta);
  REQUIRE(a.final_objective == b.final_objective);
}

TEST_CASE("the observer sees every epoch and validation tracks the best") {
  RngStream rng(17, "observer");
  const auto train = esprm::generate_fixture(fixture_theta(), 240, rng);
  const auto val = esprm::generate_fixture(fixture_theta(), 120, rng);
  EsprmConfig config;
  config.policy = kLinear;
  config.critic = esprm::default_critic_spec(2);
  config.epochs = 30;
  config.seed = 18;

  std::vector<esprm::EsprmEpochLog> logs;
  const auto fit = esprm::esprm_fit(train, config, &val,
                                    [&](const esprm::EsprmEpochLog& log) {
                                      logs.push_back(log);
                                    });
  REQUIRE(logs.size() == 30);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logs.size(); ++i) {
    REQUIRE(logs[i].epoch == int(i));
    REQUIRE(std::isfinite(logs[i].objective));
    REQUIRE(std::isfinite(logs[i].validation));
    best = std::min(best, logs[i].validation);
  }
  REQUIRE(fit.validation_risk == best);
  const double risk_at_returned =
      esprm::empirical_risk(kLinear, fit.model.theta, val).loss;
  REQUIRE(risk_at_returned == Catch::Approx(best).margin(1e-12));
}

TEST_CASE("non-finite scores abort with a location") {
  Matrix X(4, 2);
  X.setRandom();
  Vector psi(4);
  psi << 1.0, -1.0, 1e300, -1e300;  // u^2 overflows the anchor term
  const auto data = make_scored(X, psi);
  EsprmConfig config;
  config.policy = kLinear;
  config.critic = esprm::default_critic_spec(2);
  config.epochs = 3;
  REQUIRE_THROWS_WITH(esprm::esprm_fit(data, config),
                      Catch::Matchers::ContainsSubstring("epoch 0"));
}

TEST_CASE("adversarial training beats plain erm on fixture parameter mse") {
  const Vector theta_star = fixture_theta();
  const int reps = 64;
  double erm_mse = 0.0, game_mse = 0.0;
  for (int rep = 0; rep < reps; ++rep) {
    const auto data =
        esprm::generate_fixture(theta_star, 2000, std::uint64_t(9000 + rep));

    const auto erm = esprm::erm_fit(data, kLinear, {}, std::uint64_t(500 + rep));
    EsprmConfig config;
    config.policy = kLinear;
    config.critic = esprm::default_critic_spec(2);
    config.epochs = 500;       // noise ball reached by ~200 epochs
    config.tail_average = 0.5; // averageiterates over the post-arrival half
    config.seed = std::uint64_t(700 + rep);
    const auto game = esprm::esprm_fit(data, config);

    const double ee = oracles::aligned_distance(erm.model.theta, theta_star);
    const double eg = oracles::aligned_distance(game.model.theta, theta_star);
    erm_mse += ee * ee;
    game_mse += eg * eg;
  }
  erm_mse /= reps;
  game_mse /= reps;
  INFO("erm " << erm_mse << " esprm " << game_mse);
  REQUIRE(game_mse <= erm_mse);
}
