#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "esprm/common.hpp"
#include "esprm/data.hpp"
#include "esprm/nn.hpp"
#include "esprm/optim.hpp"
#include "esprm/rng.hpp"
#include "esprm/scenario.hpp"
#include "esprm/surrogate.hpp"

namespace esprm {

// ---------------------------------------------------------------------------
// Critic bases
// ---------------------------------------------------------------------------

/// A finite dictionary of critic functions f_1..f_k over contexts.
/// Polynomial bases list all monomials of total degree <= degree in graded
/// order (constant first). Random Fourier bases freeze their frequency and
/// phase draws at construction; features come in (b, b + pi/2) pairs so that
/// phi(x).phi(x) == 1 holds exactly, not just in expectation.
struct CriticBasis {
  enum class Kind { Polynomial, RandomFourier, Custom };

  Kind kind = Kind::Polynomial;
  Eigen::Index input_dim = 0;
  Eigen::Index feature_count = 0;

  // Polynomial
  int degree = 0;
  std::vector<std::vector<int>> exponents;

  // RandomFourier
  Matrix W;  // feature_count x input_dim, rows shared within a pair
  Vector b;  // feature_count
  double sigma = 0.5;

  // Custom
  std::function<Vector(const Vector&)> fn;

  static CriticBasis polynomial(Eigen::Index input_dim, int degree);
  static CriticBasis random_fourier(Eigen::Index input_dim,
                                    Eigen::Index count, double sigma,
                                    std::uint64_t seed);
  static CriticBasis custom(Eigen::Index input_dim, Eigen::Index count,
                            std::function<Vector(const Vector&)> fn);
};

namespace detail {

// Graded enumeration: total degree 0, 1, ..., degree; within a grade the
// leading coordinate carries the highest power first, so dim 2 / degree 2
// yields 1, x0, x1, x0^2, x0*x1, x1^2.
inline void append_exponents(Eigen::Index dim, int total,
                             std::vector<int>& scratch, std::size_t pos,
                             std::vector<std::vector<int>>& out) {
  if (pos + 1 == std::size_t(dim)) {
    scratch[pos] = total;
    out.push_back(scratch);
    return;
  }
  for (int p = total; p >= 0; --p) {
    scratch[pos] = p;
    append_exponents(dim, total - p, scratch, pos + 1, out);
  }
}

}  // namespace detail

inline CriticBasis CriticBasis::polynomial(Eigen::Index input_dim,
                                           int degree) {
  require(input_dim >= 1, "polynomial basis needs input_dim >= 1");
  require(degree >= 0, "polynomial basis needs degree >= 0");
  CriticBasis basis;
  basis.kind = Kind::Polynomial;
  basis.input_dim = input_dim;
  basis.degree = degree;
  std::vector<int> scratch(input_dim, 0);
  for (int t = 0; t <= degree; ++t) {
    detail::append_exponents(input_dim, t, scratch, 0, basis.exponents);
  }
  basis.feature_count = Eigen::Index(basis.exponents.size());
  return basis;
}

inline CriticBasis CriticBasis::random_fourier(Eigen::Index input_dim,
                                               Eigen::Index count,
                                               double sigma,
                                               std::uint64_t seed) {
  require(input_dim >= 1, "random Fourier basis needs input_dim >= 1");
  require(count >= 2 && count % 2 == 0,
          "random Fourier feature count must be even (features are paired)");
  require(sigma > 0.0, "random Fourier sigma must be positive");
  CriticBasis basis;
  basis.kind = Kind::RandomFourier;
  basis.input_dim = input_dim;
  basis.feature_count = count;
  basis.sigma = sigma;
  basis.W.resize(count, input_dim);
  basis.b.resize(count);
  RngStream rng(seed, "rks");
  const double two_pi = 6.283185307179586476925286766559;
  for (Eigen::Index pair = 0; pair < count / 2; ++pair) {
    for (Eigen::Index j = 0; j < input_dim; ++j) {
      basis.W(2 * pair, j) = rng.normal() / sigma;
    }
    basis.W.row(2 * pair + 1) = basis.W.row(2 * pair);
    const double phase = rng.uniform() * two_pi;
    basis.b(2 * pair) = phase;
    basis.b(2 * pair + 1) = phase + two_pi / 4.0;
  }
  return basis;
}

inline CriticBasis CriticBasis::custom(Eigen::Index input_dim,
                                       Eigen::Index count,
                                       std::function<Vector(const Vector&)> fn) {
  require(input_dim >= 1 && count >= 1, "custom basis needs positive sizes");
  require(static_cast<bool>(fn), "custom basis needs an evaluation function");
  CriticBasis basis;
  basis.kind = Kind::Custom;
  basis.input_dim = input_dim;
  basis.feature_count = count;
  basis.fn = std::move(fn);
  return basis;
}

inline Vector eval_basis(const CriticBasis& basis, const Vector& x) {
  require(x.size() == basis.input_dim, "basis input dimension mismatch");
  Vector f(basis.feature_count);
  switch (basis.kind) {
    case CriticBasis::Kind::Polynomial: {
      for (Eigen::Index j = 0; j < basis.feature_count; ++j) {
        double v = 1.0;
        const auto& e = basis.exponents[std::size_t(j)];
        for (Eigen::Index d = 0; d < basis.input_dim; ++d) {
          for (int p = 0; p < e[std::size_t(d)]; ++p) v *= x(d);
        }
        f(j) = v;
      }
      return f;
    }
    case CriticBasis::Kind::RandomFourier: {
      const double scale = std::sqrt(2.0 / double(basis.feature_count));
      f = ((basis.W * x + basis.b).array().cos() * scale).matrix();
      return f;
    }
    case CriticBasis::Kind::Custom: {
      f = basis.fn(x);
      require(f.size() == basis.feature_count,
              "custom basis returned wrong feature count");
      return f;
    }
  }
  throw Error("unreachable basis kind");
}

/// Row i holds eval_basis(basis, X.row(i)).
inline Matrix eval_basis_matrix(const CriticBasis& basis, const Matrix& X) {
  require(X.cols() == basis.input_dim, "basis input dimension mismatch");
  Matrix F(X.rows(), basis.feature_count);
  if (basis.kind == CriticBasis::Kind::RandomFourier) {
    const double scale = std::sqrt(2.0 / double(basis.feature_count));
    F = (((X * basis.W.transpose()).rowwise() + basis.b.transpose())
             .array()
             .cos() *
         scale)
            .matrix();
    return F;
  }
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    F.row(i) = eval_basis(basis, X.row(i).transpose()).transpose();
  }
  return F;
}

// ---------------------------------------------------------------------------
// Moment conditions
// ---------------------------------------------------------------------------

namespace detail {

// Per-row surrogate derivative weights at the given policy parameters.
// Rows with psi == 0 contribute zero and their sign is never taken.
inline void score_weights(const ScoredDataset& data, const MlpSpec& spec,
                          const Vector& params, Vector* d1_abs,
                          Vector* d2_abs) {
  const Vector g = mlp_forward_batch(spec, params, data.X);
  const Eigen::Index n = data.X.rows();
  if (d1_abs) d1_abs->resize(n);
  if (d2_abs) d2_abs->resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double psi = data.psi(i);
    if (psi == 0.0) {
      if (d1_abs) (*d1_abs)(i) = 0.0;
      if (d2_abs) (*d2_abs)(i) = 0.0;
      continue;
    }
    const double s = psi > 0.0 ? 1.0 : -1.0;
    const double w = std::abs(psi);
    if (d1_abs) (*d1_abs)(i) = w * loss_d1(g(i), s);
    if (d2_abs) (*d2_abs)(i) = w * loss_d2(g(i));
  }
}

}  // namespace detail

/// m_j = (1/n) sum_i |psi_i| l'(g_theta(x_i), sign psi_i) f_j(x_i), with the
/// basis features supplied as precomputed rows F (n x k).
inline Vector moment_vector(const ScoredDataset& data, const MlpSpec& spec,
                            const Vector& params, const Matrix& F) {
  require(F.rows() == data.X.rows(), "feature matrix row count mismatch");
  Vector w;
  detail::score_weights(data, spec, params, &w, nullptr);
  return F.transpose() * w / double(data.X.rows());
}

inline Vector moment_vector(const ScoredDataset& data, const MlpSpec& spec,
                            const Vector& params, const CriticBasis& basis) {
  return moment_vector(data, spec, params, eval_basis_matrix(basis, data.X));
}

/// C_jk = (1/n) sum_i psi_i^2 l'(g_anchor(x_i), sign psi_i)^2 f_j f_k,
/// the Gram matrix of per-row weighted features: symmetric PSD.
inline Matrix weighting_matrix(const ScoredDataset& data, const MlpSpec& spec,
                               const Vector& anchor_params, const Matrix& F) {
  require(F.rows() == data.X.rows(), "feature matrix row count mismatch");
  Vector w;
  detail::score_weights(data, spec, anchor_params, &w, nullptr);
  const Matrix weighted = (F.array().colwise() * w.array()).matrix();
  Matrix C = weighted.transpose() * weighted / double(data.X.rows());
  C = ((C + C.transpose()) * 0.5).eval();  // scrub round-off asymmetry
  return C;
}

inline Matrix weighting_matrix(const ScoredDataset& data, const MlpSpec& spec,
                               const Vector& anchor_params,
                               const CriticBasis& basis) {
  return weighting_matrix(data, spec, anchor_params,
                          eval_basis_matrix(basis, data.X));
}

// ---------------------------------------------------------------------------
// GMM objective
// ---------------------------------------------------------------------------

struct GmmOptions {
  int stages = 3;
  /// true: quadratic form in (C + rho I)^{-1} (optimally weighted GMM).
  /// false: the literal form m' C m, kept for comparison runs.
  bool inverse_weighting = true;
  /// rho = rho_scale * trace(C) / k.
  double rho_scale = 1e-6;
  LbfgsOptions lbfgs{10, 1e-9, 500};
};

/// Scalar quadratic form m' (C + rho I)^{-1} m (or m' C m when
/// inverse_weighting is off). rho must be positive in the inverse form.
inline double gmm_quadratic_form(const Vector& m, const Matrix& C, double rho,
                                 bool inverse_weighting = true) {
  require(C.rows() == m.size() && C.cols() == m.size(),
          "weighting matrix shape mismatch");
  if (!inverse_weighting) return m.dot(C * m);
  require(rho > 0.0, "gmm regularization rho must be positive");
  const Matrix A = C + rho * Matrix::Identity(m.size(), m.size());
  return m.dot(A.ldlt().solve(m));
}

struct GmmObjective {
  double value = 0.0;
  Vector grad;  // in policy parameters, anchor weighting held fixed
};

/// Value and exact policy-parameter gradient of the stage objective
/// O(theta) = m(theta)' (C + rho I)^{-1} m(theta) with C fixed.
/// d m_j / d theta = mean_i |psi_i| l''(g_i) f_j(x_i) grad_theta g(x_i), so
/// grad O = backprop of per-row upstream (2/n) |psi_i| l''(g_i) (f_i . alpha)
/// where alpha solves (C + rho I) alpha = m.
inline GmmObjective gmm_objective(const ScoredDataset& data,
                                  const MlpSpec& spec, const Vector& params,
                                  const Matrix& F, const Matrix& C, double rho,
                                  bool inverse_weighting = true) {
  const Eigen::Index n = data.X.rows();
  Vector d1, d2;
  detail::score_weights(data, spec, params, &d1, &d2);
  const Vector m = F.transpose() * d1 / double(n);

  Vector alpha;
  if (inverse_weighting) {
    require(rho > 0.0, "gmm regularization rho must be positive");
    const Matrix A = C + rho * Matrix::Identity(m.size(), m.size());
    alpha = A.ldlt().solve(m);
  } else {
    alpha = C * m;
  }

  GmmObjective out;
  out.value = m.dot(alpha);
  const Vector upstream =
      ((2.0 / double(n)) * d2.array() * (F * alpha).array()).matrix();
  out.grad = mlp_backward_batch(spec, params, data.X, upstream);
  return out;
}

inline double gmm_rho(const Matrix& C, double rho_scale) {
  const double rho = rho_scale * C.trace() / double(C.rows());
  // A weighting matrix can be exactly zero (psi == 0 everywhere); keep the
  // solve well posed, the moments are zero too in that case.
  return rho > 0.0 ? rho : 1e-12;
}

// ---------------------------------------------------------------------------
// Multi-stage fit
// ---------------------------------------------------------------------------

struct GmmFit {
  PolicyModel model;
  std::vector<double> stage_objectives;  // final objective value per stage
  double moment_norm = 0.0;              // ||m||_2 at the returned parameters
  OptStatus status = OptStatus::Converged;  // last stage
};

/// Multi-step GMM: stage s re-weights with C(anchor), minimizes the
/// quadratic form in theta, then promotes the minimizer to the next anchor.
/// The first anchor is standard normal (seed-controlled) unless an explicit
/// one is supplied; each stage's search starts at its anchor.
inline GmmFit finite_gmm_fit(const ScoredDataset& data, const MlpSpec& spec,
                             const CriticBasis& basis, const GmmOptions& opts,
                             std::uint64_t seed,
                             const Vector* anchor = nullptr) {
  data.validate();
  require(basis.input_dim == data.X.cols(), "basis input dimension mismatch");
  require(basis.feature_count >= spec.param_count(),
          "critic basis must have at least as many features as the policy "
          "has parameters");
  require(opts.stages >= 1, "gmm needs at least one stage");

  const Matrix F = eval_basis_matrix(basis, data.X);

  Vector tilde;
  if (anchor) {
    require(anchor->size() == spec.param_count(), "anchor size mismatch");
    tilde = *anchor;
  } else {
    RngStream rng(seed, "gmm-anchor");
    tilde.resize(spec.param_count());
    for (Eigen::Index i = 0; i < tilde.size(); ++i) tilde(i) = rng.normal();
  }

  GmmFit fit;
  for (int stage = 0; stage < opts.stages; ++stage) {
    const Matrix C = weighting_matrix(data, spec, tilde, F);
    const double rho = gmm_rho(C, opts.rho_scale);
    auto objective = [&](const Vector& params, Vector& grad) {
      const auto o = gmm_objective(data, spec, params, F, C, rho,
                                   opts.inverse_weighting);
      grad = o.grad;
      return o.value;
    };
    LbfgsResult res;
    try {
      res = lbfgs_minimize(objective, tilde, opts.lbfgs);
    } catch (const Error& e) {
      throw Error("gmm stage " + std::to_string(stage) + ": " + e.what());
    }
    fit.stage_objectives.push_back(res.loss);
    fit.status = res.status;
    tilde = res.x;
  }

  fit.model = PolicyModel{spec, tilde};
  fit.moment_norm = moment_vector(data, spec, tilde, F).norm();
  return fit;
}

// ---------------------------------------------------------------------------
// Efficient instruments
// ---------------------------------------------------------------------------

/// Plug-in efficient instruments f*(x) = D(x) / Omega(x) with
/// Omega(x) = E[psi^2 l'(g(X), sign psi)^2 | X = x] and
/// D(x) = E[|psi| l''(g(X)) | X = x] * grad_theta g(x).
struct EfficientInstruments {
  std::function<double(const Vector&)> omega;
  std::function<Vector(const Vector&)> d;
  Eigen::Index k = 0;  // instrument count = policy parameter count
  double omega_floor = 1e-12;

  Vector f_star(const Vector& x) const {
    const double w = omega(x);
    if (!(w > omega_floor)) {
      std::string msg = "Omega estimate not positive at x = [";
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        if (i) msg += ", ";
        msg += std::to_string(x(i));
      }
      msg += "]";
      throw Error(msg);
    }
    return d(x) / w;
  }

  CriticBasis to_basis(Eigen::Index input_dim) const {
    auto self = *this;
    return CriticBasis::custom(
        input_dim, k, [self](const Vector& x) { return self.f_star(x); });
  }
};

/// Analytic conditionals: the caller supplies P(psi > 0 | x) and the
/// magnitude |psi| as a function of x (two-point conditional law).
inline EfficientInstruments efficient_instruments_analytic(
    const PolicyModel& policy, std::function<double(const Vector&)> p_pos,
    std::function<double(const Vector&)> magnitude) {
  EfficientInstruments inst;
  inst.k = policy.spec.param_count();
  const MlpSpec spec = policy.spec;
  const Vector params = policy.theta;
  inst.omega = [spec, params, p_pos, magnitude](const Vector& x) {
    const double g = mlp_forward(spec, params, x);
    const double p = p_pos(x);
    const double c = magnitude(x);
    const double dpos = loss_d1(g, 1.0);
    const double dneg = loss_d1(g, -1.0);
    return c * c * (p * dpos * dpos + (1.0 - p) * dneg * dneg);
  };
  inst.d = [spec, params, magnitude](const Vector& x) {
    const double g = mlp_forward(spec, params, x);
    return Vector((magnitude(x) * loss_d2(g)) *
                  mlp_backward(spec, params, x, 1.0));
  };
  return inst;
}

/// Instruments for the well-specified fixture at the fitted policy.
inline EfficientInstruments fixture_efficient_instruments(
    const PolicyModel& policy, const Vector& theta_star,
    FixtureScale scale = FixtureScale::Heterogeneous) {
  require(theta_star.size() == policy.spec.input_dim + 1,
          "fixture truth must be linear in the context dimension");
  const Vector ts = theta_star;
  auto p_pos = [ts](const Vector& x) {
    const double g = ts.head(x.size()).dot(x) + ts(x.size());
    return sigmoid(g);
  };
  auto magnitude = [scale](const Vector& x) {
    return fixture_scale(x, scale);
  };
  return efficient_instruments_analytic(policy, p_pos, magnitude);
}

/// Kernel-smoothed plug-in conditionals over a scored dataset, for use off
/// synthetic scenarios. Gaussian product kernel, shared bandwidth.
inline EfficientInstruments efficient_instruments_smoothed(
    const ScoredDataset& data, const PolicyModel& policy, double bandwidth) {
  require(bandwidth > 0.0, "bandwidth must be positive");
  data.validate();
  const MlpSpec spec = policy.spec;
  const Vector params = policy.theta;

  // Precompute per-row targets at the fitted policy.
  const Eigen::Index n = data.X.rows();
  auto targets = std::make_shared<std::pair<Vector, Vector>>();
  targets->first.resize(n);   // psi^2 l'^2
  targets->second.resize(n);  // |psi| l''
  const Vector g = mlp_forward_batch(spec, params, data.X);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double psi = data.psi(i);
    if (psi == 0.0) {
      targets->first(i) = 0.0;
      targets->second(i) = 0.0;
      continue;
    }
    const double s = psi > 0.0 ? 1.0 : -1.0;
    const double d1 = loss_d1(g(i), s);
    targets->first(i) = psi * psi * d1 * d1;
    targets->second(i) = std::abs(psi) * loss_d2(g(i));
  }
  const Matrix X = data.X;

  auto smooth = [X, bandwidth](const Vector& values, const Vector& x) {
    double num = 0.0, den = 0.0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const double d2 = (X.row(i).transpose() - x).squaredNorm();
      const double w = std::exp(-0.5 * d2 / (bandwidth * bandwidth));
      num += w * values(i);
      den += w;
    }
    return den > 0.0 ? num / den : 0.0;
  };

  EfficientInstruments inst;
  inst.k = spec.param_count();
  inst.omega = [smooth, targets](const Vector& x) {
    return smooth(targets->first, x);
  };
  inst.d = [smooth, targets, spec, params](const Vector& x) {
    const Vector h = mlp_backward(spec, params, x, 1.0);
    return Vector(smooth(targets->second, x) * h);
  };
  return inst;
}

}  // namespace esprm
