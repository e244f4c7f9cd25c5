#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "esprm/common.hpp"
#include "esprm/data.hpp"
#include "esprm/nn.hpp"
#include "esprm/optim.hpp"
#include "esprm/surrogate.hpp"

namespace esprm {

/// Coefficients are (slope..., intercept); the intercept is last.
struct GlmFit {
  Vector coef;
  double grad_norm = 0.0;
  OptStatus status = OptStatus::Converged;
  /// Perfect separation: the likelihood maximizer lies at infinity.
  bool saturated = false;

  bool degraded() const { return saturated || grad_norm > 1e-6; }
};

/// Least squares via the normal equations, minimizing
/// ||X b - y||^2 + lambda ||b||^2 over b = (slopes, intercept).
inline Vector fit_linear_regression(const Matrix& features,
                                    const Vector& targets, double lambda = 0.0) {
  const auto n = features.rows();
  const auto d = features.cols();
  require(targets.size() == n, "linear regression: target length mismatch");
  require(n >= d + 1, "linear regression: need at least d+1 rows");
  require(lambda >= 0.0, "linear regression: ridge must be >= 0");

  Matrix design(n, d + 1);
  design.leftCols(d) = features;
  design.col(d).setOnes();

  if (lambda == 0.0) {
    Eigen::ColPivHouseholderQR<Matrix> qr(design);
    qr.setThreshold(1e-10);
    if (qr.rank() < d + 1) {
      throw Error(
          "linear regression: singular system (collinear features); supply a "
          "ridge lambda > 0");
    }
    return qr.solve(targets);
  }
  const Matrix gram =
      design.transpose() * design + lambda * Matrix::Identity(d + 1, d + 1);
  return Eigen::LDLT<Matrix>(gram).solve(design.transpose() * targets);
}

/// Logistic MLE for labels in {-1,+1}: minimizes the mean of
/// log(1 + exp(-s (x'b + b0))) with LBFGS to gradient tolerance 1e-6.
inline GlmFit fit_logistic_regression(const Matrix& features,
                                      const Vector& labels) {
  const auto n = features.rows();
  const auto d = features.cols();
  require(labels.size() == n, "logistic regression: label length mismatch");
  bool any_pos = false;
  bool any_neg = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    require(labels(i) == 1.0 || labels(i) == -1.0,
            "logistic regression: labels must be -1 or +1");
    (labels(i) > 0.0 ? any_pos : any_neg) = true;
  }
  require(any_pos && any_neg,
          "logistic regression: both label classes must be present");

  Objective objective = [&](const Vector& beta, Vector& grad) {
    double total = 0.0;
    grad = Vector::Zero(d + 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double margin =
          features.row(i).dot(beta.head(d)) + beta(d);
      const double s = labels(i);
      total += softplus(-s * margin);
      const double w = -s * sigmoid(-s * margin);
      grad.head(d) += w * features.row(i).transpose();
      grad(d) += w;
    }
    grad /= double(n);
    return total / double(n);
  };

  // Tight tolerance so separable problems push the margins deep enough
  // into the sigmoid tail for the saturation check below to see them.
  const auto res = lbfgs_minimize(
      objective, Vector::Zero(d + 1),
      LbfgsOptions{.tolerance = 1e-10, .max_iterations = 500});

  GlmFit fit;
  fit.coef = res.x;
  fit.grad_norm = res.grad_norm;
  fit.status = res.status;
  fit.saturated = true;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double margin = features.row(i).dot(res.x.head(d)) + res.x(d);
    if (sigmoid(-labels(i) * margin) > 1e-6) {
      fit.saturated = false;
      break;
    }
  }
  return fit;
}

enum class NuisanceFamily { LinearLogistic, CorrectSpecQuadratic, Mlp };

inline std::string to_string(NuisanceFamily f) {
  switch (f) {
    case NuisanceFamily::LinearLogistic: return "linear-logistic";
    case NuisanceFamily::CorrectSpecQuadratic: return "correct-spec-quadratic";
    case NuisanceFamily::Mlp: return "mlp";
  }
  return "?";
}

inline NuisanceFamily nuisance_family_from_string(std::string_view s) {
  if (s == "linear-logistic") return NuisanceFamily::LinearLogistic;
  if (s == "correct-spec-quadratic") return NuisanceFamily::CorrectSpecQuadratic;
  if (s == "mlp") return NuisanceFamily::Mlp;
  throw Error("unknown nuisance family '" + std::string(s) + "'");
}

/// Fitted conditional models. e1 returns P(T=+1 | x) before clipping;
/// e(-1 | x) is 1 - e1(x).
struct NuisanceModels {
  std::function<double(const Vector&)> e1;
  std::function<double(const Vector&)> mu_pos;
  std::function<double(const Vector&)> mu_neg;
  NuisanceFamily family = NuisanceFamily::LinearLogistic;
  bool propensity_degraded = false;
};

struct NuisanceOptions {
  double ridge = 0.0;
  // MLP family settings.
  std::vector<int> hidden = {50};
  double adam_lr = 0.001;
  int max_epochs = 2000;
  int patience = 5;
  std::uint64_t seed = 0;
};

/// Degree-2 monomial expansion (x0, x1, ..., x0^2, x0 x1, ...); no constant
/// term (regressions add their own intercept).
inline Matrix quadratic_expansion(const Matrix& X) {
  const auto n = X.rows();
  const auto d = X.cols();
  Matrix out(n, d + d * (d + 1) / 2);
  out.leftCols(d) = X;
  Eigen::Index c = d;
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index k = j; k < d; ++k) {
      out.col(c++) = X.col(j).cwiseProduct(X.col(k));
    }
  }
  return out;
}

namespace detail {

struct MlpFit {
  MlpSpec spec;
  Vector params;
  double initial_validation_loss = 0.0;
  double final_validation_loss = 0.0;
};

/// Full-batch Adam with patience-based early stopping on a held-back half of
/// the rows; returns the best-validation iterate.
inline MlpFit fit_mlp_objective(
    const Matrix& X, const Vector& target,
    const std::function<double(double, double)>& point_loss,
    const std::function<double(double, double)>& point_dloss,
    const NuisanceOptions& opts, std::string_view stream_label) {
  const auto n = X.rows();
  require(n >= 4, "mlp nuisance: too few rows");
  RngStream rng(opts.seed, stream_label);
  std::vector<Eigen::Index> order(n);
  for (Eigen::Index i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  const auto n_train = n / 2;

  Matrix Xtr(n_train, X.cols());
  Vector ttr(n_train);
  Matrix Xva(n - n_train, X.cols());
  Vector tva(n - n_train);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (i < n_train) {
      Xtr.row(i) = X.row(order[i]);
      ttr(i) = target(order[i]);
    } else {
      Xva.row(i - n_train) = X.row(order[i]);
      tva(i - n_train) = target(order[i]);
    }
  }

  MlpSpec spec{int(X.cols()), opts.hidden, 0.01};
  Vector params = init_params(spec, rng);

  auto eval_loss = [&](const Matrix& Xs, const Vector& ts,
                       const Vector& p) {
    const Vector g = mlp_forward_batch(spec, p, Xs);
    double total = 0.0;
    for (Eigen::Index i = 0; i < Xs.rows(); ++i) {
      total += point_loss(g(i), ts(i));
    }
    return total / double(Xs.rows());
  };

  AdamState adam(spec.param_count(), AdamConfig{.lr = opts.adam_lr});
  EarlyStop stop{.patience = opts.patience};
  MlpFit fit;
  fit.spec = spec;
  fit.params = params;
  fit.initial_validation_loss = eval_loss(Xva, tva, params);
  fit.final_validation_loss = fit.initial_validation_loss;
  stop.observe(fit.initial_validation_loss);

  for (int epoch = 0; epoch < opts.max_epochs; ++epoch) {
    const Vector g = mlp_forward_batch(spec, params, Xtr);
    Vector upstream(n_train);
    for (Eigen::Index i = 0; i < n_train; ++i) {
      upstream(i) = point_dloss(g(i), ttr(i));
    }
    const Vector grad =
        mlp_backward_batch(spec, params, Xtr, upstream) / double(n_train);
    adam_step(adam, params, grad);
    const double val = eval_loss(Xva, tva, params);
    if (val < fit.final_validation_loss) {
      fit.final_validation_loss = val;
      fit.params = params;
    }
    if (stop.observe(val)) break;
  }
  return fit;
}

}  // namespace detail

/// Fits e1 and the two per-arm outcome models on the tuning rows only.
inline NuisanceModels fit_nuisances(const Dataset& data,
                                    const std::vector<Eigen::Index>& tuning,
                                    NuisanceFamily family,
                                    const NuisanceOptions& opts = {}) {
  require(!tuning.empty(), "fit_nuisances: empty tuning split");
  const Dataset tune = subset(data, tuning);

  std::vector<Eigen::Index> pos_rows;
  std::vector<Eigen::Index> neg_rows;
  for (Eigen::Index i = 0; i < tune.n(); ++i) {
    (tune.T(i) > 0.0 ? pos_rows : neg_rows).push_back(i);
  }
  require(!pos_rows.empty() && !neg_rows.empty(),
          "fit_nuisances: a treatment arm is empty in the tuning split");

  NuisanceModels out;
  out.family = family;

  switch (family) {
    case NuisanceFamily::LinearLogistic:
    case NuisanceFamily::CorrectSpecQuadratic: {
      const bool quad = family == NuisanceFamily::CorrectSpecQuadratic;
      const Matrix feats = quad ? quadratic_expansion(tune.X) : tune.X;
      auto expand = [quad](const Vector& x) -> Vector {
        if (!quad) return x;
        const Matrix row = quadratic_expansion(x.transpose());
        return row.row(0).transpose();
      };

      const GlmFit prop = fit_logistic_regression(feats, tune.T);
      out.propensity_degraded = prop.degraded();
      const Vector pcoef = prop.coef;
      out.e1 = [pcoef, expand](const Vector& x) {
        const Vector f = expand(x);
        return sigmoid(f.dot(pcoef.head(f.size())) + pcoef(f.size()));
      };

      auto fit_arm = [&](const std::vector<Eigen::Index>& rows) {
        Matrix Xa(Eigen::Index(rows.size()), feats.cols());
        Vector ya(Eigen::Index(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
          Xa.row(Eigen::Index(i)) = feats.row(rows[i]);
          ya(Eigen::Index(i)) = tune.Y(rows[i]);
        }
        const Vector coef = fit_linear_regression(Xa, ya, opts.ridge);
        return [coef, expand](const Vector& x) {
          const Vector f = expand(x);
          return f.dot(coef.head(f.size())) + coef(f.size());
        };
      };
      out.mu_pos = fit_arm(pos_rows);
      out.mu_neg = fit_arm(neg_rows);
      break;
    }
    case NuisanceFamily::Mlp: {
      // Propensity: logistic loss on labels in {-1,+1}.
      const auto prop = detail::fit_mlp_objective(
          tune.X, tune.T,
          [](double g, double s) { return softplus(-s * g); },
          [](double g, double s) { return -s * sigmoid(-s * g); }, opts,
          "nuisance-mlp-propensity");
      out.e1 = [prop](const Vector& x) {
        return sigmoid(mlp_forward(prop.spec, prop.params, x));
      };

      auto fit_arm = [&](const std::vector<Eigen::Index>& rows,
                         std::string_view label) {
        Matrix Xa(Eigen::Index(rows.size()), tune.X.cols());
        Vector ya(Eigen::Index(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
          Xa.row(Eigen::Index(i)) = tune.X.row(rows[i]);
          ya(Eigen::Index(i)) = tune.Y(rows[i]);
        }
        const auto fit = detail::fit_mlp_objective(
            Xa, ya,
            [](double g, double y) { return 0.5 * (g - y) * (g - y); },
            [](double g, double y) { return g - y; }, opts, label);
        return [fit](const Vector& x) {
          return mlp_forward(fit.spec, fit.params, x);
        };
      };
      out.mu_pos = fit_arm(pos_rows, "nuisance-mlp-mu-pos");
      out.mu_neg = fit_arm(neg_rows, "nuisance-mlp-mu-neg");
      break;
    }
  }
  return out;
}

struct ScoreConfig {
  ScoreKind kind = ScoreKind::DR;
  double clip = 0.01;
};

/// Plug-in scores. Propensities are clipped into [clip, 1-clip] before any
/// division.
inline ScoredDataset compute_scores(const Dataset& data,
                                    const NuisanceModels& nuisances,
                                    const ScoreConfig& config) {
  require(config.clip > 0.0 && config.clip < 0.5,
          "compute_scores: clip must lie in (0, 0.5)");
  require(config.kind != ScoreKind::GIVEN,
          "compute_scores: GIVEN scores cannot be computed");
  data.validate();

  ScoredDataset out;
  out.X = data.X;
  out.T = data.T;
  out.Y = data.Y;
  out.kind = config.kind;
  out.psi.resize(data.n());

  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const Vector x = data.X.row(i).transpose();
    const double e1 =
        std::clamp(nuisances.e1(x), config.clip, 1.0 - config.clip);
    const double t = data.T(i);
    const double e_t = t > 0.0 ? e1 : 1.0 - e1;
    const double mu_p = nuisances.mu_pos(x);
    const double mu_n = nuisances.mu_neg(x);
    const double mu_t = t > 0.0 ? mu_p : mu_n;

    const double psi_dm = mu_p - mu_n;
    const double psi_ips = t * data.Y(i) / e_t;
    switch (config.kind) {
      case ScoreKind::DM:
        out.psi(i) = psi_dm;
        break;
      case ScoreKind::IPS:
        out.psi(i) = psi_ips;
        break;
      case ScoreKind::DR:
        out.psi(i) = psi_dm + psi_ips - t * mu_t / e_t;
        break;
      case ScoreKind::GIVEN:
        break;
    }
    require(std::isfinite(out.psi(i)),
            "compute_scores: non-finite score at row " + std::to_string(i + 1));
  }
  return out;
}

}  // namespace esprm
