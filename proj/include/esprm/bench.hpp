#pragma once

// Synthetic benchmark protocol. Each replication samples a fresh scenario,
// fits nuisances on a held-out tuning draw of the same size as the training
// draw, scores the training draw, fits every method on the identical scored
// data, and measures regret against the analytic oracle. Aggregates are the
// relative mean regret reduction (RMRR) versus the leading ERM baseline and
// the normalized-parameter squared error, both with percentile bootstrap
// intervals over replications.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <esprm/common.hpp>
#include <esprm/data.hpp>
#include <esprm/game.hpp>
#include <esprm/gmm.hpp>
#include <esprm/nuisance.hpp>
#include <esprm/scenario.hpp>
#include <esprm/surrogate.hpp>

namespace esprm {

struct MethodSpec {
  enum class Kind { Erm, Esprm, FiniteGmm };
  enum class GmmBasis { Polynomial, RandomFourier };

  Kind kind = Kind::Erm;
  std::string label;     // report key; resolved_label() fills in a default
  int esprm_epochs = 0;  // 0 keeps the schedule default min(8000000/n, 8000)
  GmmBasis basis = GmmBasis::Polynomial;
  int degree = 3;
  int rks_features = 64;

  std::string resolved_label() const {
    if (!label.empty()) return label;
    switch (kind) {
      case Kind::Erm: return "erm";
      case Kind::Esprm: return "esprm";
      case Kind::FiniteGmm:
        return basis == GmmBasis::Polynomial
                   ? "gmm-poly" + std::to_string(degree)
                   : "gmm-rks" + std::to_string(rks_features);
    }
    return "?";
  }
};

struct ExperimentPlan {
  ScenarioKind scenario = ScenarioKind::Linear;
  MlpSpec policy{2, {}, 0.01};
  std::vector<MethodSpec> methods{{MethodSpec::Kind::Erm, "", 0},
                                  {MethodSpec::Kind::Esprm, "", 0}};
  std::vector<Eigen::Index> n_grid{100, 200, 500, 1000, 2000, 5000, 10000};
  int reps = 64;
  std::uint64_t seed = 0;
  ScoreKind score = ScoreKind::DR;
  double clip = 0.01;
  std::optional<NuisanceFamily> nuisances;  // default matched to the scenario
  Eigen::Index oracle_mc = 1000000;
  int bootstrap = 1000;

  NuisanceFamily resolved_nuisances() const {
    if (nuisances) return *nuisances;
    return scenario == ScenarioKind::Quadratic
               ? NuisanceFamily::CorrectSpecQuadratic
               : NuisanceFamily::LinearLogistic;
  }

  void validate() const {
    require(scenario != ScenarioKind::WellSpecFixture,
            "bench: benchmark scenarios are Linear or Quadratic; the fixture "
            "has no observational (T, Y) layer to fit nuisances on");
    require(!methods.empty(), "bench: methods list is empty");
    require(methods.front().kind == MethodSpec::Kind::Erm,
            "bench: the leading method is the RMRR baseline and must be erm");
    require(!n_grid.empty(), "bench: n grid is empty");
    for (const auto n : n_grid) require(n >= 10, "bench: every n must be >= 10");
    require(reps >= 1, "bench: reps must be >= 1");
    require(bootstrap >= 1, "bench: bootstrap resamples must be >= 1");
    require(oracle_mc >= 10000, "bench: oracle_mc must be >= 10^4");
    require(policy.input_dim == 2, "bench: scenarios draw 2-dimensional X");
    for (const auto& m : methods) {
      require(m.esprm_epochs >= 0, "bench: esprm_epochs must be >= 0");
      require(m.degree >= 1 && m.rks_features >= 2,
              "bench: degenerate critic basis");
    }
  }
};

/// Unit norm with the sign chosen to make the first coordinate positive: the
/// reporting convention for comparing scale-invariant linear policies.
inline Vector normalize_policy_params(const Vector& theta) {
  Vector out = theta;
  const double nrm = out.norm();
  if (nrm > 0.0) out /= nrm;
  if (out(0) < 0.0) out = -out;
  return out;
}

struct MethodOutcome {
  double regret = std::numeric_limits<double>::quiet_NaN();
  double regret_se = std::numeric_limits<double>::quiet_NaN();
  double param_se = std::numeric_limits<double>::quiet_NaN();  // squared error
};

/// One (replication, n) cell. When ok, methods is aligned with the plan's
/// method list; otherwise error holds the reason the cell was excluded.
struct CellRecord {
  int rep = 0;
  Eigen::Index n = 0;
  bool ok = false;
  std::string error;
  std::vector<MethodOutcome> methods;
};

struct CellStats {
  Eigen::Index n = 0;
  int included = 0;
  int excluded = 0;
  double mean_regret = std::numeric_limits<double>::quiet_NaN();
  double regret_lo = std::numeric_limits<double>::quiet_NaN();
  double regret_hi = std::numeric_limits<double>::quiet_NaN();
  double rmrr = std::numeric_limits<double>::quiet_NaN();
  double rmrr_lo = std::numeric_limits<double>::quiet_NaN();
  double rmrr_hi = std::numeric_limits<double>::quiet_NaN();
  double param_mse = std::numeric_limits<double>::quiet_NaN();
  double param_lo = std::numeric_limits<double>::quiet_NaN();
  double param_hi = std::numeric_limits<double>::quiet_NaN();
};

struct MethodResult {
  std::string method;
  std::vector<CellStats> cells;  // aligned with plan.n_grid
};

struct ExperimentReport {
  ExperimentPlan plan;
  std::vector<MethodResult> methods;
  std::vector<CellRecord> records;  // rep-major, n minor
  // Wall-clock time; volatile, so serializers keep it out of the canonical
  // report and byte-identity across runs and worker counts survives.
  double runtime_seconds = 0.0;
};

/// Fits one benchmark method on scored data. The seed feeds the
/// optimizer initialization and, for the random Fourier basis, the
/// feature draws.
inline PolicyModel fit_method(const MethodSpec& method,
                              const ScoredDataset& data, const MlpSpec& policy,
                              std::uint64_t seed) {
  switch (method.kind) {
    case MethodSpec::Kind::Erm:
      return erm_fit(data, policy, {}, seed).model;
    case MethodSpec::Kind::Esprm: {
      EsprmConfig config;
      config.policy = policy;
      config.critic = default_critic_spec(data.X.cols());
      config.epochs = method.esprm_epochs;
      config.seed = seed;
      return esprm_fit(data, config).model;
    }
    case MethodSpec::Kind::FiniteGmm: {
      const CriticBasis basis =
          method.basis == MethodSpec::GmmBasis::Polynomial
              ? CriticBasis::polynomial(data.X.cols(), method.degree)
              : CriticBasis::random_fourier(
                    data.X.cols(), method.rks_features, 0.5,
                    RngStream(seed, "bench-rks-basis").next_u64());
      return finite_gmm_fit(data, policy, basis, {}, seed).model;
    }
  }
  throw Error("fit_method: unknown method kind");
}

namespace detail {

inline std::uint64_t bench_seed(std::uint64_t master, const std::string& tag) {
  return RngStream(master, tag).next_u64();
}

/// Runs one replication across the whole n grid, writing into the rep's
/// slice of the record table. Never throws: failures mark cells excluded.
inline void run_rep(const ExperimentPlan& plan, int rep,
                    std::vector<CellRecord>& records) {
  const std::size_t base = std::size_t(rep) * plan.n_grid.size();
  for (std::size_t ni = 0; ni < plan.n_grid.size(); ++ni) {
    records[base + ni].rep = rep;
    records[base + ni].n = plan.n_grid[ni];
  }

  ScenarioSpec spec;
  OracleDraws oracle;
  try {
    spec = sample_scenario(
        plan.scenario,
        bench_seed(plan.seed, "bench-scenario-" + std::to_string(rep)));
    oracle = make_oracle_draws(
        spec, plan.oracle_mc,
        bench_seed(plan.seed, "bench-oracle-" + std::to_string(rep)));
  } catch (const std::exception& e) {
    for (std::size_t ni = 0; ni < plan.n_grid.size(); ++ni) {
      records[base + ni].error = e.what();
    }
    return;
  }

  // Parameter error is defined only when an exactly-optimal member of the
  // linear policy class exists and the fitted policy is linear itself.
  Vector theta_star_norm;
  const auto theta_star = optimal_linear_policy(spec);
  const bool param_defined = theta_star.has_value() && plan.policy.linear();
  if (param_defined) theta_star_norm = normalize_policy_params(*theta_star);

  const NuisanceFamily family = plan.resolved_nuisances();
  for (std::size_t ni = 0; ni < plan.n_grid.size(); ++ni) {
    CellRecord& cell = records[base + ni];
    const Eigen::Index n = plan.n_grid[ni];
    const std::string tag =
        std::to_string(rep) + "-" + std::to_string(n);
    try {
      const Dataset train =
          generate_data(spec, n, bench_seed(plan.seed, "bench-train-" + tag));
      const Dataset tune =
          generate_data(spec, n, bench_seed(plan.seed, "bench-tune-" + tag));
      std::vector<Eigen::Index> tuning(std::size_t(tune.n()));
      std::iota(tuning.begin(), tuning.end(), Eigen::Index{0});
      const NuisanceModels nuis = fit_nuisances(tune, tuning, family);
      const ScoredDataset scored =
          compute_scores(train, nuis, {plan.score, plan.clip});

      // One fit seed per cell, shared by every method, so two entries of the
      // same method are bitwise identical and self-RMRR is exactly zero.
      const std::uint64_t fit_seed =
          bench_seed(plan.seed, "bench-fit-" + tag);
      for (const auto& method : plan.methods) {
        const PolicyModel model =
            fit_method(method, scored, plan.policy, fit_seed);
        const ValueEstimate reg = oracle_regret(oracle, model);
        MethodOutcome out;
        out.regret = reg.value;
        out.regret_se = reg.se;
        if (param_defined) {
          out.param_se =
              (normalize_policy_params(model.theta) - theta_star_norm)
                  .squaredNorm();
        }
        cell.methods.push_back(out);
      }
      cell.ok = true;
    } catch (const std::exception& e) {
      cell.ok = false;
      cell.methods.clear();
      cell.error = e.what();
    }
  }
}

inline std::pair<double, double> percentile_interval(std::vector<double> v) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (v.empty()) return {nan, nan};
  std::sort(v.begin(), v.end());
  const auto b = double(v.size() - 1);
  const auto lo = std::size_t(std::floor(0.025 * b));
  const auto hi = std::size_t(std::ceil(0.975 * b));
  return {v[lo], v[hi]};
}

}  // namespace detail

/// Full protocol: every replication is an independent task; a worker pool
/// consumes them and the single-threaded reducer aggregates in replication
/// order, so the report depends only on the plan, never on the worker count.
inline ExperimentReport run_experiment(const ExperimentPlan& plan,
                                       int workers = 1) {
  plan.validate();
  const auto t0 = std::chrono::steady_clock::now();

  ExperimentReport report;
  report.plan = plan;
  report.records.resize(std::size_t(plan.reps) * plan.n_grid.size());

  std::atomic<int> next{0};
  const auto work = [&] {
    for (;;) {
      const int rep = next.fetch_add(1);
      if (rep >= plan.reps) return;
      detail::run_rep(plan, rep, report.records);
    }
  };
  const int pool_size = std::clamp(workers, 1, plan.reps);
  if (pool_size == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(std::size_t(pool_size));
    for (int w = 0; w < pool_size; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  const std::size_t n_methods = plan.methods.size();
  report.methods.resize(n_methods);
  for (std::size_t m = 0; m < n_methods; ++m) {
    report.methods[m].method = plan.methods[m].resolved_label();
    report.methods[m].cells.resize(plan.n_grid.size());
  }

  const bool param_defined = [&] {
    for (const auto& cell : report.records) {
      if (cell.ok) return std::isfinite(cell.methods.front().param_se);
    }
    return false;
  }();

  for (std::size_t ni = 0; ni < plan.n_grid.size(); ++ni) {
    std::vector<std::size_t> included;  // record indices, rep order
    for (int rep = 0; rep < plan.reps; ++rep) {
      const std::size_t idx = std::size_t(rep) * plan.n_grid.size() + ni;
      if (report.records[idx].ok) included.push_back(idx);
    }

    for (std::size_t m = 0; m < n_methods; ++m) {
      CellStats& stats = report.methods[m].cells[ni];
      stats.n = plan.n_grid[ni];
      stats.included = int(included.size());
      stats.excluded = plan.reps - stats.included;
    }
    if (included.empty()) continue;

    const auto mean_of = [&](std::size_t m, const auto& pick,
                             const std::vector<std::size_t>& rows) {
      double sum = 0.0;
      for (const auto idx : rows) pick(sum, report.records[idx].methods[m]);
      return sum / double(rows.size());
    };
    const auto regret_pick = [](double& s, const MethodOutcome& o) {
      s += o.regret;
    };
    const auto param_pick = [](double& s, const MethodOutcome& o) {
      s += o.param_se;
    };

    for (std::size_t m = 0; m < n_methods; ++m) {
      CellStats& stats = report.methods[m].cells[ni];
      stats.mean_regret = mean_of(m, regret_pick, included);
      if (param_defined) stats.param_mse = mean_of(m, param_pick, included);
    }
    const double base_regret = report.methods.front().cells[ni].mean_regret;
    for (std::size_t m = 0; m < n_methods; ++m) {
      CellStats& stats = report.methods[m].cells[ni];
      stats.rmrr = base_regret != 0.0
                       ? 100.0 * (1.0 - stats.mean_regret / base_regret)
                       : nan;
    }

    // Percentile bootstrap over replications; one resample index stream per
    // n, shared across methods, so intervals of paired quantities pair up.
    RngStream boot(plan.seed,
                   "bench-bootstrap-" + std::to_string(plan.n_grid[ni]));
    std::vector<std::vector<double>> regret_b(n_methods), rmrr_b(n_methods),
        param_b(n_methods);
    std::vector<std::size_t> rows(included.size());
    for (int b = 0; b < plan.bootstrap; ++b) {
      for (auto& row : rows) {
        row = included[std::size_t(boot.uniform_int(included.size()))];
      }
      double base = 0.0;
      for (std::size_t m = 0; m < n_methods; ++m) {
        const double mr = mean_of(m, regret_pick, rows);
        regret_b[m].push_back(mr);
        if (m == 0) base = mr;
        if (base != 0.0) rmrr_b[m].push_back(100.0 * (1.0 - mr / base));
        if (param_defined) param_b[m].push_back(mean_of(m, param_pick, rows));
      }
    }
    for (std::size_t m = 0; m < n_methods; ++m) {
      CellStats& stats = report.methods[m].cells[ni];
      std::tie(stats.regret_lo, stats.regret_hi) =
          detail::percentile_interval(regret_b[m]);
      std::tie(stats.rmrr_lo, stats.rmrr_hi) =
          detail::percentile_interval(rmrr_b[m]);
      if (param_defined) {
        std::tie(stats.param_lo, stats.param_hi) =
            detail::percentile_interval(param_b[m]);
      }
    }
  }

  report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return report;
}

}  // namespace esprm
