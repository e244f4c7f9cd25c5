#pragma once

// JSON wiring: experiment plans, canonical benchmark reports, policy files,
// and value files. Schemas are versioned with a top-level schema_version and
// documented in the README. The canonical report deliberately omits wall
// clock time so reports stay byte-identical across runs and worker counts;
// runtime goes in a separate timings sidecar.

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <esprm/esprm.hpp>
#include <json.hpp>

namespace esprm {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

namespace detail {

/// Strict key check: typos in config files fail loudly instead of silently
/// falling back to defaults.
inline void check_keys(const Json& j, std::initializer_list<const char*> known,
                       const std::string& what) {
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || item.key() == k;
    if (!ok) throw Error(what + ": unknown key '" + item.key() + "'");
  }
}

inline Json num_or_null(double x) {
  return std::isfinite(x) ? Json(x) : Json(nullptr);
}

inline Json ci_or_null(double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) return Json(nullptr);
  return Json::array({lo, hi});
}

}  // namespace detail

// ---------------------------------------------------------------------------
// policy class names

inline std::string policy_class_name(const MlpSpec& spec) {
  return spec.linear() ? "linear" : "flexible";
}

/// "linear" is g(x) = slopes'x + intercept; "flexible" is one hidden layer of
/// 50 leaky ReLU units, matching the default critic width.
inline MlpSpec policy_class_from_name(std::string_view name, int input_dim = 2) {
  if (name == "linear") return MlpSpec{input_dim, {}, 0.01};
  if (name == "flexible") return MlpSpec{input_dim, {50}, 0.01};
  throw Error("unknown policy class '" + std::string(name) +
              "' (expected linear or flexible)");
}

// ---------------------------------------------------------------------------
// methods

inline Json method_to_json(const MethodSpec& m) {
  Json j;
  switch (m.kind) {
    case MethodSpec::Kind::Erm:
      j["kind"] = "erm";
      break;
    case MethodSpec::Kind::Esprm:
      j["kind"] = "esprm";
      j["epochs"] = m.esprm_epochs;
      break;
    case MethodSpec::Kind::FiniteGmm:
      j["kind"] = "gmm";
      if (m.basis == MethodSpec::GmmBasis::Polynomial) {
        j["basis"] = "polynomial";
        j["degree"] = m.degree;
      } else {
        j["basis"] = "rks";
        j["features"] = m.rks_features;
      }
      break;
  }
  if (!m.label.empty()) j["label"] = m.label;
  return j;
}

inline MethodSpec method_from_json(const Json& j) {
  detail::check_keys(j, {"kind", "label", "epochs", "basis", "degree",
                         "features"},
                     "method");
  MethodSpec m;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "erm") {
    m.kind = MethodSpec::Kind::Erm;
  } else if (kind == "esprm") {
    m.kind = MethodSpec::Kind::Esprm;
    m.esprm_epochs = j.value("epochs", 0);
  } else if (kind == "gmm") {
    m.kind = MethodSpec::Kind::FiniteGmm;
    const std::string basis = j.value("basis", "polynomial");
    if (basis == "polynomial") {
      m.basis = MethodSpec::GmmBasis::Polynomial;
    } else if (basis == "rks") {
      m.basis = MethodSpec::GmmBasis::RandomFourier;
    } else {
      throw Error("method: unknown basis '" + basis + "'");
    }
    m.degree = j.value("degree", 3);
    m.rks_features = j.value("features", 64);
  } else {
    throw Error("method: unknown kind '" + kind + "'");
  }
  m.label = j.value("label", std::string{});
  return m;
}

// ---------------------------------------------------------------------------
// experiment plan

inline Json plan_to_json(const ExperimentPlan& plan) {
  Json j;
  j["scenario"] = to_string(plan.scenario);
  j["policy"] = policy_class_name(plan.policy);
  j["methods"] = Json::array();
  for (const auto& m : plan.methods) j["methods"].push_back(method_to_json(m));
  j["n_grid"] = plan.n_grid;
  j["reps"] = plan.reps;
  j["seed"] = plan.seed;
  j["score"] = to_string(plan.score);
  j["clip"] = plan.clip;
  j["nuisances"] =
      plan.nuisances ? to_string(*plan.nuisances) : std::string("matched");
  j["oracle_mc"] = plan.oracle_mc;
  j["bootstrap"] = plan.bootstrap;
  return j;
}

inline ExperimentPlan plan_from_json(const Json& j) {
  detail::check_keys(j,
                     {"scenario", "policy", "methods", "n_grid", "reps",
                      "seed", "score", "clip", "nuisances", "oracle_mc",
                      "bootstrap"},
                     "bench config");
  ExperimentPlan plan;
  plan.scenario =
      scenario_kind_from_string(j.value("scenario", std::string("linear")));
  plan.policy = policy_class_from_name(j.value("policy", std::string("linear")));
  if (j.contains("methods")) {
    plan.methods.clear();
    for (const auto& m : j.at("methods")) {
      plan.methods.push_back(method_from_json(m));
    }
  }
  if (j.contains("n_grid")) {
    plan.n_grid.clear();
    for (const auto& n : j.at("n_grid")) {
      plan.n_grid.push_back(n.get<Eigen::Index>());
    }
  }
  plan.reps = j.value("reps", plan.reps);
  plan.seed = j.value("seed", plan.seed);
  plan.score = score_kind_from_string(j.value("score", std::string("DR")));
  plan.clip = j.value("clip", plan.clip);
  const std::string fam = j.value("nuisances", std::string("matched"));
  if (fam != "matched") plan.nuisances = nuisance_family_from_string(fam);
  plan.oracle_mc = j.value("oracle_mc", plan.oracle_mc);
  plan.bootstrap = j.value("bootstrap", plan.bootstrap);
  plan.validate();
  return plan;
}

// ---------------------------------------------------------------------------
// benchmark report

/// Canonical report: everything except wall-clock time, in deterministic key
/// order. Undefined statistics (no included reps, or parameter error without
/// a linear oracle policy) render as null.
inline Json report_to_json(const ExperimentReport& report) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "bench-report";
  j["protocol"] = plan_to_json(report.plan);
  j["results"] = Json::array();
  for (const auto& method : report.methods) {
    Json mj;
    mj["method"] = method.method;
    mj["cells"] = Json::array();
    for (const auto& c : method.cells) {
      Json cj;
      cj["n"] = c.n;
      cj["included"] = c.included;
      cj["excluded"] = c.excluded;
      cj["mean_regret"] = detail::num_or_null(c.mean_regret);
      cj["regret_ci"] = detail::ci_or_null(c.regret_lo, c.regret_hi);
      cj["rmrr"] = detail::num_or_null(c.rmrr);
      cj["rmrr_ci"] = detail::ci_or_null(c.rmrr_lo, c.rmrr_hi);
      cj["param_mse"] = detail::num_or_null(c.param_mse);
      cj["param_mse_ci"] = detail::ci_or_null(c.param_lo, c.param_hi);
      mj["cells"].push_back(std::move(cj));
    }
    j["results"].push_back(std::move(mj));
  }
  j["failures"] = Json::array();
  for (const auto& cell : report.records) {
    if (cell.ok) continue;
    Json f;
    f["rep"] = cell.rep;
    f["n"] = cell.n;
    f["error"] = cell.error;
    j["failures"].push_back(std::move(f));
  }
  return j;
}

/// Per-replication table for the successful cells, one row per
/// (rep, n, method).
inline std::string records_to_csv(const ExperimentReport& report) {
  std::ostringstream out;
  out << "rep,n,method,regret,regret_se,param_se\n";
  for (const auto& cell : report.records) {
    if (!cell.ok) continue;
    for (std::size_t m = 0; m < cell.methods.size(); ++m) {
      const MethodOutcome& o = cell.methods[m];
      out << cell.rep << "," << cell.n << ","
          << report.plan.methods[m].resolved_label() << ","
          << detail::format_double(o.regret) << "," << detail::format_double(o.regret_se)
          << "," << detail::format_double(o.param_se) << "\n";
    }
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// policy and value files

inline Json policy_to_json(const PolicyModel& model,
                           const std::string& method_label) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "policy";
  j["policy"] = policy_class_name(model.spec);
  j["input_dim"] = model.spec.input_dim;
  j["hidden"] = model.spec.hidden;
  j["leaky_slope"] = model.spec.leaky_slope;
  j["method"] = method_label;
  j["theta"] = std::vector<double>(model.theta.data(),
                                   model.theta.data() + model.theta.size());
  return j;
}

inline PolicyModel policy_from_json(const Json& j) {
  detail::check_keys(j,
                     {"schema_version", "kind", "policy", "input_dim",
                      "hidden", "leaky_slope", "method", "theta"},
                     "policy file");
  if (j.value("kind", std::string{}) != "policy") {
    throw Error("policy file: expected kind 'policy'");
  }
  PolicyModel model;
  model.spec.input_dim = j.at("input_dim").get<int>();
  model.spec.hidden = j.value("hidden", std::vector<int>{});
  model.spec.leaky_slope = j.value("leaky_slope", 0.01);
  const auto theta = j.at("theta").get<std::vector<double>>();
  require(Eigen::Index(theta.size()) == model.spec.param_count(),
          "policy file: theta has " + std::to_string(theta.size()) +
              " entries, the architecture needs " +
              std::to_string(model.spec.param_count()));
  model.theta = Eigen::Map<const Vector>(theta.data(),
                                         Eigen::Index(theta.size()));
  return model;
}

// ---------------------------------------------------------------------------
// file helpers

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const std::exception& e) {
    throw Error("'" + path + "': " + e.what());
  }
}

inline void write_text_file(const std::string& path,
                            const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << content;
}

inline void write_json_file(const std::string& path, const Json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace esprm
