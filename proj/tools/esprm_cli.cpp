// Command line for the library: synthetic data simulation, single-method
// fits, policy evaluation, and the full benchmark protocol. Every subcommand
// reads an optional JSON config (schemas in the README), writes its outputs
// under --out, and is deterministic in (config, seed).

#include <CLI11.hpp>

#include <esprm/config.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using esprm::Json;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  bool seed_given = false;
};

Json load_config(const CommonArgs& args) {
  if (args.config_path.empty()) return Json::object();
  return esprm::read_json_file(args.config_path);
}

std::uint64_t resolve_seed(const CommonArgs& args, const Json& cfg) {
  if (args.seed_given) return args.seed;
  return cfg.value("seed", std::uint64_t{0});
}

std::string out_path(const CommonArgs& args, const std::string& name) {
  fs::create_directories(args.out_dir);
  return (fs::path(args.out_dir) / name).string();
}

// Scenario identity is (kind, scenario_seed): sampling is deterministic, so
// the pair reproduces the exact coefficient draw anywhere.
esprm::ScenarioSpec scenario_from_config(const Json& cfg) {
  const auto kind = esprm::scenario_kind_from_string(
      cfg.value("scenario", std::string("linear")));
  return esprm::sample_scenario(kind, cfg.value("scenario_seed",
                                                std::uint64_t{0}));
}

Json scenario_echo(const esprm::ScenarioSpec& spec, std::uint64_t seed) {
  Json j;
  j["schema_version"] = esprm::kSchemaVersion;
  j["kind"] = "scenario";
  j["scenario"] = esprm::to_string(spec.kind);
  j["scenario_seed"] = seed;
  const auto vec = [](const esprm::Vector& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };
  j["a_pos"] = vec(spec.a_pos);
  j["a0_pos"] = spec.a0_pos;
  j["a_neg"] = vec(spec.a_neg);
  j["a0_neg"] = spec.a0_neg;
  j["b"] = vec(spec.b);
  j["b0"] = spec.b0;
  if (spec.kind == esprm::ScenarioKind::Quadratic) {
    const auto mat = [](const esprm::Matrix& m) {
      std::vector<std::vector<double>> rows;
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        rows.emplace_back(m.row(i).data(), m.row(i).data() + m.cols());
      }
      return rows;
    };
    j["A_pos"] = mat(spec.A_pos);
    j["A_neg"] = mat(spec.A_neg);
    j["B"] = mat(spec.B);
  }
  return j;
}

int run_simulate(const CommonArgs& args) {
  const Json cfg = load_config(args);
  esprm::detail::check_keys(cfg, {"scenario", "scenario_seed", "n", "seed"},
                            "simulate config");
  const auto scenario_seed = cfg.value("scenario_seed", std::uint64_t{0});
  const esprm::ScenarioSpec spec = scenario_from_config(cfg);
  const auto n = cfg.value("n", Eigen::Index{1000});
  const auto data = esprm::generate_data(spec, n, resolve_seed(args, cfg));

  const std::string csv = out_path(args, "data.csv");
  esprm::write_dataset(csv, data);
  esprm::write_json_file(out_path(args, "scenario.json"),
                         scenario_echo(spec, scenario_seed));
  std::printf("simulate: %lld rows of %s scenario -> %s\n",
              static_cast<long long>(n), esprm::to_string(spec.kind).c_str(),
              csv.c_str());
  return 0;
}

bool csv_has_psi_column(const std::string& path) {
  const auto lines = esprm::detail::read_lines(path);
  if (lines.empty()) return false;
  for (const auto cell : esprm::detail::split_csv_line(lines[0])) {
    if (cell == "psi") return true;
  }
  return false;
}

int run_fit(const CommonArgs& args) {
  const Json cfg = load_config(args);
  esprm::detail::check_keys(cfg,
                            {"data", "policy", "method", "score", "clip",
                             "nuisances", "tuning_fraction", "seed"},
                            "fit config");
  if (!cfg.contains("data")) throw esprm::Error("fit config: 'data' required");
  const std::string data_path = cfg.at("data").get<std::string>();
  const esprm::MethodSpec method =
      cfg.contains("method") ? esprm::method_from_json(cfg.at("method"))
                             : esprm::MethodSpec{};
  const std::uint64_t seed = resolve_seed(args, cfg);

  esprm::ScoredDataset scored;
  if (csv_has_psi_column(data_path)) {
    scored = esprm::load_scored(data_path);
  } else {
    // Raw observational rows: the tail fraction is the tuning split for the
    // nuisance fits, scores are computed on the remaining head.
    const auto data = esprm::load_dataset(data_path);
    const double frac = cfg.value("tuning_fraction", 0.5);
    esprm::require(frac > 0.0 && frac < 1.0,
                   "fit config: tuning_fraction must be in (0,1)");
    const auto n_tune =
        std::max<Eigen::Index>(1, Eigen::Index(std::ceil(frac * data.n())));
    esprm::require(n_tune < data.n(),
                   "fit config: tuning split leaves no training rows");
    std::vector<Eigen::Index> train_rows(static_cast<std::size_t>(data.n() - n_tune));
    std::vector<Eigen::Index> tune_rows(static_cast<std::size_t>(n_tune));
    std::iota(train_rows.begin(), train_rows.end(), Eigen::Index{0});
    std::iota(tune_rows.begin(), tune_rows.end(), data.n() - n_tune);
    const auto family = esprm::nuisance_family_from_string(
        cfg.value("nuisances", std::string("linear-logistic")));
    const auto nuis = esprm::fit_nuisances(data, tune_rows, family);
    const esprm::ScoreConfig score{
        esprm::score_kind_from_string(cfg.value("score", std::string("DR"))),
        cfg.value("clip", 0.01)};
    scored = esprm::compute_scores(esprm::subset(data, train_rows), nuis, score);
  }

  const esprm::MlpSpec policy = esprm::policy_class_from_name(
      cfg.value("policy", std::string("linear")), int(scored.X.cols()));

  esprm::PolicyModel model;
  if (method.kind == esprm::MethodSpec::Kind::Esprm) {
    // Fit through the game directly so the epoch log can be captured.
    esprm::EsprmConfig game;
    game.policy = policy;
    game.critic = esprm::default_critic_spec(scored.X.cols());
    game.epochs = method.esprm_epochs;
    game.seed = seed;
    std::string log = "epoch,objective,policy_grad_norm,critic_grad_norm\n";
    const auto fit = esprm::esprm_fit(
        scored, game, nullptr, [&](const esprm::EsprmEpochLog& row) {
          log += std::to_string(row.epoch) + "," +
                 esprm::detail::format_double(row.objective) + "," +
                 esprm::detail::format_double(row.policy_grad_norm) + "," +
                 esprm::detail::format_double(row.critic_grad_norm) + "\n";
        });
    model = fit.model;
    esprm::write_text_file(out_path(args, "train_log.csv"), log);
  } else {
    model = esprm::fit_method(method, scored, policy, seed);
  }

  const std::string path = out_path(args, "policy.json");
  esprm::write_json_file(path,
                         esprm::policy_to_json(model, method.resolved_label()));
  std::printf("fit: %s on %lld scored rows -> %s\n",
              method.resolved_label().c_str(),
              static_cast<long long>(scored.n()), path.c_str());
  return 0;
}

int run_eval(const CommonArgs& args) {
  const Json cfg = load_config(args);
  esprm::detail::check_keys(cfg,
                            {"policy", "mode", "scenario", "scenario_seed",
                             "mc", "data", "seed"},
                            "eval config");
  if (!cfg.contains("policy")) {
    throw esprm::Error("eval config: 'policy' required");
  }
  const auto model = esprm::policy_from_json(
      esprm::read_json_file(cfg.at("policy").get<std::string>()));
  const std::string mode = cfg.value("mode", std::string("oracle"));

  Json out;
  out["schema_version"] = esprm::kSchemaVersion;
  out["kind"] = "value";
  out["mode"] = mode;
  if (mode == "oracle") {
    const esprm::ScenarioSpec spec = scenario_from_config(cfg);
    const auto mc = cfg.value("mc", Eigen::Index{1000000});
    const auto draws =
        esprm::make_oracle_draws(spec, mc, resolve_seed(args, cfg));
    const auto value = esprm::oracle_policy_value(draws, model);
    out["value"] = value.value;
    out["se"] = value.se;
    out["j_star"] = draws.j_star;
    out["j_star_se"] = draws.j_star_se;
    out["regret"] = draws.j_star - value.value;
    out["mc"] = mc;
  } else if (mode == "holdout") {
    // In-sample estimate E[sign(g(X)) psi] on a scored CSV.
    if (!cfg.contains("data")) {
      throw esprm::Error("eval config: holdout mode needs 'data'");
    }
    const auto scored = esprm::load_scored(cfg.at("data").get<std::string>());
    const esprm::Vector g = model.evaluate_batch(scored.X);
    esprm::Vector contrib(scored.n());
    for (Eigen::Index i = 0; i < scored.n(); ++i) {
      contrib(i) = (g(i) >= 0.0 ? 1.0 : -1.0) * scored.psi(i);
    }
    const double mean = contrib.mean();
    out["value"] = mean;
    out["se"] = std::sqrt((contrib.array() - mean).square().sum() /
                          double(scored.n() - 1) / double(scored.n()));
    out["rows"] = scored.n();
  } else {
    throw esprm::Error("eval config: mode must be oracle or holdout");
  }

  const std::string path = out_path(args, "value.json");
  esprm::write_json_file(path, out);
  std::printf("eval: %s value %.6f -> %s\n", mode.c_str(),
              out.at("value").get<double>(), path.c_str());
  return 0;
}

int run_bench(const CommonArgs& args, int workers) {
  const Json cfg = load_config(args);
  esprm::ExperimentPlan plan =
      cfg.empty() ? esprm::ExperimentPlan{} : esprm::plan_from_json(cfg);
  if (args.seed_given) plan.seed = args.seed;

  const auto report = esprm::run_experiment(plan, workers);

  esprm::write_json_file(out_path(args, "report.json"),
                         esprm::report_to_json(report));
  esprm::write_text_file(out_path(args, "reps.csv"),
                         esprm::records_to_csv(report));
  Json timings;
  timings["schema_version"] = esprm::kSchemaVersion;
  timings["kind"] = "timings";
  timings["runtime_seconds"] = report.runtime_seconds;
  timings["workers"] = workers;
  esprm::write_json_file(out_path(args, "timings.json"), timings);

  for (const auto& method : report.methods) {
    for (const auto& c : method.cells) {
      std::printf(
          "bench: %-12s n=%-6lld regret %.5f  rmrr %+6.2f [%+.2f, %+.2f]  "
          "included %d/%d\n",
          method.method.c_str(), static_cast<long long>(c.n), c.mean_regret,
          c.rmrr, c.rmrr_lo, c.rmrr_hi, c.included,
          c.included + c.excluded);
    }
  }
  std::printf("bench: report.json reps.csv timings.json -> %s (%.1fs)\n",
              args.out_dir.c_str(), report.runtime_seconds);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Policy learning from observational data: scenario simulation, "
      "surrogate/adversarial fits, oracle evaluation, benchmark protocol"};
  app.require_subcommand(1);

  CommonArgs args;
  int workers = 1;

  const auto add_common = [&](CLI::App* cmd, bool with_workers) {
    cmd->add_option("--config", args.config_path,
                    "JSON config file (schema in README)");
    cmd->add_option("--out", args.out_dir, "output directory")
        ->capture_default_str();
    cmd->add_option("--seed", args.seed, "master seed, overrides the config")
        ->each([&](const std::string&) { args.seed_given = true; });
    if (with_workers) {
      cmd->add_option("--workers", workers, "worker threads for replications")
          ->capture_default_str()
          ->check(CLI::PositiveNumber);
    }
  };

  auto* simulate =
      app.add_subcommand("simulate", "sample a scenario and emit dataset CSV");
  auto* fit = app.add_subcommand("fit", "fit one method on one dataset");
  auto* eval = app.add_subcommand("eval", "evaluate a fitted policy file");
  auto* bench = app.add_subcommand("bench", "run the full experiment protocol");
  add_common(simulate, false);
  add_common(fit, false);
  add_common(eval, false);
  add_common(bench, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(simulate)) return run_simulate(args);
    if (app.got_subcommand(fit)) return run_fit(args);
    if (app.got_subcommand(eval)) return run_eval(args);
    if (app.got_subcommand(bench)) return run_bench(args, workers);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "esprm: %s\n", e.what());
    return 1;
  }
  return 1;
}
