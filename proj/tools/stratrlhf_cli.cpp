// ============================================================================
// Command-line harness. Subcommands:
//   run       — execute a benchmark grid from a JSON configuration file and
//               write results.csv / welfare.csv / summary.json to --out
//   verify    — run the exact two-action counterexample checks
//   conc      — run the estimator / median concentration suites
//   mdp-demo  — run the small-MDP identical-labeler experiment
// Exit codes: 0 all checks passed, 1 a check or cell failed, 2 bad config.
// ============================================================================

#include "stratrlhf/bench.hpp"
#include "stratrlhf/serialize.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

namespace {

using namespace stratrlhf;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open configuration file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write output file: " + path.string());
  out << content;
}

int cmd_run(const std::string& config_path, const std::string& out_dir, double cf_override,
            int threads_override, bool tsv, bool exact, const std::string& trace_path) {
  ExperimentConfig cfg = experiment_config_from_string(read_file(config_path));
  if (cf_override > 0.0) cfg.c_f = cf_override;
  if (threads_override > 0) cfg.threads = threads_override;
  if (exact) cfg.attack.eval.mode = EvalMode::enumerate_labels;

  const ExperimentResult result = run_experiment(cfg);

  std::filesystem::create_directories(out_dir);
  const char sep = tsv ? '\t' : ',';
  const std::string ext = tsv ? ".tsv" : ".csv";
  {
    std::ostringstream os;
    write_results_csv(result, os, sep);
    write_file(std::filesystem::path(out_dir) / ("results" + ext), os.str());
  }
  {
    std::ostringstream os;
    write_welfare_csv(result, os, sep);
    write_file(std::filesystem::path(out_dir) / ("welfare" + ext), os.str());
  }
  write_file(std::filesystem::path(out_dir) / "summary.json", summary_json(result).dump(2) + "\n");

  if (!trace_path.empty() && cfg.run_strategic()) {
    // Diagnostic: one attack trajectory for the largest n, first seed/labeler.
    InstanceConfig icfg = cfg.instance;
    icfg.n = cfg.n_grid.back();
    icfg.seed = derive_seed(cfg.instance.seed, {static_cast<std::uint64_t>(icfg.n), 0ULL});
    const ProblemInstance instance = sample_instance(icfg);
    StrategicEvalConfig ecfg = cfg.attack.eval;
    ecfg.delta = cfg.delta;
    ecfg.c_f = cfg.c_f;
    ecfg.seed = derive_seed(cfg.instance.seed, {0xe7a1ULL, static_cast<std::uint64_t>(icfg.n),
                                                0ULL, 0ULL});
    ReportEvaluator evaluator(cfg.algorithms.front(), instance, 0, ecfg);
    AttackConfig acfg = cfg.attack;
    acfg.seed = derive_seed(cfg.attack.seed, {static_cast<std::uint64_t>(icfg.n), 0ULL});
    const AttackResult attack = spsa_attack(evaluator, acfg);
    std::ostringstream os;
    os << "step,utility,report_norm\n";
    for (std::size_t t = 0; t < attack.trajectory.size(); ++t) {
      os << t << ',' << detail::format_double(attack.trajectory[t]) << ','
         << detail::format_double(attack.report_norms[t]) << '\n';
    }
    write_file(trace_path, os.str());
  }

  int failed = 0;
  for (const ResultRow& row : result.rows) {
    if (!row.error.empty()) ++failed;
  }
  std::cout << "wrote " << result.rows.size() << " rows to " << out_dir << " ("
            << detail::format_double(result.total_runtime_ms / 1000.0) << " s";
  if (failed > 0) std::cout << ", " << failed << " FAILED cells";
  std::cout << ")\n";
  return failed == 0 ? 0 : 1;
}

int cmd_verify() {
  const CounterexampleReport report = verify_counterexamples();
  for (const CounterexampleCheck& check : report.checks) {
    std::cout << (check.passed ? "PASS" : "FAIL") << "  " << check.name << ": " << check.detail
              << "\n";
  }
  return report.all_passed() ? 0 : 1;
}

int cmd_conc(std::uint64_t seed) {
  ConcentrationConfig cfg;
  cfg.seed = seed;
  const ConcentrationReport report = concentration_suite(cfg);
  for (const SlopeCheck& check : report.slopes) {
    std::cout << (check.passed ? "PASS" : "FAIL") << "  " << check.name << ": slope "
              << detail::format_double(check.slope) << " (want ["
              << detail::format_double(check.lo) << ", " << detail::format_double(check.hi)
              << "])\n";
  }
  std::cout << (report.coverage_passed ? "PASS" : "FAIL")
            << "  radius_coverage: min coverage " << detail::format_double(report.min_coverage)
            << " across n in {";
  for (std::size_t i = 0; i < report.coverage_by_n.size(); ++i) {
    std::cout << (i ? ", " : "") << report.coverage_by_n[i].first;
  }
  std::cout << "}\n";
  return report.all_passed() ? 0 : 1;
}

int cmd_mdp_demo(std::uint64_t seed, double cf) {
  const MdpDemoReport report = mdp_demo(seed, {100, 400, 1600}, cf);
  std::cout << "optimal welfare " << detail::format_double(report.W_star) << " at occupancy [";
  for (Eigen::Index j = 0; j < report.feat_star.size(); ++j) {
    std::cout << (j ? ", " : "") << detail::format_double(report.feat_star[j]);
  }
  std::cout << "]\n";
  std::cout << "n,radius,value,enum_value,grad_value,welfare,subopt\n";
  for (const MdpDemoStage& stage : report.stages) {
    std::cout << stage.n << ',' << detail::format_double(stage.radius) << ','
              << detail::format_double(stage.pessimistic_value) << ','
              << detail::format_double(stage.enumeration_value) << ','
              << detail::format_double(stage.gradient_value) << ','
              << detail::format_double(stage.welfare) << ','
              << detail::format_double(stage.subopt) << '\n';
  }
  std::cout << (report.monotone ? "PASS" : "FAIL") << "  subopt strictly decreasing\n";
  std::cout << (report.final_small ? "PASS" : "FAIL")
            << "  final subopt <= 0.1 * optimal welfare\n";
  std::cout << (report.paths_agree ? "PASS" : "FAIL")
            << "  enumeration and gradient paths agree within 1e-4\n";
  return report.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"strategyproof preference-aggregation laboratory"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".", trace_path;
  double cf_override = -1.0;
  int threads_override = 0;
  bool tsv = false, exact = false;
  CLI::App* run = app.add_subcommand("run", "run a benchmark grid from a JSON config");
  run->add_option("--config", config_path, "experiment configuration file")->required();
  run->add_option("--out", out_dir, "output directory (results, welfare, summary)");
  run->add_option("--cf", cf_override, "override the confidence radius scale");
  run->add_option("--threads", threads_override, "worker thread cap");
  run->add_flag("--tsv", tsv, "emit tab-separated tables");
  run->add_flag("--exact", exact, "use exact label-enumeration utility evaluation");
  run->add_option("--trace", trace_path, "write one attack trajectory CSV here");

  CLI::App* verify = app.add_subcommand("verify", "exact counterexample checks");

  std::uint64_t conc_seed = 0;
  CLI::App* conc = app.add_subcommand("conc", "concentration suites");
  conc->add_option("--seed", conc_seed, "master seed");

  std::uint64_t demo_seed = 7;
  double demo_cf = 0.35;
  CLI::App* demo = app.add_subcommand("mdp-demo", "small-MDP identical-labeler experiment");
  demo->add_option("--seed", demo_seed, "master seed");
  demo->add_option("--cf", demo_cf, "confidence radius scale");

  try {
    app.parse(argc, argv);
    if (run->parsed()) {
      return cmd_run(config_path, out_dir, cf_override, threads_override, tsv, exact, trace_path);
    }
    if (verify->parsed()) return cmd_verify();
    if (conc->parsed()) return cmd_conc(conc_seed);
    if (demo->parsed()) return cmd_mdp_demo(demo_seed, demo_cf);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  } catch (const stratrlhf::ConfigError& err) {
    std::cerr << "configuration error: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 2;
}
