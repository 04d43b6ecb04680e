#include <catch2/catch_amalgamated.hpp>

#include "stratrlhf/strategic.hpp"

#include <cmath>
#include <vector>

using namespace stratrlhf;
using Catch::Approx;

namespace {

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

/// Instance with real query geometry but pinned true parameters.
ProblemInstance pinned_instance(int d, int k, int n, double B, std::uint64_t seed,
                                std::vector<Vec> params) {
  InstanceConfig config;
  config.d = d;
  config.k = k;
  config.n = n;
  config.B = B;
  config.seed = seed;
  ProblemInstance instance = sample_instance(config);
  instance.true_params = std::move(params);
  return instance;
}

/// The two-action counterexample: labeler 0 prefers the first coordinate,
/// labeler 1 the second; action a is balanced, action b favors labeler 0.
ProblemInstance counterexample_instance() {
  return pinned_instance(2, 2, 4, std::sqrt(2.0), 17, {vec2(1.0, 0.0), vec2(0.0, 1.0)});
}

std::vector<Vec> counterexample_actions() { return {vec2(0.5, 0.5), vec2(0.75, 0.0)}; }

}  // namespace

// ----------------------------------------------------------------------------
// Report evaluation
// ----------------------------------------------------------------------------

TEST_CASE("evaluation modes round-trip through their names", "[strategic]") {
  for (EvalMode mode : {EvalMode::monte_carlo, EvalMode::enumerate_labels,
                        EvalMode::direct_params}) {
    REQUIRE(eval_mode_from_string(to_string(mode)) == mode);
  }
  REQUIRE_THROWS_AS(eval_mode_from_string("closed_form"), ConfigError);
}

TEST_CASE("direct evaluation reproduces the two-action utilities", "[strategic]") {
  const ProblemInstance instance = counterexample_instance();
  StrategicEvalConfig cfg;
  cfg.mode = EvalMode::direct_params;
  cfg.action_feats = counterexample_actions();

  ReportEvaluator evaluator(Algorithm::pessimistic_sw, instance, 0, cfg);
  REQUIRE(evaluator.radius() == 0.0);
  REQUIRE(evaluator.utility(vec2(1.0, 0.0)) == Approx(0.5));
  REQUIRE(evaluator.utility(vec2(1.0, -1.0)) == Approx(0.75));

  const WelfareReport welfare = evaluator.welfare(vec2(1.0, -1.0));
  REQUIRE(welfare.per_labeler[0] == Approx(0.75));
  REQUIRE(welfare.per_labeler[1] == Approx(0.0));
  REQUIRE(welfare.W == Approx(welfare.per_labeler.mean()).margin(1e-12));

  REQUIRE(evaluate_report(Algorithm::pessimistic_sw, instance, 0, vec2(1.0, -1.0), cfg) ==
          Approx(0.75));
  REQUIRE_THROWS_AS(evaluator.utility(Vec::Zero(3)), InputError);
}

TEST_CASE("enumerated expectations match a public reimplementation", "[strategic]") {
  const ProblemInstance instance =
      pinned_instance(1, 1, 6, 1.0, 23, {Vec::Constant(1, 0.8)});
  StrategicEvalConfig cfg;
  cfg.mode = EvalMode::enumerate_labels;
  cfg.c_f = 0.0;  // radius zero: the mechanism sees the point fits
  ReportEvaluator evaluator(Algorithm::naive_mle, instance, 0, cfg);

  const Vec report = Vec::Constant(1, 0.45);
  const double got = evaluator.utility(report);

  double expected = 0.0;
  const QuerySet& queries = instance.query_sets[0];
  for (int mask = 0; mask < (1 << 6); ++mask) {
    std::vector<int> labels(6);
    double prob = 1.0;
    for (int j = 0; j < 6; ++j) {
      labels[j] = (mask >> j) & 1;
      const double p0 = bt_preference_prob(report, queries.queries[j]);
      prob *= labels[j] == 0 ? p0 : 1.0 - p0;
    }
    const LabelerDataset data(queries, labels, report);
    const MleFit fit = fit_mle(data, MleOptions{});
    expected += prob * 0.8 * sign(fit.theta_hat[0]);
  }
  REQUIRE(got == Approx(expected).margin(1e-9));
}

TEST_CASE("Monte-Carlo evaluation converges to the enumerated value", "[strategic]") {
  const ProblemInstance instance =
      pinned_instance(1, 1, 8, 1.0, 29, {Vec::Constant(1, 0.8)});
  const Vec report = Vec::Constant(1, 0.3);

  StrategicEvalConfig exact_cfg;
  exact_cfg.mode = EvalMode::enumerate_labels;
  exact_cfg.c_f = 0.0;
  ReportEvaluator exact(Algorithm::naive_mle, instance, 0, exact_cfg);

  StrategicEvalConfig mc_cfg;
  mc_cfg.mode = EvalMode::monte_carlo;
  mc_cfg.c_f = 0.0;
  mc_cfg.replications = 4000;
  mc_cfg.seed = 5;
  ReportEvaluator sampled(Algorithm::naive_mle, instance, 0, mc_cfg);

  REQUIRE(sampled.utility(report) == Approx(exact.utility(report)).margin(0.05));
}

TEST_CASE("replication averaging shrinks the evaluation noise", "[strategic]") {
  const ProblemInstance instance =
      pinned_instance(2, 2, 12, 1.0, 31, {vec2(0.6, -0.3), vec2(0.2, 0.5)});
  const auto utilities_for = [&](int reps) {
    std::vector<double> values;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      StrategicEvalConfig cfg;
      cfg.replications = reps;
      cfg.seed = seed;
      ReportEvaluator evaluator(Algorithm::naive_mle, instance, 0, cfg);
      values.push_back(evaluator.utility(instance.true_params[0]));
    }
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    return std::sqrt(var / static_cast<double>(values.size() - 1));
  };
  const double sd_small = utilities_for(2);
  const double sd_large = utilities_for(8);
  REQUIRE(sd_small > 0.0);
  REQUIRE(sd_large <= 0.8 * sd_small);
}

TEST_CASE("evaluators are deterministic and reusable across mechanisms", "[strategic]") {
  const ProblemInstance instance =
      pinned_instance(2, 3, 10, 1.0, 37, {vec2(0.7, 0.2), vec2(0.4, -0.5), vec2(-0.1, 0.6)});
  StrategicEvalConfig cfg;
  cfg.replications = 4;
  cfg.seed = 11;

  ReportEvaluator first(Algorithm::naive_mle, instance, 0, cfg);
  ReportEvaluator second(Algorithm::naive_mle, instance, 0, cfg);
  const Vec report = vec2(0.3, 0.3);
  const double u = first.utility(report);
  REQUIRE(u == second.utility(report));
  REQUIRE(first.utility(report) == u);  // cached label fits are stable

  // Retargeting reuses the cached datasets: it must agree exactly with a
  // fresh evaluator built for the new mechanism.
  first.set_algorithm(Algorithm::pessimistic_momle);
  ReportEvaluator fresh(Algorithm::pessimistic_momle, instance, 0, cfg);
  REQUIRE(first.utility(report) == fresh.utility(report));

  REQUIRE_THROWS_AS(ReportEvaluator(Algorithm::naive_mle, instance, 5, cfg), InputError);
}

TEST_CASE("label enumeration refuses oversized datasets", "[strategic]") {
  const ProblemInstance instance =
      pinned_instance(1, 1, 13, 1.0, 41, {Vec::Constant(1, 0.5)});
  StrategicEvalConfig cfg;
  cfg.mode = EvalMode::enumerate_labels;
  REQUIRE_THROWS_AS(ReportEvaluator(Algorithm::naive_mle, instance, 0, cfg), InputError);
}

// ----------------------------------------------------------------------------
// Dominance structure on 1-D instances
// ----------------------------------------------------------------------------

TEST_CASE("sign-flipping reports never beat truthful reporting", "[strategic]") {
  const ProblemInstance instance = pinned_instance(
      1, 3, 8, 1.0, 43,
      {Vec::Constant(1, 0.8), Vec::Constant(1, 0.9), Vec::Constant(1, -0.7)});
  StrategicEvalConfig cfg;
  cfg.mode = EvalMode::enumerate_labels;
  cfg.c_f = 0.0;
  ReportEvaluator evaluator(Algorithm::pessimistic_momle, instance, 0, cfg);

  const double truthful = evaluator.utility(instance.true_params[0]);
  for (int g = 1; g <= 8; ++g) {
    const Vec report = Vec::Constant(1, -0.125 * g);  // opposite sign to 0.8
    REQUIRE(evaluator.utility(report) <= truthful + 1e-12);
  }
}

TEST_CASE("exaggerating a same-sign report never hurts", "[strategic]") {
  const ProblemInstance instance = pinned_instance(
      1, 3, 8, 1.0, 47,
      {Vec::Constant(1, 0.6), Vec::Constant(1, 0.9), Vec::Constant(1, -0.7)});
  StrategicEvalConfig cfg;
  cfg.mode = EvalMode::enumerate_labels;
  cfg.c_f = 0.0;
  ReportEvaluator evaluator(Algorithm::pessimistic_momle, instance, 0, cfg);

  double previous = -std::numeric_limits<double>::infinity();
  for (int g = 1; g <= 8; ++g) {
    const double current = evaluator.utility(Vec::Constant(1, 0.125 * g));
    REQUIRE(current >= previous - 1e-12);
    previous = current;
  }
}

// ----------------------------------------------------------------------------
// Attack search
// ----------------------------------------------------------------------------

TEST_CASE("the attack recovers the two-action manipulation gain", "[strategic]") {
  const ProblemInstance instance = counterexample_instance();
  AttackConfig cfg;
  cfg.eval.mode = EvalMode::direct_params;
  cfg.eval.action_feats = counterexample_actions();
  // The averaged score flips to the second action only once the report
  // clears t1 - 2*t2 > 2, one (1,-1)-direction probe radius away from the
  // truthful (1,0); the default probe scale is too small to reach it.
  cfg.c0 = 0.75;

  const AttackResult result = spsa_attack(Algorithm::pessimistic_sw, instance, 0, cfg);
  REQUIRE(result.truthful_utility == Approx(0.5));
  REQUIRE(result.best_utility == Approx(0.75));
  REQUIRE(result.gain == Approx(0.25));
  // The discovered report must actually sit in the flipped-action region.
  REQUIRE(result.best_report[0] - 2.0 * result.best_report[1] > 2.0);
}

TEST_CASE("the median mechanism concedes no two-action gain", "[strategic]") {
  const ProblemInstance instance = counterexample_instance();
  AttackConfig cfg;
  cfg.eval.mode = EvalMode::direct_params;  // hyperrectangle policy domain
  cfg.c0 = 0.75;

  const AttackResult result = spsa_attack(Algorithm::pessimistic_momle, instance, 0, cfg);
  REQUIRE(result.truthful_utility == 0.0);
  REQUIRE(result.best_utility == 0.0);
  REQUIRE(result.gain == 0.0);
}

TEST_CASE("a dominant-coordinate instance offers no naive gain", "[strategic]") {
  const ProblemInstance instance =
      pinned_instance(2, 2, 6, 1.0, 53, {vec2(0.9, 0.1), vec2(0.8, -0.05)});
  AttackConfig cfg;
  cfg.eval.mode = EvalMode::direct_params;
  cfg.steps = 40;

  const AttackResult result = spsa_attack(Algorithm::naive_mle, instance, 0, cfg);
  // The truthful sign pattern already maximizes this labeler's utility, and
  // no report can move the average's signs to anything better.
  REQUIRE(result.truthful_utility == Approx(1.0));
  REQUIRE(result.gain == 0.0);
}

TEST_CASE("attack bookkeeping is sound", "[strategic]") {
  const ProblemInstance instance =
      pinned_instance(2, 2, 10, 1.0, 59, {vec2(0.5, -0.4), vec2(-0.2, 0.6)});
  AttackConfig cfg;
  cfg.steps = 25;
  cfg.eval.replications = 3;
  cfg.eval.seed = 7;

  ReportEvaluator evaluator(Algorithm::naive_mle, instance, 0, cfg.eval);
  const AttackResult result = spsa_attack(evaluator, cfg);

  REQUIRE(result.gain >= 0.0);
  REQUIRE(result.trajectory.size() == 26);
  REQUIRE(result.report_norms.size() == 26);
  for (std::size_t i = 1; i < result.trajectory.size(); ++i) {
    REQUIRE(result.trajectory[i] >= result.trajectory[i - 1]);
  }
  REQUIRE(result.trajectory.back() == result.best_utility);
  for (double norm : result.report_norms) {
    REQUIRE(norm <= instance.config.B + 1e-12);
  }
  REQUIRE(result.best_report.norm() <= instance.config.B + 1e-12);
  REQUIRE(evaluator.utility(result.best_report) == result.best_utility);

  AttackConfig bad;
  bad.steps = -1;
  REQUIRE_THROWS_AS(spsa_attack(evaluator, bad), ConfigError);
}

TEST_CASE("attacked welfare is measured at the discovered report", "[strategic]") {
  const ProblemInstance instance = counterexample_instance();
  AttackConfig cfg;
  cfg.eval.mode = EvalMode::direct_params;
  cfg.eval.action_feats = counterexample_actions();
  cfg.c0 = 0.75;

  const AttackResult attack = spsa_attack(Algorithm::pessimistic_sw, instance, 0, cfg);
  const WelfareReport welfare =
      attacked_welfare(Algorithm::pessimistic_sw, instance, 0, attack, cfg.eval);
  REQUIRE(welfare.per_labeler[0] == Approx(attack.best_utility).margin(1e-12));
  REQUIRE(welfare.W == Approx((0.75 + 0.0) / 2.0));
  REQUIRE(welfare.W_star == Approx(optimal_welfare(instance.true_params)));
}
