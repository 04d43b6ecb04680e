#pragma once

// ============================================================================
// Strategic labeler evaluation and attack search. A labeler's report is a
// preference parameter; their labels are sampled from the reported model
// while their realized utility is measured under their true parameter. The
// evaluator supports three modes: Monte Carlo with common random numbers
// (the same label-threshold uniforms are reused for every candidate report
// so utilities are comparable), exact expectation by enumerating the
// labeler's own label vectors (small n), and a sampling-free population mode
// that feeds reported parameters straight into the mechanism with zero
// confidence radius. Attack search is simultaneous-perturbation stochastic
// approximation over the report ball, tracking the best report ever probed.
// ============================================================================

#include "stratrlhf/aggregation.hpp"
#include "stratrlhf/core.hpp"
#include "stratrlhf/env.hpp"
#include "stratrlhf/estimation.hpp"
#include "stratrlhf/policy.hpp"
#include "stratrlhf/preference.hpp"
#include "stratrlhf/rng.hpp"

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace stratrlhf {

enum class EvalMode { monte_carlo, enumerate_labels, direct_params };

inline std::string to_string(EvalMode mode) {
  switch (mode) {
    case EvalMode::monte_carlo: return "monte_carlo";
    case EvalMode::enumerate_labels: return "enumerate_labels";
    case EvalMode::direct_params: return "direct_params";
  }
  return "unknown";
}

inline EvalMode eval_mode_from_string(const std::string& name) {
  if (name == "monte_carlo") return EvalMode::monte_carlo;
  if (name == "enumerate_labels") return EvalMode::enumerate_labels;
  if (name == "direct_params") return EvalMode::direct_params;
  throw ConfigError("unknown evaluation mode: " + name);
}

/// Shared mechanism and evaluation settings for strategic experiments.
struct StrategicEvalConfig {
  EvalMode mode = EvalMode::monte_carlo;
  int replications = 8;       ///< Monte Carlo replications
  std::uint64_t seed = 0;     ///< stream for labels and replications
  double delta = 0.1;         ///< mechanism confidence level
  double c_f = 0.5;           ///< confidence radius scale
  double reg = -1.0;          ///< MLE ridge, -1 for the sample-size default
  std::vector<Vec> action_feats; ///< nonempty: finite action set instead of the box
};

// ----------------------------------------------------------------------------
// Report evaluator
// ----------------------------------------------------------------------------

/// Evaluates the expected utility a fixed labeler derives (under their true
/// parameter) from the mechanism's policy when they submit a given report
/// parameter and everyone else labels truthfully. Construction precomputes
/// all report-independent state: other labelers' datasets, fits and
/// confidence boxes per replication, the labeler's own query geometry, and
/// the common-random-number label thresholds. Fits for the labeler's own
/// label vectors are memoized across calls keyed by the label bit pattern.
class ReportEvaluator {
 public:
  ReportEvaluator(Algorithm alg, const ProblemInstance& instance, int labeler,
                  StrategicEvalConfig cfg)
      : alg_(alg), instance_(instance), labeler_(labeler), cfg_(std::move(cfg)) {
    const InstanceConfig& c = instance_.config;
    require_input(labeler_ >= 0 && labeler_ < c.k, "ReportEvaluator: labeler index out of range");
    require_input(static_cast<int>(instance_.query_sets.size()) == c.k,
                  "ReportEvaluator: instance is missing query sets");
    for (const Vec& feat : cfg_.action_feats) {
      require_input(feat.size() == c.d, "ReportEvaluator: action feature dimension mismatch");
    }

    if (cfg_.mode == EvalMode::enumerate_labels) {
      require_input(c.n <= 12, "enumerate_labels mode requires n <= 12");
      cfg_.replications = 1;
    }

    radius_ = cfg_.mode == EvalMode::direct_params
                  ? 0.0
                  : confidence_radius(c.d, c.n, c.k, cfg_.delta, c.B, c.L, 1.0, cfg_.c_f);

    if (cfg_.mode != EvalMode::direct_params) {
      prepare_own_geometry();
      prepare_replications();
      warm_ = Vec::Zero(c.d);
    }
  }

  const ProblemInstance& instance() const { return instance_; }
  int labeler() const { return labeler_; }
  double radius() const { return radius_; }
  const Vec& truthful_report() const { return instance_.true_params[labeler_]; }
  Algorithm algorithm() const { return alg_; }

  /// Retargets the evaluator at a different mechanism. All cached state
  /// (datasets, fits, label thresholds) is mechanism-independent and is kept.
  void set_algorithm(Algorithm alg) { alg_ = alg; }

  /// Expected utility of the labeler's true parameter under the mechanism's
  /// policy when submitting `report`.
  double utility(const Vec& report) { return run(report).utility; }

  /// Expected welfare outcome across the same replications; the utility field
  /// of the attacked labeler matches utility().
  WelfareReport welfare(const Vec& report) { return run(report).welfare; }

 private:
  struct Outcome {
    double utility = 0.0;
    WelfareReport welfare;
  };

  struct RepState {
    std::vector<Vec> other_thetas;      ///< k entries; slot `labeler_` unused
    std::vector<BoxBounds> other_boxes; ///< same layout
    std::vector<double> own_uniforms;   ///< n label thresholds (CRN)
  };

  void prepare_own_geometry() {
    const InstanceConfig& c = instance_.config;
    own_diffs_ = instance_.query_sets[labeler_].diff_matrix();
    own_cov_ = (own_diffs_.transpose() * own_diffs_) / static_cast<double>(c.n);
    own_reg_ = cfg_.reg >= 0.0 ? cfg_.reg : default_ridge(c.d, c.n, cfg_.delta);
    own_smoothness_ = 0.25 * detail::spectral_norm_psd(own_cov_) + own_reg_;
    Mat metric = own_cov_;
    metric.diagonal().array() += own_reg_;
    own_halfwidths_ = ellipsoid_halfwidths(metric, radius_);
  }

  void prepare_replications() {
    const InstanceConfig& c = instance_.config;
    reps_.resize(cfg_.replications);
    for (int r = 0; r < cfg_.replications; ++r) {
      RepState& rep = reps_[r];
      rep.other_thetas.resize(c.k);
      rep.other_boxes.resize(c.k, BoxBounds{Vec::Zero(c.d), Vec::Zero(c.d)});
      for (int l = 0; l < c.k; ++l) {
        if (l == labeler_) continue;
        Rng rng(derive_seed(cfg_.seed, {0x5eedULL, static_cast<std::uint64_t>(r),
                                        static_cast<std::uint64_t>(l)}));
        LabelerDataset data = sample_dataset(instance_.true_params[l],
                                             instance_.query_sets[l], rng);
        MleOptions opts;
        opts.B = c.B;
        opts.reg = cfg_.reg;
        opts.delta = cfg_.delta;
        MleFit fit = fit_mle(data, opts);
        rep.other_thetas[l] = fit.theta_hat;
        rep.other_boxes[l] = ellipsoid_box(make_confidence_set(fit, radius_));
      }
      Rng own_rng(derive_seed(cfg_.seed, {0xca91ULL, static_cast<std::uint64_t>(r),
                                          static_cast<std::uint64_t>(labeler_)}));
      rep.own_uniforms.resize(c.n);
      for (double& u : rep.own_uniforms) u = own_rng.uniform01();
    }
  }

  /// Memoized own-parameter fit for a concrete label vector.
  const Vec& own_fit(const std::vector<int>& labels) {
    std::string key(labels.size(), '\0');
    for (std::size_t j = 0; j < labels.size(); ++j) key[j] = static_cast<char>(labels[j]);
    auto found = cache_.find(key);
    if (found != cache_.end()) return found->second;
    const Vec signs = label_signs(labels);
    detail::LogisticSolveResult solved = detail::solve_logistic(
        own_diffs_, signs, instance_.config.B, own_reg_, 1e-8, 5000, &warm_, nullptr,
        own_smoothness_);
    warm_ = solved.theta;
    return cache_.emplace(std::move(key), std::move(solved.theta)).first->second;
  }

  /// Mechanism policy for one concrete profile of estimates and boxes.
  Policy profile_policy(const std::vector<Vec>& thetas, const std::vector<BoxBounds>& boxes) const {
    MechanismInputs inputs{thetas, boxes};
    if (cfg_.action_feats.empty()) return mechanism_policy(alg_, inputs);
    const int idx = mechanism_action(alg_, inputs, cfg_.action_feats);
    return Policy{cfg_.action_feats[idx], "action:" + std::to_string(idx)};
  }

  Outcome accumulate(const std::vector<std::pair<double, Policy>>& weighted) const {
    const InstanceConfig& c = instance_.config;
    Outcome out;
    out.welfare.per_labeler = Vec::Zero(c.k);
    out.welfare.W = 0.0;
    for (const auto& [weight, policy] : weighted) {
      const WelfareReport report = evaluate(policy, instance_);
      out.welfare.per_labeler += weight * report.per_labeler;
      out.welfare.W += weight * report.W;
    }
    out.welfare.W_star = optimal_welfare(instance_.true_params);
    out.welfare.subopt = out.welfare.W_star - out.welfare.W;
    out.welfare.alpha = out.welfare.W_star > 0.0 ? out.welfare.W / out.welfare.W_star
                                                 : std::numeric_limits<double>::quiet_NaN();
    out.utility = out.welfare.per_labeler[labeler_];
    return out;
  }

  Outcome run(const Vec& report) {
    require_input(report.size() == instance_.config.d, "ReportEvaluator: report dimension mismatch");
    switch (cfg_.mode) {
      case EvalMode::direct_params: return run_direct(report);
      case EvalMode::enumerate_labels: return run_enumerate(report);
      case EvalMode::monte_carlo: return run_monte_carlo(report);
    }
    throw ConfigError("ReportEvaluator: invalid mode");
  }

  Outcome run_direct(const Vec& report) {
    const InstanceConfig& c = instance_.config;
    std::vector<Vec> thetas = instance_.true_params;
    thetas[labeler_] = project_ball(report, c.B);
    std::vector<BoxBounds> boxes;
    boxes.reserve(c.k);
    for (const Vec& theta : thetas) boxes.push_back(BoxBounds{theta, theta});
    return accumulate({{1.0, profile_policy(thetas, boxes)}});
  }

  Outcome run_monte_carlo(const Vec& report) {
    const double weight = 1.0 / static_cast<double>(reps_.size());
    std::vector<std::pair<double, Policy>> weighted;
    weighted.reserve(reps_.size());
    for (const RepState& rep : reps_) {
      const std::vector<int> labels =
          sample_labels(report, instance_.query_sets[labeler_], rep.own_uniforms);
      std::vector<Vec> thetas = rep.other_thetas;
      std::vector<BoxBounds> boxes = rep.other_boxes;
      thetas[labeler_] = own_fit(labels);
      boxes[labeler_] = own_box(thetas[labeler_]);
      weighted.emplace_back(weight, profile_policy(thetas, boxes));
    }
    return accumulate(weighted);
  }

  Outcome run_enumerate(const Vec& report) {
    const InstanceConfig& c = instance_.config;
    const RepState& rep = reps_.front();
    std::vector<double> prob_label0(c.n);
    for (int j = 0; j < c.n; ++j) {
      prob_label0[j] = bt_preference_prob(report, instance_.query_sets[labeler_].queries[j]);
    }
    std::vector<std::pair<double, Policy>> weighted;
    weighted.reserve(std::size_t{1} << c.n);
    std::vector<int> labels(c.n, 0);
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << c.n); ++mask) {
      // Gray-code order so consecutive label vectors differ in one query,
      // which keeps the warm-started solver close to its previous optimum.
      const std::uint64_t gray = mask ^ (mask >> 1);
      double prob = 1.0;
      for (int j = 0; j < c.n; ++j) {
        labels[j] = static_cast<int>((gray >> j) & 1ULL);
        prob *= labels[j] == 0 ? prob_label0[j] : 1.0 - prob_label0[j];
      }
      if (prob == 0.0) continue;
      std::vector<Vec> thetas = rep.other_thetas;
      std::vector<BoxBounds> boxes = rep.other_boxes;
      thetas[labeler_] = own_fit(labels);
      boxes[labeler_] = own_box(thetas[labeler_]);
      weighted.emplace_back(prob, profile_policy(thetas, boxes));
    }
    return accumulate(weighted);
  }

  BoxBounds own_box(const Vec& theta_hat) const {
    return BoxBounds{theta_hat - own_halfwidths_, theta_hat + own_halfwidths_};
  }

  Algorithm alg_;
  ProblemInstance instance_;
  int labeler_;
  StrategicEvalConfig cfg_;
  double radius_ = 0.0;

  Mat own_diffs_;
  Mat own_cov_;
  Vec own_halfwidths_;
  double own_reg_ = 0.0;
  double own_smoothness_ = -1.0;
  Vec warm_;
  std::vector<RepState> reps_;
  std::unordered_map<std::string, Vec> cache_;
};

/// One-shot convenience wrapper around ReportEvaluator.
inline double evaluate_report(Algorithm alg, const ProblemInstance& instance, int labeler,
                              const Vec& report, const StrategicEvalConfig& cfg) {
  ReportEvaluator evaluator(alg, instance, labeler, cfg);
  return evaluator.utility(report);
}

// ----------------------------------------------------------------------------
// SPSA attack search
// ----------------------------------------------------------------------------

struct AttackConfig {
  int steps = 200;
  double c0 = -1.0;          ///< probe radius scale, -1 for 0.1 * B
  double a0 = -1.0;          ///< step size scale, -1 for 0.05 * B
  double probe_decay = 0.101;
  double step_decay = 0.602;
  std::uint64_t seed = 0;
  StrategicEvalConfig eval;
};

struct AttackResult {
  Vec truthful_report;
  Vec best_report;
  double truthful_utility = 0.0;
  double best_utility = 0.0;
  double gain = 0.0;                ///< best_utility - truthful_utility, >= 0
  std::vector<double> trajectory;   ///< best utility found after each step
  std::vector<double> report_norms; ///< norm of the search iterate per step
};

/// Gradient-free search for a profitable deviation of one labeler:
/// simultaneous-perturbation stochastic approximation over the report ball,
/// evaluated through a shared ReportEvaluator so every candidate sees the
/// same randomness. Returns the best report over everything evaluated —
/// iterates, probes, and the truthful initial report — so the reported gain
/// is nonnegative by construction.
inline AttackResult spsa_attack(ReportEvaluator& evaluator, const AttackConfig& cfg) {
  require_config(cfg.steps >= 0, "spsa_attack: steps must be nonnegative");
  const ProblemInstance& instance = evaluator.instance();
  const int labeler = evaluator.labeler();
  const double B = instance.config.B;
  const double c0 = cfg.c0 > 0.0 ? cfg.c0 : 0.1 * B;
  const double a0 = cfg.a0 > 0.0 ? cfg.a0 : 0.05 * B;

  Rng rng(derive_seed(cfg.seed, {0xa77ac4ULL, static_cast<std::uint64_t>(labeler)}));

  AttackResult result;
  result.truthful_report = evaluator.truthful_report();
  result.truthful_utility = evaluator.utility(result.truthful_report);
  result.best_report = result.truthful_report;
  result.best_utility = result.truthful_utility;
  result.trajectory.reserve(cfg.steps + 1);
  result.trajectory.push_back(result.best_utility);
  result.report_norms.reserve(cfg.steps + 1);
  result.report_norms.push_back(result.truthful_report.norm());

  auto consider = [&](const Vec& report, double value) {
    if (value > result.best_utility) {
      result.best_utility = value;
      result.best_report = report;
    }
  };

  Vec iterate = result.truthful_report;
  for (int t = 1; t <= cfg.steps; ++t) {
    const double c_t = c0 / std::pow(static_cast<double>(t), cfg.probe_decay);
    const double a_t = a0 / std::pow(static_cast<double>(t), cfg.step_decay);
    const Vec delta = rng.rademacher_vec(instance.config.d);

    const Vec plus = project_ball(iterate + c_t * delta, B);
    const Vec minus = project_ball(iterate - c_t * delta, B);
    const double u_plus = evaluator.utility(plus);
    const double u_minus = evaluator.utility(minus);
    consider(plus, u_plus);
    consider(minus, u_minus);

    // Rademacher perturbations are self-inverse, so the standard 1/delta_j
    // factor equals delta_j.
    const Vec grad_est = ((u_plus - u_minus) / (2.0 * c_t)) * delta;
    iterate = project_ball(iterate + a_t * grad_est, B);
    const double u_iterate = evaluator.utility(iterate);
    consider(iterate, u_iterate);

    result.trajectory.push_back(result.best_utility);
    result.report_norms.push_back(iterate.norm());
  }

  result.gain = result.best_utility - result.truthful_utility;
  return result;
}

/// One-shot attack constructing its own evaluator.
inline AttackResult spsa_attack(Algorithm alg, const ProblemInstance& instance, int labeler,
                                const AttackConfig& cfg) {
  ReportEvaluator evaluator(alg, instance, labeler, cfg.eval);
  return spsa_attack(evaluator, cfg);
}

/// Post-attack welfare: the expected welfare outcome when the attacked
/// labeler plays the discovered best report and everyone else is truthful,
/// measured with the same evaluator configuration the attack used.
inline WelfareReport attacked_welfare(Algorithm alg, const ProblemInstance& instance, int labeler,
                                      const AttackResult& attack, const StrategicEvalConfig& cfg) {
  ReportEvaluator evaluator(alg, instance, labeler, cfg);
  return evaluator.welfare(attack.best_report);
}

}  // namespace stratrlhf
