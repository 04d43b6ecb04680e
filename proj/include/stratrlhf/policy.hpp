#pragma once

// ============================================================================
// Policy optimization over the [-1,1]^d occupancy hyperrectangle for the four
// aggregation mechanisms, welfare metrics, and the small-scale maxmin
// baseline used by the counterexample verifier.
// ============================================================================

#include "stratrlhf/aggregation.hpp"
#include "stratrlhf/core.hpp"
#include "stratrlhf/env.hpp"
#include "stratrlhf/estimation.hpp"

#include <string>
#include <vector>

namespace stratrlhf {

/// The four mechanisms under study.
enum class Algorithm {
  naive_mle,          ///< average of MLEs, no pessimism
  pessimistic_sw,     ///< pessimism over the per-labeler boxes, average aggregation
  median_mle,         ///< coordinate median of MLEs, no pessimism
  pessimistic_momle,  ///< pessimism over the median box
};

inline const std::vector<Algorithm>& all_algorithms() {
  static const std::vector<Algorithm> algorithms = {
      Algorithm::naive_mle, Algorithm::pessimistic_sw, Algorithm::median_mle,
      Algorithm::pessimistic_momle};
  return algorithms;
}

inline std::string to_string(Algorithm alg) {
  switch (alg) {
    case Algorithm::naive_mle: return "naive_mle";
    case Algorithm::pessimistic_sw: return "pessimistic_sw";
    case Algorithm::median_mle: return "median_mle";
    case Algorithm::pessimistic_momle: return "pessimistic_momle";
  }
  throw InputError("unknown algorithm");
}

inline Algorithm algorithm_from_string(const std::string& name) {
  for (Algorithm alg : all_algorithms()) {
    if (to_string(alg) == name) return alg;
  }
  throw ConfigError("unknown algorithm '" + name +
                    "' (expected naive_mle|pessimistic_sw|median_mle|pessimistic_momle)");
}

/// A policy over the hyperrectangle: its feature occupancy z in [-1,1]^d.
struct Policy {
  Vec z;
  std::string provenance;
};

struct PolicyValue {
  Policy policy;
  double value = 0.0; ///< the optimizer's own (pessimistic) objective at z
};

/// z_j = sign(theta_j); exact maximizer of <theta, z> over [-1,1]^d, with
/// z_j = 0 on ties.
inline Policy optimize_linear(const Vec& theta, std::string provenance = "linear") {
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    require_input(std::isfinite(theta[j]), "optimize_linear: theta must be finite");
  }
  Vec z(theta.size());
  for (Eigen::Index j = 0; j < theta.size(); ++j) z[j] = sign(theta[j]);
  return Policy{std::move(z), std::move(provenance)};
}

namespace detail {

/// Sign rule for a per-coordinate pessimistic interval [lo_j, hi_j]:
/// the maximizer of min(lo_j*t, hi_j*t) over t in [-1,1] is +1 when the
/// interval is positive, -1 when negative, and 0 when it straddles zero.
inline PolicyValue interval_sign_rule(const Vec& lo, const Vec& hi, std::string provenance) {
  Vec z(lo.size());
  double value = 0.0;
  for (Eigen::Index j = 0; j < lo.size(); ++j) {
    if (lo[j] > 0.0) {
      z[j] = 1.0;
      value += lo[j];
    } else if (hi[j] < 0.0) {
      z[j] = -1.0;
      value -= hi[j];
    } else {
      z[j] = 0.0;
    }
  }
  return PolicyValue{Policy{std::move(z), std::move(provenance)}, value};
}

}  // namespace detail

/// Maximizes the pessimistic median value over the hyperrectangle; exact by
/// coordinate separability.
inline PolicyValue optimize_pessimistic_median(const MedianBox& mbox) {
  return detail::interval_sign_rule(mbox.m_lo, mbox.m_hi, "pessimistic_momle");
}

/// Pessimistic average baseline: per coordinate the interval
/// [avg_i lo_ij, avg_i hi_ij], then the same sign rule. Equals the exact
/// pessimism over the product of boxes under average aggregation.
inline PolicyValue optimize_pessimistic_average(const std::vector<BoxBounds>& boxes) {
  require_input(!boxes.empty(), "optimize_pessimistic_average: no boxes");
  const Eigen::Index d = boxes.front().dim();
  Vec avg_lo = Vec::Zero(d);
  Vec avg_hi = Vec::Zero(d);
  for (const BoxBounds& box : boxes) {
    require_input(box.dim() == d, "optimize_pessimistic_average: dimension mismatch");
    avg_lo += box.lo;
    avg_hi += box.hi;
  }
  avg_lo /= static_cast<double>(boxes.size());
  avg_hi /= static_cast<double>(boxes.size());
  return detail::interval_sign_rule(avg_lo, avg_hi, "pessimistic_sw");
}

// ----------------------------------------------------------------------------
// Welfare metrics
// ----------------------------------------------------------------------------

struct WelfareReport {
  Vec per_labeler;     ///< J_i = <theta*_i, z>
  double W = 0.0;      ///< mean of J_i
  double W_star = 0.0; ///< max over [-1,1]^d of mean <theta*_i, z>
  double subopt = 0.0; ///< W_star - W
  double alpha = 0.0;  ///< W / W_star; NaN when W_star <= 0
};

/// Best achievable social welfare over the hyperrectangle: the sign rule on
/// the true average parameter, giving sum_j |avg_i theta*_ij| exactly.
inline double optimal_welfare(const std::vector<Vec>& true_params) {
  require_input(!true_params.empty(), "optimal_welfare: no labelers");
  Vec avg = Vec::Zero(true_params.front().size());
  for (const Vec& theta : true_params) avg += theta;
  avg /= static_cast<double>(true_params.size());
  return avg.cwiseAbs().sum();
}

/// Welfare report of a policy against the instance's true parameters.
inline WelfareReport evaluate(const Policy& policy, const ProblemInstance& instance) {
  const int k = static_cast<int>(instance.true_params.size());
  require_input(k >= 1, "evaluate: instance has no labelers");
  require_input(policy.z.size() == instance.true_params.front().size(),
                "evaluate: policy dimension mismatch");
  WelfareReport report;
  report.per_labeler.resize(k);
  for (int i = 0; i < k; ++i) report.per_labeler[i] = instance.true_params[i].dot(policy.z);
  report.W = report.per_labeler.mean();
  report.W_star = optimal_welfare(instance.true_params);
  report.subopt = report.W_star - report.W;
  report.alpha = report.W_star > 0.0 ? report.W / report.W_star
                                     : std::numeric_limits<double>::quiet_NaN();
  return report;
}

// ----------------------------------------------------------------------------
// Mechanism dispatch
// ----------------------------------------------------------------------------

/// Everything a mechanism consumes: per-labeler point estimates and
/// (for the pessimistic mechanisms) per-labeler boxes.
struct MechanismInputs {
  std::vector<Vec> estimates;
  std::vector<BoxBounds> boxes;
};

inline MechanismInputs mechanism_inputs_from_fits(const std::vector<MleFit>& fits, double radius) {
  MechanismInputs inputs;
  inputs.estimates.reserve(fits.size());
  inputs.boxes.reserve(fits.size());
  for (const MleFit& fit : fits) {
    inputs.estimates.push_back(fit.theta_hat);
    inputs.boxes.push_back(ellipsoid_box(make_confidence_set(fit, radius)));
  }
  return inputs;
}

/// Runs one of the four mechanisms over the hyperrectangle policy space.
inline Policy mechanism_policy(Algorithm alg, const MechanismInputs& inputs) {
  require_input(!inputs.estimates.empty(), "mechanism_policy: no labelers");
  switch (alg) {
    case Algorithm::naive_mle: {
      Vec avg = Vec::Zero(inputs.estimates.front().size());
      for (const Vec& est : inputs.estimates) avg += est;
      avg /= static_cast<double>(inputs.estimates.size());
      return optimize_linear(avg, "naive_mle");
    }
    case Algorithm::median_mle:
      return optimize_linear(coordinate_median(inputs.estimates), "median_mle");
    case Algorithm::pessimistic_sw:
      return optimize_pessimistic_average(inputs.boxes).policy;
    case Algorithm::pessimistic_momle:
      return optimize_pessimistic_median(median_interval(inputs.boxes)).policy;
  }
  throw InputError("unknown algorithm");
}

/// Runs one of the four mechanisms over a finite action set (each action is
/// a feature vector in [-1,1]^d); returns the argmax action, ties to the
/// lowest index.
inline int mechanism_action(Algorithm alg, const MechanismInputs& inputs,
                            const std::vector<Vec>& action_feats) {
  require_input(!action_feats.empty(), "mechanism_action: no actions");
  const auto score = [&](const Vec& feat) -> double {
    switch (alg) {
      case Algorithm::naive_mle: {
        Vec avg = Vec::Zero(feat.size());
        for (const Vec& est : inputs.estimates) avg += est;
        avg /= static_cast<double>(inputs.estimates.size());
        return avg.dot(feat);
      }
      case Algorithm::median_mle:
        return coordinate_median(inputs.estimates).dot(feat);
      case Algorithm::pessimistic_sw: {
        Vec avg_lo = Vec::Zero(feat.size());
        Vec avg_hi = Vec::Zero(feat.size());
        for (const BoxBounds& box : inputs.boxes) {
          avg_lo += box.lo;
          avg_hi += box.hi;
        }
        avg_lo /= static_cast<double>(inputs.boxes.size());
        avg_hi /= static_cast<double>(inputs.boxes.size());
        return box_min_value(feat, avg_lo, avg_hi);
      }
      case Algorithm::pessimistic_momle:
        return pessimistic_value(feat, median_interval(inputs.boxes));
    }
    throw InputError("unknown algorithm");
  };

  int best_action = 0;
  double best_score = score(action_feats[0]);
  for (std::size_t a = 1; a < action_feats.size(); ++a) {
    const double s = score(action_feats[a]);
    if (s > best_score) {
      best_score = s;
      best_action = static_cast<int>(a);
    }
  }
  return best_action;
}

// ----------------------------------------------------------------------------
// MaxMin baseline (counterexample verifier only, <= 3 actions)
// ----------------------------------------------------------------------------

struct MaxminResult {
  Vec distribution;      ///< optimal action distribution
  int modal_action = 0;  ///< highest-probability action (ties to lowest index)
  double value = 0.0;    ///< maximized minimum labeler utility
};

namespace detail {

inline double maxmin_objective(const Mat& utilities, const Vec& p) {
  return (utilities * p).minCoeff();
}

}  // namespace detail

/// Maximizes min_i E_{a~p} <reported_i, feat_a> over action distributions p
/// by grid search with local refinement down to 1e-6 resolution.
inline MaxminResult maxmin_policy(const std::vector<Vec>& reported,
                                  const std::vector<Vec>& action_feats) {
  require_input(!action_feats.empty(), "maxmin_policy: empty action set");
  require_input(!reported.empty(), "maxmin_policy: no labelers");
  require_input(action_feats.size() <= 3, "maxmin_policy: supports at most 3 actions");

  const int k = static_cast<int>(reported.size());
  const int num_actions = static_cast<int>(action_feats.size());
  Mat utilities(k, num_actions);
  for (int i = 0; i < k; ++i) {
    for (int a = 0; a < num_actions; ++a) utilities(i, a) = reported[i].dot(action_feats[a]);
  }

  MaxminResult result;
  if (num_actions == 1) {
    result.distribution = Vec::Ones(1);
    result.value = utilities.col(0).minCoeff();
    return result;
  }

  // Grid + refinement over the first (num_actions - 1) simplex coordinates.
  Vec best = Vec::Zero(num_actions);
  best[num_actions - 1] = 1.0;
  double best_value = detail::maxmin_objective(utilities, best);
  Vec center = best.head(num_actions - 1);
  double span = 1.0;
  double step = 1.0 / 64.0;
  while (step > 1e-7) {
    const int half = 64;
    if (num_actions == 2) {
      for (int i0 = -half; i0 <= half; ++i0) {
        const double p0 = std::clamp(center[0] + i0 * step, 0.0, 1.0);
        Vec p(2);
        p << p0, 1.0 - p0;
        const double value = detail::maxmin_objective(utilities, p);
        if (value > best_value + 1e-15) {
          best_value = value;
          best = p;
        }
      }
    } else {
      for (int i0 = -half; i0 <= half; ++i0) {
        const double p0 = std::clamp(center[0] + i0 * step, 0.0, 1.0);
        for (int i1 = -half; i1 <= half; ++i1) {
          const double p1 = std::clamp(center[1] + i1 * step, 0.0, 1.0 - p0);
          Vec p(3);
          p << p0, p1, 1.0 - p0 - p1;
          const double value = detail::maxmin_objective(utilities, p);
          if (value > best_value + 1e-15) {
            best_value = value;
            best = p;
          }
        }
      }
    }
    center = best.head(num_actions - 1);
    span = step;
    step /= 8.0;
  }
  (void)span;

  result.distribution = best;
  result.value = best_value;
  result.modal_action = 0;
  for (int a = 1; a < num_actions; ++a) {
    if (best[a] > best[result.modal_action]) result.modal_action = a;
  }
  return result;
}

}  // namespace stratrlhf
