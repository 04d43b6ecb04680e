#pragma once

// ============================================================================
// Tabular episodic MDPs: occupancy measures via exact forward dynamic
// programming, trajectory-pair features for preference learning, and
// pessimistic-median policy optimization over the occupancy polytope
// (exhaustive enumeration of deterministic Markov policies and/or projected
// supergradient ascent with Bellman-flow repair).
// ============================================================================

#include "stratrlhf/aggregation.hpp"
#include "stratrlhf/core.hpp"
#include "stratrlhf/env.hpp"
#include "stratrlhf/rng.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace stratrlhf {

/// Finite-horizon tabular MDP with known dynamics and a per-(state, action)
/// feature table. Transitions are indexed P[h]((s*A + a), s').
struct TabularMdp {
  int S = 0;
  int A = 0;
  int H = 0;
  std::vector<Mat> P; ///< H matrices of shape (S*A) x S, row-stochastic
  Vec rho;            ///< initial state distribution
  std::vector<Vec> phi; ///< S*A feature vectors, |phi|_2 <= L
  double L = 1.0;

  int sa_index(int s, int a) const { return s * A + a; }
  int dim() const { return phi.empty() ? 0 : static_cast<int>(phi.front().size()); }

  void validate() const {
    require_input(S >= 1 && A >= 1 && H >= 1, "TabularMdp: S, A, H must be positive");
    require_input(static_cast<int>(P.size()) == H, "TabularMdp: need one transition tensor per step");
    require_input(rho.size() == S, "TabularMdp: rho size mismatch");
    require_input(std::abs(rho.sum() - 1.0) <= 1e-12, "TabularMdp: rho must sum to 1");
    require_input(static_cast<int>(phi.size()) == S * A, "TabularMdp: feature table size mismatch");
    for (const Mat& p_h : P) {
      require_input(p_h.rows() == S * A && p_h.cols() == S, "TabularMdp: transition shape mismatch");
      for (Eigen::Index row = 0; row < p_h.rows(); ++row) {
        require_input(std::abs(p_h.row(row).sum() - 1.0) <= 1e-12,
                      "TabularMdp: transition row does not sum to 1");
      }
    }
    for (const Vec& f : phi) {
      require_input(f.norm() <= L + 1e-9, "TabularMdp: feature norm exceeds L");
    }
  }
};

/// Time-dependent Markov policy: H row-stochastic S x A matrices.
using MdpPolicy = std::vector<Mat>;

inline MdpPolicy uniform_mdp_policy(const TabularMdp& mdp) {
  return MdpPolicy(mdp.H, Mat::Constant(mdp.S, mdp.A, 1.0 / mdp.A));
}

struct OccupancyMeasure {
  std::vector<Mat> q; ///< H matrices of shape S x A, each summing to 1
  Vec feat;           ///< (1/H) * sum_h sum_{s,a} q_h(s,a) * phi(s,a)
};

namespace detail {

inline Vec occupancy_features(const TabularMdp& mdp, const std::vector<Mat>& q) {
  Vec feat = Vec::Zero(mdp.dim());
  for (int h = 0; h < mdp.H; ++h) {
    for (int s = 0; s < mdp.S; ++s) {
      for (int a = 0; a < mdp.A; ++a) {
        feat += q[h](s, a) * mdp.phi[mdp.sa_index(s, a)];
      }
    }
  }
  return feat / static_cast<double>(mdp.H);
}

}  // namespace detail

/// Exact forward dynamic-programming rollout of per-step state-action
/// occupancies; feat is the (1/H)-normalized feature occupancy.
inline OccupancyMeasure occupancy(const TabularMdp& mdp, const MdpPolicy& policy) {
  require_input(static_cast<int>(policy.size()) == mdp.H, "occupancy: policy horizon mismatch");
  for (const Mat& pi_h : policy) {
    require_input(pi_h.rows() == mdp.S && pi_h.cols() == mdp.A, "occupancy: policy shape mismatch");
    for (Eigen::Index s = 0; s < pi_h.rows(); ++s) {
      require_input(std::abs(pi_h.row(s).sum() - 1.0) <= 1e-9 && pi_h.row(s).minCoeff() >= -1e-12,
                    "occupancy: policy rows must be action distributions");
    }
  }

  OccupancyMeasure result;
  result.q.reserve(mdp.H);
  Vec state_dist = mdp.rho;
  for (int h = 0; h < mdp.H; ++h) {
    Mat q_h(mdp.S, mdp.A);
    for (int s = 0; s < mdp.S; ++s) {
      for (int a = 0; a < mdp.A; ++a) q_h(s, a) = state_dist[s] * policy[h](s, a);
    }
    Vec next = Vec::Zero(mdp.S);
    for (int s = 0; s < mdp.S; ++s) {
      for (int a = 0; a < mdp.A; ++a) {
        if (q_h(s, a) != 0.0) next += q_h(s, a) * mdp.P[h].row(mdp.sa_index(s, a)).transpose();
      }
    }
    result.q.push_back(std::move(q_h));
    state_dist = std::move(next);
  }
  result.feat = detail::occupancy_features(mdp, result.q);
  return result;
}

/// Largest Bellman-flow violation of an occupancy table (0 for exact flows).
inline double flow_violation(const TabularMdp& mdp, const std::vector<Mat>& q) {
  double worst = 0.0;
  for (int s = 0; s < mdp.S; ++s) {
    worst = std::max(worst, std::abs(q[0].row(s).sum() - mdp.rho[s]));
  }
  for (int h = 1; h < mdp.H; ++h) {
    for (int s = 0; s < mdp.S; ++s) {
      double inflow = 0.0;
      for (int sp = 0; sp < mdp.S; ++sp) {
        for (int a = 0; a < mdp.A; ++a) {
          inflow += q[h - 1](sp, a) * mdp.P[h - 1](mdp.sa_index(sp, a), s);
        }
      }
      worst = std::max(worst, std::abs(q[h].row(s).sum() - inflow));
    }
  }
  return worst;
}

// ----------------------------------------------------------------------------
// Trajectory pairs
// ----------------------------------------------------------------------------

/// One trajectory: H visited (state, action) pairs.
using Trajectory = std::vector<std::pair<int, int>>;

/// Summed feature difference sum_h [phi(traj_0[h]) - phi(traj_1[h])]; the
/// comparison diff fed to preference estimation, left unnormalized.
inline Vec trajectory_features(const TabularMdp& mdp, const Trajectory& traj_0,
                               const Trajectory& traj_1) {
  require_input(traj_0.size() == traj_1.size(), "trajectory_features: length mismatch");
  require_input(!traj_0.empty(), "trajectory_features: empty trajectories");
  require_input(traj_0.front().first == traj_1.front().first,
                "trajectory_features: trajectories must share the initial state");
  Vec x = Vec::Zero(mdp.dim());
  for (std::size_t h = 0; h < traj_0.size(); ++h) {
    x += mdp.phi[mdp.sa_index(traj_0[h].first, traj_0[h].second)];
    x -= mdp.phi[mdp.sa_index(traj_1[h].first, traj_1[h].second)];
  }
  return x;
}

namespace detail {

inline int sample_categorical(const Vec& probs, Rng& rng) {
  const double u = rng.uniform01();
  double acc = 0.0;
  for (Eigen::Index s = 0; s < probs.size(); ++s) {
    acc += probs[s];
    if (u < acc) return static_cast<int>(s);
  }
  return static_cast<int>(probs.size() - 1);
}

inline Trajectory rollout_uniform(const TabularMdp& mdp, int initial_state, Rng& rng) {
  Trajectory traj;
  traj.reserve(mdp.H);
  int s = initial_state;
  for (int h = 0; h < mdp.H; ++h) {
    const int a = rng.uniform_int(mdp.A);
    traj.emplace_back(s, a);
    s = sample_categorical(mdp.P[h].row(mdp.sa_index(s, a)).transpose(), rng);
  }
  return traj;
}

}  // namespace detail

/// Samples a comparison between two uniform-action rollouts from a shared
/// initial state; feat0/feat1 are the per-trajectory total features, so the
/// query diff equals trajectory_features(traj_0, traj_1).
inline ComparisonQuery sample_trajectory_query(const TabularMdp& mdp, Rng& rng) {
  const int s0 = detail::sample_categorical(mdp.rho, rng);
  const Trajectory t0 = detail::rollout_uniform(mdp, s0, rng);
  const Trajectory t1 = detail::rollout_uniform(mdp, s0, rng);
  ComparisonQuery q;
  q.feat0 = Vec::Zero(mdp.dim());
  q.feat1 = Vec::Zero(mdp.dim());
  for (int h = 0; h < mdp.H; ++h) {
    q.feat0 += mdp.phi[mdp.sa_index(t0[h].first, t0[h].second)];
    q.feat1 += mdp.phi[mdp.sa_index(t1[h].first, t1[h].second)];
  }
  return q;
}

inline QuerySet sample_trajectory_queries(const TabularMdp& mdp, int n, Rng& rng) {
  QuerySet set;
  set.queries.reserve(n);
  for (int j = 0; j < n; ++j) set.queries.push_back(sample_trajectory_query(mdp, rng));
  return set;
}

// ----------------------------------------------------------------------------
// Pessimistic-median optimization over the occupancy polytope
// ----------------------------------------------------------------------------

struct MdpOptimizeOptions {
  enum class Path { automatic, enumerate_only, gradient_only, both };
  Path path = Path::automatic;
  std::uint64_t enumeration_cap = 1'000'000; ///< max deterministic policies
  int gradient_iterations = 5000;
  int restarts = 4;
  std::uint64_t seed = 0;
  std::vector<double>* value_trace = nullptr; ///< per-iteration incumbent values
};

struct MdpPolicyResult {
  MdpPolicy policy;
  OccupancyMeasure occ;
  double value = 0.0;
  std::string path; ///< which path produced the returned optimum
  std::optional<double> enumeration_value;
  std::optional<double> gradient_value;
};

namespace detail {

/// Number of deterministic time-dependent Markov policies A^(S*H), saturated.
inline std::uint64_t deterministic_policy_count(const TabularMdp& mdp) {
  std::uint64_t count = 1;
  for (int i = 0; i < mdp.S * mdp.H; ++i) {
    if (count > (1ULL << 62) / static_cast<std::uint64_t>(mdp.A)) return UINT64_MAX;
    count *= static_cast<std::uint64_t>(mdp.A);
  }
  return count;
}

inline MdpPolicy deterministic_policy(const TabularMdp& mdp, const std::vector<int>& choice) {
  MdpPolicy policy(mdp.H, Mat::Zero(mdp.S, mdp.A));
  for (int h = 0; h < mdp.H; ++h) {
    for (int s = 0; s < mdp.S; ++s) policy[h](s, choice[h * mdp.S + s]) = 1.0;
  }
  return policy;
}

struct PathOutcome {
  double value = -std::numeric_limits<double>::infinity();
  MdpPolicy policy;
  OccupancyMeasure occ;
};

inline PathOutcome enumerate_policies(const TabularMdp& mdp, const MedianBox& mbox) {
  std::vector<int> choice(static_cast<std::size_t>(mdp.S) * mdp.H, 0);
  PathOutcome best;
  while (true) {
    MdpPolicy policy = deterministic_policy(mdp, choice);
    OccupancyMeasure occ = occupancy(mdp, policy);
    const double value = box_min_value(occ.feat, mbox.m_lo, mbox.m_hi);
    if (value > best.value) {
      best.value = value;
      best.policy = std::move(policy);
      best.occ = std::move(occ);
    }
    // mixed-radix increment
    std::size_t pos = 0;
    while (pos < choice.size()) {
      if (++choice[pos] < mdp.A) break;
      choice[pos] = 0;
      ++pos;
    }
    if (pos == choice.size()) break;
  }
  return best;
}

/// Projects an arbitrary nonnegative-clipped table back onto the Bellman-flow
/// polytope by forward renormalization: every step's row masses are rescaled
/// to match the inflow implied by the (already repaired) previous step.
inline void flow_repair(const TabularMdp& mdp, std::vector<Mat>& q) {
  Vec target = mdp.rho;
  for (int h = 0; h < mdp.H; ++h) {
    q[h] = q[h].cwiseMax(0.0);
    for (int s = 0; s < mdp.S; ++s) {
      const double rowsum = q[h].row(s).sum();
      if (rowsum > 0.0) {
        q[h].row(s) *= target[s] / rowsum;
      } else {
        q[h].row(s).setConstant(target[s] / mdp.A);
      }
    }
    if (h + 1 < mdp.H) {
      Vec next = Vec::Zero(mdp.S);
      for (int s = 0; s < mdp.S; ++s) {
        for (int a = 0; a < mdp.A; ++a) {
          if (q[h](s, a) != 0.0) next += q[h](s, a) * mdp.P[h].row(mdp.sa_index(s, a)).transpose();
        }
      }
      target = std::move(next);
    }
  }
}

/// Linearization weights for the pessimistic value at the current feature
/// point: the active box bound away from the kink; on the kink (feature
/// coordinate ~0) the best element of the subdifferential [lo_j, hi_j] —
/// zero when the interval straddles zero (any movement hurts), otherwise the
/// bound closest to zero (the slope on the profitable side).
inline Vec pessimistic_linearization(const MedianBox& mbox, const Vec& feat) {
  constexpr double kink_tol = 1e-12;
  Vec theta_tilde(mbox.dim());
  for (Eigen::Index j = 0; j < mbox.dim(); ++j) {
    if (feat[j] > kink_tol) {
      theta_tilde[j] = mbox.m_lo[j];
    } else if (feat[j] < -kink_tol) {
      theta_tilde[j] = mbox.m_hi[j];
    } else if (mbox.m_lo[j] > 0.0) {
      theta_tilde[j] = mbox.m_lo[j];
    } else if (mbox.m_hi[j] < 0.0) {
      theta_tilde[j] = mbox.m_hi[j];
    } else {
      theta_tilde[j] = 0.0;
    }
  }
  return theta_tilde;
}

/// Supergradient of the pessimistic value with respect to each q_h(s,a):
/// (1/H) * <theta_tilde, phi(s,a)> with theta_tilde the linearization above.
inline std::vector<Mat> pessimistic_supergradient(const TabularMdp& mdp, const MedianBox& mbox,
                                                  const Vec& feat) {
  const Vec theta_tilde = pessimistic_linearization(mbox, feat);
  std::vector<Mat> grad(mdp.H, Mat::Zero(mdp.S, mdp.A));
  for (int h = 0; h < mdp.H; ++h) {
    for (int s = 0; s < mdp.S; ++s) {
      for (int a = 0; a < mdp.A; ++a) {
        grad[h](s, a) = theta_tilde.dot(mdp.phi[mdp.sa_index(s, a)]) / mdp.H;
      }
    }
  }
  return grad;
}

/// Exact maximization of the pessimistic value along the feasible segment
/// q + alpha * (p - q), alpha in [0, 1]. The objective is concave piecewise
/// linear in alpha with breakpoints exactly where a feature coordinate
/// crosses zero, so evaluating the crossings and the endpoint is exact.
inline double best_segment_step(const MedianBox& mbox, const Vec& feat, const Vec& feat_p) {
  double best_alpha = 1.0;
  double best_value = box_min_value(feat_p, mbox.m_lo, mbox.m_hi);
  for (Eigen::Index j = 0; j < feat.size(); ++j) {
    const double delta = feat_p[j] - feat[j];
    if (delta == 0.0) continue;
    const double alpha = -feat[j] / delta;
    if (alpha <= 0.0 || alpha >= 1.0) continue;
    const Vec cand = feat + alpha * (feat_p - feat);
    const double value = box_min_value(cand, mbox.m_lo, mbox.m_hi);
    if (value > best_value) {
      best_value = value;
      best_alpha = alpha;
    }
  }
  return best_alpha;
}

/// Exact best deterministic policy for the linear reward <theta_tilde, phi>
/// via backward dynamic programming; used as a vertex polish for the
/// gradient path.
inline MdpPolicy greedy_policy_for(const TabularMdp& mdp, const Vec& theta_tilde) {
  MdpPolicy policy(mdp.H, Mat::Zero(mdp.S, mdp.A));
  Vec value_next = Vec::Zero(mdp.S);
  for (int h = mdp.H - 1; h >= 0; --h) {
    Vec value_here(mdp.S);
    for (int s = 0; s < mdp.S; ++s) {
      int best_a = 0;
      double best_q = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < mdp.A; ++a) {
        const int sa = mdp.sa_index(s, a);
        const double q_value = theta_tilde.dot(mdp.phi[sa]) / mdp.H +
                               mdp.P[h].row(sa).dot(value_next);
        if (q_value > best_q) {
          best_q = q_value;
          best_a = a;
        }
      }
      policy[h](s, best_a) = 1.0;
      value_here[s] = best_q;
    }
    value_next = std::move(value_here);
  }
  return policy;
}

inline PathOutcome gradient_ascent(const TabularMdp& mdp, const MedianBox& mbox,
                                   const MdpOptimizeOptions& options) {
  PathOutcome best;
  for (int restart = 0; restart < std::max(1, options.restarts); ++restart) {
    MdpPolicy init;
    if (restart == 0) {
      init = uniform_mdp_policy(mdp);
    } else {
      Rng rng(derive_seed(options.seed, {0x0dffULL, static_cast<std::uint64_t>(restart)}));
      init = MdpPolicy(mdp.H, Mat::Zero(mdp.S, mdp.A));
      for (int h = 0; h < mdp.H; ++h) {
        for (int s = 0; s < mdp.S; ++s) {
          double total = 0.0;
          for (int a = 0; a < mdp.A; ++a) {
            init[h](s, a) = -std::log(1.0 - rng.uniform01());
            total += init[h](s, a);
          }
          init[h].row(s) /= total;
        }
      }
    }

    std::vector<Mat> q = occupancy(mdp, init).q;
    Vec feat = occupancy_features(mdp, q);
    double value = box_min_value(feat, mbox.m_lo, mbox.m_hi);
    if (options.value_trace) options.value_trace->push_back(value);
    int stalls = 0;
    const int iters = options.gradient_iterations / std::max(1, options.restarts);
    for (int t = 1; t <= iters; ++t) {
      const std::vector<Mat> grad = pessimistic_supergradient(mdp, mbox, feat);
      bool improved = false;
      // Each trial step is projected to a feasible point p; the segment from
      // q to p stays feasible by convexity and features are linear along it,
      // so the piecewise-linear line search is exact.
      for (const double step : {16.0, 2.0, 0.25}) {
        std::vector<Mat> p = q;
        for (int h = 0; h < mdp.H; ++h) p[h] += step * grad[h];
        flow_repair(mdp, p);
        const Vec feat_p = occupancy_features(mdp, p);
        const double alpha = best_segment_step(mbox, feat, feat_p);
        std::vector<Mat> candidate(mdp.H);
        for (int h = 0; h < mdp.H; ++h) candidate[h] = (1.0 - alpha) * q[h] + alpha * p[h];
        const Vec cand_feat = occupancy_features(mdp, candidate);
        const double cand_value = box_min_value(cand_feat, mbox.m_lo, mbox.m_hi);
        if (cand_value > value + 1e-15) {
          improved = true;
          q = std::move(candidate);
          feat = cand_feat;
          value = cand_value;
          break;
        }
      }
      if (options.value_trace) options.value_trace->push_back(value);
      stalls = improved ? 0 : stalls + 1;
      if (stalls >= 50) break;
    }

    if (value > best.value) {
      best.value = value;
      best.occ.q = q;
      best.occ.feat = feat;
      // extract the stochastic policy realizing q
      best.policy = MdpPolicy(mdp.H, Mat::Constant(mdp.S, mdp.A, 1.0 / mdp.A));
      for (int h = 0; h < mdp.H; ++h) {
        for (int s = 0; s < mdp.S; ++s) {
          const double rowsum = q[h].row(s).sum();
          if (rowsum > 0.0) best.policy[h].row(s) = q[h].row(s) / rowsum;
        }
      }
    }
  }

  // Vertex polish: best deterministic response to the active bounds at the
  // incumbent (a supergradient step of unbounded length toward a polytope
  // corner); keeps whichever is better.
  const Vec theta_tilde = pessimistic_linearization(mbox, best.occ.feat);
  MdpPolicy greedy = greedy_policy_for(mdp, theta_tilde);
  OccupancyMeasure greedy_occ = occupancy(mdp, greedy);
  const double greedy_value = box_min_value(greedy_occ.feat, mbox.m_lo, mbox.m_hi);
  if (greedy_value > best.value) {
    best.value = greedy_value;
    best.policy = std::move(greedy);
    best.occ = std::move(greedy_occ);
  }
  return best;
}

}  // namespace detail

/// Maximizes the pessimistic median value of the feature occupancy over the
/// occupancy polytope. Runs exhaustive deterministic-policy enumeration when
/// the policy count fits the cap, the projected-supergradient path otherwise
/// (or both, returning the better), per the configured path selection.
inline MdpPolicyResult optimize_mdp_pessimistic_median(const TabularMdp& mdp,
                                                       const MedianBox& mbox,
                                                       const MdpOptimizeOptions& options = {}) {
  mdp.validate();
  require_input(mbox.dim() == mdp.dim(), "optimize_mdp_pessimistic_median: dimension mismatch");

  using Path = MdpOptimizeOptions::Path;
  const std::uint64_t policy_count = detail::deterministic_policy_count(mdp);
  const bool enumeration_fits = policy_count <= options.enumeration_cap;

  bool run_enum = false;
  bool run_grad = false;
  switch (options.path) {
    case Path::automatic:
      run_enum = enumeration_fits;
      run_grad = !enumeration_fits;
      break;
    case Path::enumerate_only:
      if (!enumeration_fits) {
        throw CapacityError("optimize_mdp_pessimistic_median: " + std::to_string(mdp.A) + "^" +
                            std::to_string(mdp.S * mdp.H) + " deterministic policies exceed the cap");
      }
      run_enum = true;
      break;
    case Path::gradient_only:
      run_grad = true;
      break;
    case Path::both:
      if (!enumeration_fits) {
        throw CapacityError("optimize_mdp_pessimistic_median: enumeration requested but infeasible");
      }
      run_enum = true;
      run_grad = true;
      break;
  }

  MdpPolicyResult result;
  detail::PathOutcome best;
  if (run_enum) {
    detail::PathOutcome outcome = detail::enumerate_policies(mdp, mbox);
    result.enumeration_value = outcome.value;
    if (outcome.value > best.value) {
      best = std::move(outcome);
      result.path = "enumeration";
    }
  }
  if (run_grad) {
    detail::PathOutcome outcome = detail::gradient_ascent(mdp, mbox, options);
    result.gradient_value = outcome.value;
    if (outcome.value > best.value) {
      best = std::move(outcome);
      result.path = "gradient";
    }
  }
  result.policy = std::move(best.policy);
  result.occ = std::move(best.occ);
  result.value = best.value;
  return result;
}

}  // namespace stratrlhf
