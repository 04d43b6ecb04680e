#pragma once

// ============================================================================
// Robust aggregation across labelers: coordinate-wise medians, the median
// box (per-coordinate range of achievable medians when each labeler's set is
// box-valued), the pessimistic value of a policy against the median box, and
// an exact-ellipsoid penalized solver cross-checking the box relaxation.
// ============================================================================

#include "stratrlhf/core.hpp"
#include "stratrlhf/estimation.hpp"

#include <algorithm>
#include <limits>
#include <vector>

namespace stratrlhf {

/// Lower median of a list of scalars: order statistic ceil(k/2) (1-indexed).
/// Exact median for odd k.
inline double lower_median(std::vector<double> values) {
  require_input(!values.empty(), "lower_median: empty input");
  const std::size_t idx = (values.size() - 1) / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(idx), values.end());
  return values[idx];
}

/// Coordinate-wise lower median of k vectors.
inline Vec coordinate_median(const std::vector<Vec>& vectors) {
  require_input(!vectors.empty(), "coordinate_median: empty input");
  const Eigen::Index d = vectors.front().size();
  std::vector<double> column(vectors.size());
  Vec med(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < vectors.size(); ++i) {
      require_input(vectors[i].size() == d, "coordinate_median: dimension mismatch");
      column[i] = vectors[i][j];
    }
    med[j] = lower_median(column);
  }
  return med;
}

/// Per-coordinate range of medians achievable by picking one point from each
/// labeler's box.
struct MedianBox {
  Vec m_lo;
  Vec m_hi;
  int k = 0;

  Eigen::Index dim() const { return m_lo.size(); }
};

/// The median box of k per-labeler boxes: coordinate-wise (lower) median of
/// the lower bounds, and of the upper bounds. For box-valued sets this is
/// exactly the per-coordinate achievable-median range.
inline MedianBox median_interval(const std::vector<BoxBounds>& boxes) {
  require_input(!boxes.empty(), "median_interval: empty input");
  std::vector<Vec> los, his;
  los.reserve(boxes.size());
  his.reserve(boxes.size());
  for (const BoxBounds& box : boxes) {
    los.push_back(box.lo);
    his.push_back(box.hi);
  }
  MedianBox mbox;
  mbox.m_lo = coordinate_median(los);
  mbox.m_hi = coordinate_median(his);
  mbox.k = static_cast<int>(boxes.size());
  return mbox;
}

/// Minimum of <theta, z> over an axis-aligned box of thetas: separable,
/// sum_j min(z_j*lo_j, z_j*hi_j).
inline double box_min_value(const Vec& z, const Vec& lo, const Vec& hi) {
  require_input(z.size() == lo.size() && z.size() == hi.size(),
                "box_min_value: dimension mismatch");
  double total = 0.0;
  for (Eigen::Index j = 0; j < z.size(); ++j) {
    total += std::min(z[j] * lo[j], z[j] * hi[j]);
  }
  return total;
}

/// Pessimistic value of policy z against the median box: the exact minimum of
/// <theta, z> over the box-valued median set. z must lie in [-1,1]^d.
inline double pessimistic_value(const Vec& z, const MedianBox& mbox) {
  require_input(z.size() == mbox.dim(), "pessimistic_value: dimension mismatch");
  for (Eigen::Index j = 0; j < z.size(); ++j) {
    require_input(z[j] >= -1.0 && z[j] <= 1.0, "pessimistic_value: z outside [-1,1]^d");
  }
  return box_min_value(z, mbox.m_lo, mbox.m_hi);
}

// ----------------------------------------------------------------------------
// Penalized exact-ellipsoid solver
// ----------------------------------------------------------------------------

struct PenalizedConfig {
  double big_m = -1.0;    ///< penalty weight; <0 means 2*B*L/eps
  double eps = 1e-3;      ///< target accuracy
  int max_iter = 100;     ///< outer alternations
  int inner_iter = 2000;  ///< projected-subgradient steps per selection update
  double tol = 1e-10;     ///< outer stop on penalized-objective decrease
  double B = 1.0;
  double L = 1.0;
  std::vector<double>* trace = nullptr; ///< optional per-iteration objective log

  double resolved_big_m() const {
    require_config(eps > 0.0, "PenalizedConfig: eps must be positive");
    return big_m > 0.0 ? big_m : 2.0 * B * L / eps;
  }
};

struct PenalizedSolution {
  Vec theta;                    ///< coordinate median of the final selections
  std::vector<Vec> selections;  ///< one feasible point per ellipsoid
  double objective = 0.0;       ///< <theta, z> at the reported theta
  double penalized_objective = 0.0; ///< <theta,z> + M * sum_i |theta - sel_i|_1
  bool converged = false;
  int iterations = 0;
};

namespace detail {

/// Symmetric square root and inverse square root of an SPD matrix.
struct WhitenedMetric {
  Mat sqrt;
  Mat inv_sqrt;
};

inline WhitenedMetric whiten(const Mat& metric) {
  Eigen::SelfAdjointEigenSolver<Mat> eig(metric);
  if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() <= 0.0) {
    throw NumericError("penalized solver: ellipsoid metric is not positive definite");
  }
  const Vec lambda = eig.eigenvalues();
  WhitenedMetric wm;
  wm.sqrt = eig.eigenvectors() * lambda.cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
  wm.inv_sqrt = eig.eigenvectors() * lambda.cwiseSqrt().cwiseInverse().asDiagonal() *
                eig.eigenvectors().transpose();
  return wm;
}

/// Minimizes z_j*t + weight * sum_i |t - points_i| exactly; the objective is
/// piecewise linear and convex, so some breakpoint is optimal. Ties go to the
/// smaller t.
inline double tilted_median_step(double zj, double weight, const std::vector<double>& points) {
  if (weight * static_cast<double>(points.size()) < std::abs(zj)) {
    throw NumericError("penalized solver: objective unbounded (penalty weight too small)");
  }
  double best_t = points.front();
  double best_val = std::numeric_limits<double>::infinity();
  for (double t : points) {
    double val = zj * t;
    for (double p : points) val += weight * std::abs(t - p);
    if (val < best_val - 1e-15 || (std::abs(val - best_val) <= 1e-15 && t < best_t)) {
      best_val = val;
      best_t = t;
    }
  }
  return best_t;
}

}  // namespace detail

/// Minimizes <theta, z> + M * sum_i |theta - theta_i|_1 over theta free and
/// theta_i constrained to its confidence ellipsoid. Each of a deterministic
/// pool of feasible starting selections is refined by alternating exact
/// per-coordinate theta steps with projected-subgradient selection steps in
/// whitened coordinates; the two-block alternation alone can stall on ties
/// (theta pinned at a selection both blocks are happy with), so the pool seeds
/// it from the corners the optimum actually favors. The best feasible iterate
/// is reported with theta snapped to the exact coordinate median of its
/// selections, so the reported objective is always attainable by a median of
/// in-set parameters.
inline PenalizedSolution penalized_median_min(const Vec& z,
                                              const std::vector<ConfidenceSet>& sets,
                                              const PenalizedConfig& cfg = {}) {
  require_input(!sets.empty(), "penalized_median_min: no confidence sets");
  const Eigen::Index d = z.size();
  const std::size_t k = sets.size();
  const double big_m = cfg.resolved_big_m();

  std::vector<detail::WhitenedMetric> whitened;
  whitened.reserve(k);
  for (const ConfidenceSet& set : sets) {
    require_input(set.center.size() == d, "penalized_median_min: dimension mismatch");
    whitened.push_back(detail::whiten(set.metric()));
  }

  // Exact minimizer of <w, x> over one ellipsoid.
  const auto linear_min = [&](std::size_t i, const Vec& w) -> Vec {
    if (sets[i].radius <= 0.0 || w.isZero(0.0)) return sets[i].center;
    const Vec y = whitened[i].inv_sqrt * (whitened[i].inv_sqrt * w);
    const double denom = std::sqrt(std::max(w.dot(y), 0.0));
    if (denom <= 0.0) return sets[i].center;
    return sets[i].center - (sets[i].radius / denom) * y;
  };

  // Approximate minimizer of |target - x|_1 over one ellipsoid, via projected
  // subgradient with diminishing steps on u = M^{1/2} (x - center).
  const auto l1_projection = [&](std::size_t i, const Vec& target_point, const Vec& from) -> Vec {
    const ConfidenceSet& set = sets[i];
    if (set.radius <= 0.0) return set.center;
    const Mat& w_inv = whitened[i].inv_sqrt;
    const Vec target = target_point - set.center;
    Vec u = project_ball(whitened[i].sqrt * (from - set.center), set.radius);
    Vec best_u = u;
    double best_h = (target - w_inv * u).lpNorm<1>();
    for (int t = 1; t <= cfg.inner_iter; ++t) {
      const Vec resid = target - w_inv * u;
      Vec grad = Vec::Zero(d);
      for (Eigen::Index j = 0; j < d; ++j) grad -= sign(resid[j]) * w_inv.col(j);
      const double step = set.radius / std::sqrt(static_cast<double>(t));
      const double gnorm = grad.norm();
      if (gnorm <= 1e-15) break;
      u = project_ball(u - step / gnorm * grad, set.radius);
      const double h = (target - w_inv * u).lpNorm<1>();
      if (h < best_h) {
        best_h = h;
        best_u = u;
      }
    }
    return set.center + w_inv * best_u;
  };

  PenalizedSolution best;
  best.penalized_objective = std::numeric_limits<double>::infinity();
  double best_value = std::numeric_limits<double>::infinity();
  const auto consider = [&](const std::vector<Vec>& selections) {
    const Vec med = coordinate_median(selections);
    const double value = med.dot(z);
    if (value < best_value) {
      best_value = value;
      best.theta = med;
      best.selections = selections;
    }
  };

  // Refines one starting selection set in place; returns true on convergence.
  int total_outer = 0;
  std::vector<double> points(k);
  const auto alternate = [&](std::vector<Vec> selections) -> bool {
    consider(selections);
    Vec theta = coordinate_median(selections);
    const auto penalized_at = [&](const Vec& t) {
      double total = t.dot(z);
      for (const Vec& sel : selections) total += big_m * (t - sel).lpNorm<1>();
      return total;
    };
    double current = penalized_at(theta);
    if (cfg.trace) cfg.trace->push_back(current);
    for (int outer = 0; outer < cfg.max_iter; ++outer) {
      ++total_outer;
      // theta step: exact per-coordinate piecewise-linear minimization.
      for (Eigen::Index j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < k; ++i) points[i] = selections[i][j];
        theta[j] = detail::tilted_median_step(z[j], big_m, points);
      }
      // selection steps: each pulls toward theta within its ellipsoid.
      for (std::size_t i = 0; i < k; ++i) selections[i] = l1_projection(i, theta, selections[i]);
      consider(selections);
      const double updated = penalized_at(theta);
      if (cfg.trace) cfg.trace->push_back(updated);
      if (std::abs(current - updated) <= cfg.tol) return true;
      current = updated;
    }
    return false;
  };

  // Starting pool: the centers; every labeler minimizing the full tilt; each
  // labeler minimizing the tilt masked to the coordinates where its center is
  // the lower median (the coordinates its selection actually steers for
  // well-separated sets); and the per-labeler pull toward the adversarial
  // corner of the box-relaxed median set.
  std::vector<std::vector<Vec>> pool;
  std::vector<Vec> centers;
  centers.reserve(k);
  for (const ConfidenceSet& set : sets) centers.push_back(set.center);
  pool.push_back(centers);

  std::vector<Vec> tilted(k);
  for (std::size_t i = 0; i < k; ++i) tilted[i] = linear_min(i, z);
  pool.push_back(tilted);

  std::vector<Vec> masked(k);
  for (std::size_t i = 0; i < k; ++i) masked[i] = Vec::Zero(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < k; ++i) points[i] = centers[i][j];
    const double med = lower_median(points);
    for (std::size_t i = 0; i < k; ++i) {
      if (centers[i][j] == med) {
        masked[i][j] = z[j];
        break;
      }
    }
  }
  std::vector<Vec> assigned(k);
  for (std::size_t i = 0; i < k; ++i) assigned[i] = linear_min(i, masked[i]);
  pool.push_back(assigned);

  std::vector<BoxBounds> boxes;
  boxes.reserve(k);
  for (const ConfidenceSet& set : sets) boxes.push_back(ellipsoid_box(set));
  const MedianBox relaxed = median_interval(boxes);
  Vec corner(d);
  for (Eigen::Index j = 0; j < d; ++j) corner[j] = z[j] >= 0.0 ? relaxed.m_lo[j] : relaxed.m_hi[j];
  std::vector<Vec> cornered(k);
  for (std::size_t i = 0; i < k; ++i) cornered[i] = l1_projection(i, corner, centers[i]);
  pool.push_back(cornered);

  bool converged = true;
  for (const std::vector<Vec>& start : pool) converged = alternate(start) && converged;

  PenalizedSolution solution;
  solution.selections = best.selections;
  solution.theta = coordinate_median(best.selections);
  solution.objective = solution.theta.dot(z);
  double penalty = 0.0;
  for (const Vec& sel : solution.selections) penalty += big_m * (solution.theta - sel).lpNorm<1>();
  solution.penalized_objective = solution.theta.dot(z) + penalty;
  solution.converged = converged;
  solution.iterations = total_outer;
  return solution;
}

}  // namespace stratrlhf
