#pragma once

// ============================================================================
// Per-labeler estimation: ridge-regularized Bradley-Terry MLE over the B-ball
// (projected gradient ascent with Armijo backtracking), data covariance,
// confidence ellipsoids, their tight axis-aligned boxes, and coverage
// coefficients of the resulting data geometry.
// ============================================================================

#include "stratrlhf/core.hpp"
#include "stratrlhf/preference.hpp"

#include <optional>
#include <vector>

namespace stratrlhf {

/// Default ridge weight (d + log(1/delta)) / n.
inline double default_ridge(int d, int n, double delta) {
  require_config(delta > 0.0 && delta < 1.0, "delta must lie in (0,1)");
  return (static_cast<double>(d) + std::log(1.0 / delta)) / static_cast<double>(n);
}

struct MleFit {
  Vec theta_hat;    ///< maximizer of the regularized mean log-likelihood, norm <= B
  Mat cov;          ///< (1/n) * sum of diff outer products
  double reg = 0.0; ///< ridge weight lambda
  int n = 0;
  bool converged = false;
  double grad_norm = 0.0; ///< final projected-gradient norm
  int iterations = 0;
};

struct MleOptions {
  double B = 1.0;
  double reg = -1.0;  ///< <0 means default_ridge(d, n, delta)
  double tol = 1e-8;
  int max_iter = 5000;
  double delta = 0.1;                   ///< only feeds the default ridge
  const Vec* warm_start = nullptr;      ///< optional initial iterate
  std::vector<double>* trace = nullptr; ///< optional per-iterate objective log
};

namespace detail {

/// Largest eigenvalue of a symmetric PSD matrix via power iteration.
inline double spectral_norm_psd(const Mat& m) {
  const Eigen::Index d = m.rows();
  Vec v = Vec::Ones(d).normalized();
  double lambda = 0.0;
  for (int it = 0; it < 50; ++it) {
    Vec w = m * v;
    const double norm = w.norm();
    if (norm <= 0.0) return 0.0;
    v = w / norm;
    lambda = norm;
  }
  return lambda;
}

struct LogisticSolveResult {
  Vec theta;
  bool converged = false;
  double grad_norm = 0.0;
  int iterations = 0;
};

/// Maximizes mean-loglik(theta) - reg/2 * |theta|^2 over the B-ball.
/// `signs` holds +1 per label-0 comparison and -1 per label-1 comparison.
/// `smoothness` is an upper bound on the objective Hessian's spectral norm;
/// pass a cached value when fitting many label vectors over the same queries.
inline LogisticSolveResult solve_logistic(const Mat& diffs, const Vec& signs, double B,
                                          double reg, double tol, int max_iter,
                                          const Vec* warm_start,
                                          std::vector<double>* trace,
                                          double smoothness = -1.0) {
  const Eigen::Index n = diffs.rows();
  const Eigen::Index d = diffs.cols();
  const double inv_n = 1.0 / static_cast<double>(n);

  if (smoothness <= 0.0) {
    smoothness = 0.25 * spectral_norm_psd(diffs.transpose() * diffs * inv_n) + reg;
  }

  const auto objective = [&](const Vec& theta) {
    return bt_mean_loglik(diffs, signs, theta) - 0.5 * reg * theta.squaredNorm();
  };
  const auto gradient = [&](const Vec& theta) -> Vec {
    const Vec margins = (diffs * theta).cwiseProduct(signs);
    Vec weights(n);
    for (Eigen::Index j = 0; j < n; ++j) weights[j] = signs[j] * stable_sigmoid(-margins[j]) * inv_n;
    return diffs.transpose() * weights - reg * theta;
  };

  LogisticSolveResult result;
  result.theta = warm_start ? project_ball(*warm_start, B) : Vec::Zero(d);
  double f = objective(result.theta);
  if (trace) trace->push_back(f);

  // Damped-Newton fast path on the unconstrained penalized objective. The
  // ridge keeps the Hessian negative definite, so a line-searched Newton
  // iterate converges in a handful of steps when the optimum lies inside the
  // ball; the projected-gradient loop below then certifies the same
  // gradient-mapping tolerance (and takes over whenever an iterate would
  // leave the ball or a step fails).
  const int newton_budget = std::min(30, std::max(0, max_iter - 1));
  for (int it = 0; it < newton_budget; ++it) {
    const Vec grad = gradient(result.theta);
    if (grad.norm() <= 0.5 * tol) break;
    const Vec margins = (diffs * result.theta).cwiseProduct(signs);
    Vec weights(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double p = stable_sigmoid(margins[j]);
      weights[j] = p * (1.0 - p) * inv_n;
    }
    Mat hess = diffs.transpose() * weights.asDiagonal() * diffs;
    hess.diagonal().array() += reg;
    Eigen::LDLT<Mat> ldlt(hess);
    if (ldlt.info() != Eigen::Success) break;
    const Vec direction = ldlt.solve(grad);
    double t = 1.0;
    bool accepted = false;
    Vec candidate;
    double f_candidate = 0.0;
    for (int back = 0; back < 30; ++back) {
      candidate = result.theta + t * direction;
      f_candidate = objective(candidate);
      if (f_candidate >= f + 1e-4 * t * grad.dot(direction)) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted || candidate.norm() > B) break;
    result.theta = std::move(candidate);
    f = f_candidate;
    if (trace) trace->push_back(f);
    ++result.iterations;
  }

  double step = 1.0 / std::max(smoothness, 1e-12);
  for (int it = result.iterations; it < max_iter; ++it) {
    const Vec grad = gradient(result.theta);
    Vec candidate;
    double f_candidate = 0.0;
    bool accepted = false;
    for (int back = 0; back < 60; ++back) {
      candidate = project_ball(result.theta + step * grad, B);
      f_candidate = objective(candidate);
      const double predicted = grad.dot(candidate - result.theta);
      if (f_candidate >= f + 1e-4 * predicted) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    result.iterations = it + 1;
    if (!accepted) {
      result.grad_norm = grad.norm();
      break;
    }
    const double mapping_norm = (candidate - result.theta).norm() / step;
    result.theta = candidate;
    f = f_candidate;
    if (trace) trace->push_back(f);
    result.grad_norm = mapping_norm;
    if (mapping_norm <= tol) {
      result.converged = true;
      break;
    }
    step = std::min(step * 2.0, 1.0 / std::max(smoothness, 1e-12) * 16.0);
  }
  return result;
}

}  // namespace detail

/// Fits the ridge-regularized BT MLE on one labeler's dataset.
inline MleFit fit_mle(const LabelerDataset& dataset, const MleOptions& options = {}) {
  require_input(dataset.size() >= 1, "fit_mle: empty dataset");
  const Mat& diffs = dataset.diff_matrix();
  const int n = dataset.size();
  const int d = dataset.dim();
  const double reg = options.reg >= 0.0 ? options.reg : default_ridge(d, n, options.delta);

  MleFit fit;
  fit.cov = diffs.transpose() * diffs / static_cast<double>(n);
  fit.reg = reg;
  fit.n = n;

  const Vec signs = label_signs(dataset.labels());
  const double smoothness = 0.25 * detail::spectral_norm_psd(fit.cov) + reg;
  auto solved = detail::solve_logistic(diffs, signs, options.B, reg, options.tol,
                                       options.max_iter, options.warm_start, options.trace,
                                       smoothness);
  fit.theta_hat = std::move(solved.theta);
  fit.converged = solved.converged;
  fit.grad_norm = solved.grad_norm;
  fit.iterations = solved.iterations;
  return fit;
}

/// Confidence radius c_f * (1/gamma) * sqrt((d + log(k/delta)) / n) with
/// gamma = 1 / (2 + exp(-H*L*B) + exp(H*L*B)); H = 1 for the bandit case.
inline double confidence_radius(int d, int n, int k, double delta, double B, double L,
                                int H = 1, double c_f = 0.5) {
  require_config(delta > 0.0 && delta < 1.0, "confidence_radius: delta must lie in (0,1)");
  require_input(d >= 1 && n >= 1 && k >= 1 && H >= 1, "confidence_radius: counts must be positive");
  require_input(B > 0.0 && L > 0.0 && c_f >= 0.0, "confidence_radius: scales must be positive");
  const double hlb = static_cast<double>(H) * L * B;
  const double inv_gamma = 2.0 + std::exp(-hlb) + std::exp(hlb);
  return c_f * inv_gamma *
         std::sqrt((static_cast<double>(d) + std::log(static_cast<double>(k) / delta)) /
                   static_cast<double>(n));
}

/// Ellipsoid {theta : |theta - center|_{cov + reg*I} <= radius}.
struct ConfidenceSet {
  Vec center;
  Mat cov;
  double reg = 0.0;
  double radius = 0.0;

  Mat metric() const {
    return cov + reg * Mat::Identity(cov.rows(), cov.cols());
  }

  bool contains(const Vec& theta, double tol = 1e-12) const {
    const Vec delta = theta - center;
    const double dist = std::sqrt(std::max(0.0, delta.dot(metric() * delta)));
    return dist <= radius + tol;
  }
};

inline ConfidenceSet make_confidence_set(const MleFit& fit, double radius) {
  require_input(radius >= 0.0, "make_confidence_set: radius must be nonnegative");
  return ConfidenceSet{fit.theta_hat, fit.cov, fit.reg, radius};
}

namespace detail {

/// LDLT of a symmetric matrix, rejecting anything that is not strictly
/// positive definite (Eigen's isPositive accepts singular PSD matrices).
inline Eigen::LDLT<Mat> pd_ldlt(const Mat& m, const char* who) {
  Eigen::LDLT<Mat> ldlt(m);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      !(ldlt.vectorD().array() > 0.0).all()) {
    throw NumericError(std::string(who) + ": metric matrix is not positive definite");
  }
  return ldlt;
}

/// Diagonal of M^{-1} for symmetric positive-definite M.
inline Vec inverse_diagonal(const Mat& m) {
  const Eigen::LDLT<Mat> ldlt = pd_ldlt(m, "inverse_diagonal");
  const Mat inverse = ldlt.solve(Mat::Identity(m.rows(), m.cols()));
  return inverse.diagonal();
}

}  // namespace detail

/// Per-coordinate half-widths radius * sqrt((M^{-1})_jj) of the tight
/// axis-aligned bounding box of an ellipsoid with metric M.
inline Vec ellipsoid_halfwidths(const Mat& metric, double radius) {
  return (detail::inverse_diagonal(metric) * radius * radius).cwiseMax(0.0).cwiseSqrt();
}

/// Tight axis-aligned bounding box of the confidence ellipsoid.
inline BoxBounds ellipsoid_box(const ConfidenceSet& set) {
  const Vec halfwidths = ellipsoid_halfwidths(set.metric(), set.radius);
  return BoxBounds(set.center - halfwidths, set.center + halfwidths);
}

/// The point of the ellipsoid maximizing coordinate j: center + r * M^{-1}e_j
/// normalized by sqrt((M^{-1})_jj). Test hook for box tightness.
inline Vec ellipsoid_extreme_point(const ConfidenceSet& set, int j) {
  const Mat metric = set.metric();
  Eigen::LDLT<Mat> ldlt(metric);
  Vec ej = Vec::Zero(metric.rows());
  ej[j] = 1.0;
  const Vec column = ldlt.solve(ej);
  const double diag = column[j];
  if (diag <= 0.0) throw NumericError("metric matrix is not positive definite");
  return set.center + set.radius / std::sqrt(diag) * column;
}

struct CoverageResult {
  double value = 0.0;
  bool is_upper_bound = false; ///< true when the sqrt(d/lambda_min) fallback was used
};

/// |z|_{M^{-1}} with M = cov + reg*I.
inline double coverage_at(const MleFit& fit, const Vec& z) {
  const Mat metric = fit.cov + fit.reg * Mat::Identity(fit.cov.rows(), fit.cov.cols());
  const Eigen::LDLT<Mat> ldlt = detail::pd_ldlt(metric, "coverage_at");
  return std::sqrt(std::max(0.0, z.dot(ldlt.solve(z))));
}

/// max over z in [-1,1]^d of |z|_{M^{-1}}. The maximum of a convex function
/// over a box sits at a vertex; vertices are enumerated in Gray-code order
/// with O(d) updates for d <= 20, otherwise the sqrt(d / lambda_min(M))
/// upper bound is returned with a flag.
inline CoverageResult coverage_uniform(const MleFit& fit) {
  const Eigen::Index d = fit.cov.rows();
  const Mat metric = fit.cov + fit.reg * Mat::Identity(d, d);
  const Eigen::LDLT<Mat> ldlt = detail::pd_ldlt(metric, "coverage_uniform");

  if (d > 20) {
    Eigen::SelfAdjointEigenSolver<Mat> eig(metric);
    const double lambda_min = eig.eigenvalues().minCoeff();
    if (lambda_min <= 0.0) throw NumericError("coverage_uniform: metric matrix is singular");
    return {std::sqrt(static_cast<double>(d) / lambda_min), true};
  }

  const Mat inverse = ldlt.solve(Mat::Identity(d, d));
  Vec z = Vec::Ones(d);
  Vec w = inverse * z;
  double quad = z.dot(w);
  double best = quad;
  const std::uint64_t count = 1ULL << d;
  for (std::uint64_t m = 1; m < count; ++m) {
    const int j = __builtin_ctzll(m); // Gray code: flip exactly coordinate j
    quad += -4.0 * z[j] * w[j] + 4.0 * inverse(j, j);
    w -= 2.0 * z[j] * inverse.col(j);
    z[j] = -z[j];
    best = std::max(best, quad);
  }
  return {std::sqrt(std::max(0.0, best)), false};
}

}  // namespace stratrlhf
