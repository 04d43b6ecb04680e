#pragma once

// ============================================================================
// Core value types, error taxonomy, and small numeric helpers shared by every
// module in the library.
// ============================================================================

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace stratrlhf {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// ----------------------------------------------------------------------------
// Error taxonomy
// ----------------------------------------------------------------------------

/// Bad run configuration (CLI exit code 2).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed arguments to a library operation.
struct InputError : std::runtime_error {
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerically unusable inputs (singular metrics, unbounded objectives, ...).
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Instance exceeds the limits of every available solution path.
struct CapacityError : std::runtime_error {
  explicit CapacityError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require_input(bool cond, const std::string& msg) {
  if (!cond) throw InputError(msg);
}

inline void require_config(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

// ----------------------------------------------------------------------------
// Small numeric helpers
// ----------------------------------------------------------------------------

/// Sign with an exact zero case: -1, 0, or +1.
inline double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

/// Euclidean projection onto the centered ball of the given radius.
inline Vec project_ball(const Vec& v, double radius) {
  const double norm = v.norm();
  if (norm <= radius || norm == 0.0) return v;
  return v * (radius / norm);
}

/// Closed interval [lo, hi] on the real line.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Axis-aligned box given by per-coordinate bounds with lo <= hi.
struct BoxBounds {
  Vec lo;
  Vec hi;

  BoxBounds() = default;
  BoxBounds(Vec lo_in, Vec hi_in) : lo(std::move(lo_in)), hi(std::move(hi_in)) {
    require_input(lo.size() == hi.size(), "BoxBounds: bound dimensions differ");
    for (Eigen::Index j = 0; j < lo.size(); ++j) {
      require_input(lo[j] <= hi[j], "BoxBounds: lo > hi in coordinate " + std::to_string(j));
    }
  }

  Eigen::Index dim() const { return lo.size(); }

  bool contains(const Vec& x, double tol = 0.0) const {
    if (x.size() != lo.size()) return false;
    for (Eigen::Index j = 0; j < lo.size(); ++j) {
      if (x[j] < lo[j] - tol || x[j] > hi[j] + tol) return false;
    }
    return true;
  }
};

/// The policy representation lives in [-1,1]^d.
inline BoxBounds unit_hyperrectangle(int d) {
  require_input(d >= 1, "unit_hyperrectangle: dimension must be positive");
  return BoxBounds(Vec::Constant(d, -1.0), Vec::Constant(d, 1.0));
}

}  // namespace stratrlhf
