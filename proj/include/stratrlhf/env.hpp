#pragma once

// ============================================================================
// Synthetic environment: problem instances (ground-truth reward parameters)
// and per-labeler comparison query sets over a d-dimensional feature space.
// ============================================================================

#include "stratrlhf/core.hpp"
#include "stratrlhf/rng.hpp"

#include <string>
#include <vector>

namespace stratrlhf {

/// How per-option feature vectors are drawn.
enum class Sampler {
  uniform,    ///< each coordinate uniform on [-L/sqrt(d), L/sqrt(d)]
  hypercube,  ///< each coordinate a fair coin over {-L/sqrt(d), +L/sqrt(d)}
};

inline std::string to_string(Sampler s) {
  return s == Sampler::uniform ? "uniform" : "hypercube";
}

inline Sampler sampler_from_string(const std::string& name) {
  if (name == "uniform") return Sampler::uniform;
  if (name == "hypercube") return Sampler::hypercube;
  throw ConfigError("unknown sampler '" + name + "' (expected uniform|hypercube)");
}

struct InstanceConfig {
  int d = 16;               ///< feature dimension
  int k = 5;                ///< number of labelers
  int n = 100;              ///< comparisons per labeler
  double B = 1.0;           ///< reward-parameter norm bound
  double L = 1.0;           ///< feature norm bound
  std::uint64_t seed = 0;   ///< master seed for this instance
  double gt_mean = 0.0;     ///< mean of each ground-truth coordinate
  double gt_scale = -1.0;   ///< sd of each ground-truth coordinate; <0 means B/sqrt(d)
  Sampler sampler = Sampler::uniform;

  double resolved_gt_scale() const {
    return gt_scale >= 0.0 ? gt_scale : B / std::sqrt(static_cast<double>(d));
  }

  void validate() const {
    require_config(d >= 1, "instance.d must be >= 1");
    require_config(k >= 1, "instance.k must be >= 1");
    require_config(n >= 1, "instance.n must be >= 1");
    require_config(B > 0.0, "instance.B must be > 0");
    require_config(L > 0.0, "instance.L must be > 0");
  }
};

/// A single pairwise comparison: two feature vectors presented to a labeler.
/// Query features are immutable once generated; a labeler's strategy can only
/// change the parameter its labels are sampled from.
struct ComparisonQuery {
  Vec feat0;
  Vec feat1;

  Vec diff() const { return feat0 - feat1; }
};

struct QuerySet {
  std::vector<ComparisonQuery> queries;

  int size() const { return static_cast<int>(queries.size()); }

  /// Rows are feature differences feat0 - feat1, one per query.
  Mat diff_matrix() const {
    require_input(!queries.empty(), "QuerySet: empty");
    Mat X(static_cast<Eigen::Index>(queries.size()), queries.front().feat0.size());
    for (std::size_t j = 0; j < queries.size(); ++j) {
      X.row(static_cast<Eigen::Index>(j)) = (queries[j].feat0 - queries[j].feat1).transpose();
    }
    return X;
  }
};

struct ProblemInstance {
  InstanceConfig config;
  std::vector<Vec> true_params;     ///< k ground-truth parameters, each norm <= B
  std::vector<QuerySet> query_sets; ///< k query sets, each of size n
};

/// Draws the k ground-truth parameters: coordinate-wise Gaussian around
/// gt_mean with sd gt_scale, projected onto the B-ball.
inline ProblemInstance generate_instance(const InstanceConfig& config, Rng& rng) {
  config.validate();
  ProblemInstance instance;
  instance.config = config;
  const double scale = config.resolved_gt_scale();
  instance.true_params.reserve(config.k);
  for (int i = 0; i < config.k; ++i) {
    Vec theta(config.d);
    for (int j = 0; j < config.d; ++j) theta[j] = config.gt_mean + scale * rng.normal();
    instance.true_params.push_back(project_ball(theta, config.B));
  }
  return instance;
}

inline Vec sample_option_features(const InstanceConfig& config, Rng& rng) {
  const double coord = config.L / std::sqrt(static_cast<double>(config.d));
  Vec v(config.d);
  for (int j = 0; j < config.d; ++j) {
    v[j] = config.sampler == Sampler::uniform ? rng.uniform(-coord, coord)
                                              : coord * rng.rademacher();
  }
  return v;
}

/// Draws the k query sets (n comparisons each). Every option feature vector
/// has 2-norm <= L by construction.
inline std::vector<QuerySet> generate_queries(const ProblemInstance& instance, Rng& rng) {
  std::vector<QuerySet> sets(instance.config.k);
  for (int i = 0; i < instance.config.k; ++i) {
    sets[i].queries.reserve(instance.config.n);
    for (int j = 0; j < instance.config.n; ++j) {
      ComparisonQuery q;
      q.feat0 = sample_option_features(instance.config, rng);
      q.feat1 = sample_option_features(instance.config, rng);
      sets[i].queries.push_back(std::move(q));
    }
  }
  return sets;
}

/// Convenience: instance + queries from the config's own seed.
inline ProblemInstance sample_instance(const InstanceConfig& config) {
  Rng param_rng(derive_seed(config.seed, {0x1157a9ce5ULL}));
  ProblemInstance instance = generate_instance(config, param_rng);
  Rng query_rng(derive_seed(config.seed, {0x9e37ULL, 0x51ULL}));
  instance.query_sets = generate_queries(instance, query_rng);
  return instance;
}

}  // namespace stratrlhf
