#pragma once

// ============================================================================
// Bradley-Terry preference model: label probabilities, log-likelihoods, and
// dataset sampling. Option 0 of a query is preferred with probability
// sigmoid(<theta, feat0 - feat1>).
// ============================================================================

#include "stratrlhf/core.hpp"
#include "stratrlhf/env.hpp"
#include "stratrlhf/rng.hpp"

#include <span>
#include <vector>

namespace stratrlhf {

/// Numerically stable logistic function, clamped strictly inside (0, 1).
inline double stable_sigmoid(double x) {
  double p;
  if (x >= 0.0) {
    p = 1.0 / (1.0 + std::exp(-x));
  } else {
    const double e = std::exp(x);
    p = e / (1.0 + e);
  }
  const double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  return std::min(std::max(p, lo), hi);
}

/// log(sigmoid(x)) without overflow for large |x|.
inline double log_sigmoid(double x) {
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

/// Probability that option 0 of the query is preferred under parameter theta.
inline double bt_preference_prob(const Vec& theta, const ComparisonQuery& query) {
  require_input(theta.size() == query.feat0.size(), "bt_preference_prob: dimension mismatch");
  return stable_sigmoid(theta.dot(query.feat0 - query.feat1));
}

/// One labeler's comparison data. The parameter the labels were sampled from
/// is retained for diagnostics only; estimation code consumes just the query
/// features and labels.
class LabelerDataset {
 public:
  LabelerDataset(QuerySet queries, std::vector<int> labels, Vec report_param)
      : queries_(std::move(queries)),
        labels_(std::move(labels)),
        report_param_(std::move(report_param)) {
    require_input(queries_.size() == static_cast<int>(labels_.size()),
                  "LabelerDataset: query/label count mismatch");
    require_input(!labels_.empty(), "LabelerDataset: empty");
    diffs_ = queries_.diff_matrix();
  }

  const QuerySet& queries() const { return queries_; }
  const std::vector<int>& labels() const { return labels_; }
  int size() const { return static_cast<int>(labels_.size()); }
  int dim() const { return static_cast<int>(diffs_.cols()); }

  /// Rows are feature differences, one per comparison.
  const Mat& diff_matrix() const { return diffs_; }

  /// Diagnostics only: the parameter that generated these labels. Excluded
  /// from default serialization and never read by estimation.
  const Vec& diagnostics_report_param() const { return report_param_; }

 private:
  QuerySet queries_;
  std::vector<int> labels_;
  Mat diffs_;
  Vec report_param_;
};

/// Labels for the given queries using externally supplied uniforms, one per
/// query (label 0 iff u < p). Lets callers share label noise across reports.
inline std::vector<int> sample_labels(const Vec& report_param, const QuerySet& queries,
                                      std::span<const double> uniforms) {
  require_input(uniforms.size() == queries.queries.size(),
                "sample_labels: one uniform draw per query required");
  std::vector<int> labels(queries.queries.size());
  for (std::size_t j = 0; j < queries.queries.size(); ++j) {
    const double p = bt_preference_prob(report_param, queries.queries[j]);
    labels[j] = uniforms[j] < p ? 0 : 1;
  }
  return labels;
}

/// Samples a full preference dataset from the report parameter's BT model.
inline LabelerDataset sample_dataset(const Vec& report_param, const QuerySet& queries, Rng& rng) {
  require_input(!queries.queries.empty(), "sample_dataset: empty query set");
  std::vector<double> uniforms(queries.queries.size());
  for (double& u : uniforms) u = rng.uniform01();
  return LabelerDataset(queries, sample_labels(report_param, queries, uniforms), report_param);
}

/// Mean BT log-likelihood of labeled diffs under theta. `signs` holds +1 for
/// label 0 and -1 for label 1.
inline double bt_mean_loglik(const Mat& diffs, const Vec& signs, const Vec& theta) {
  const Vec margins = (diffs * theta).cwiseProduct(signs);
  double total = 0.0;
  for (Eigen::Index j = 0; j < margins.size(); ++j) total += log_sigmoid(margins[j]);
  return total / static_cast<double>(margins.size());
}

inline Vec label_signs(const std::vector<int>& labels) {
  Vec signs(static_cast<Eigen::Index>(labels.size()));
  for (std::size_t j = 0; j < labels.size(); ++j) signs[static_cast<Eigen::Index>(j)] = labels[j] == 0 ? 1.0 : -1.0;
  return signs;
}

}  // namespace stratrlhf
