#include <catch2/catch_amalgamated.hpp>

#include "stratrlhf/mdp.hpp"

#include <cmath>
#include <utility>
#include <vector>

using namespace stratrlhf;
using Catch::Approx;

namespace {

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

Mat stochastic_rows(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    double total = 0.0;
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = 0.05 + rng.uniform01();
      total += m(r, c);
    }
    m.row(r) /= total;
  }
  return m;
}

TabularMdp random_mdp(Rng& rng, int S, int A, int H, int d) {
  TabularMdp mdp;
  mdp.S = S;
  mdp.A = A;
  mdp.H = H;
  mdp.L = 1.0;
  for (int h = 0; h < H; ++h) mdp.P.push_back(stochastic_rows(rng, S * A, S));
  Vec rho(S);
  double total = 0.0;
  for (int s = 0; s < S; ++s) {
    rho[s] = 0.1 + rng.uniform01();
    total += rho[s];
  }
  mdp.rho = rho / total;
  // Fix the normalization residual on the first coordinate so the strict
  // sum-to-one validation holds exactly.
  mdp.rho[0] += 1.0 - mdp.rho.sum();
  for (int i = 0; i < S * A; ++i) {
    Vec f(d);
    for (int j = 0; j < d; ++j) f[j] = rng.uniform(-0.5, 0.5);
    if (f.norm() > 1.0) f /= f.norm();
    mdp.phi.push_back(f);
  }
  for (Mat& p_h : mdp.P) {
    for (Eigen::Index r = 0; r < p_h.rows(); ++r) p_h(r, 0) += 1.0 - p_h.row(r).sum();
  }
  return mdp;
}

MdpPolicy random_stochastic_policy(Rng& rng, const TabularMdp& mdp) {
  MdpPolicy policy;
  for (int h = 0; h < mdp.H; ++h) policy.push_back(stochastic_rows(rng, mdp.S, mdp.A));
  return policy;
}

/// Deterministic single-action policy table.
MdpPolicy constant_policy(const TabularMdp& mdp, int action) {
  MdpPolicy policy(mdp.H, Mat::Zero(mdp.S, mdp.A));
  for (int h = 0; h < mdp.H; ++h) {
    for (int s = 0; s < mdp.S; ++s) policy[h](s, action) = 1.0;
  }
  return policy;
}

MedianBox signed_box(Rng& rng, Eigen::Index d) {
  Vec lo(d);
  Vec hi(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double side = rng.rademacher();
    const double a = 0.1 + 0.4 * rng.uniform01();
    const double b = a + 0.4 * rng.uniform01();
    lo[j] = side > 0 ? a : -b;
    hi[j] = side > 0 ? b : -a;
  }
  return MedianBox{lo, hi, 3};
}

}  // namespace

// ----------------------------------------------------------------------------
// Occupancy measures
// ----------------------------------------------------------------------------

TEST_CASE("a one-step MDP reduces to the bandit average", "[mdp]") {
  TabularMdp mdp;
  mdp.S = 2;
  mdp.A = 2;
  mdp.H = 1;
  mdp.P = {Mat::Constant(4, 2, 0.5)};
  mdp.rho = vec2(0.3, 0.7);
  mdp.phi = {vec2(0.6, 0.0), vec2(0.0, 0.8), vec2(-0.6, 0.3), vec2(0.5, 0.5)};
  mdp.validate();

  MdpPolicy policy(1, Mat::Zero(2, 2));
  policy[0](0, 1) = 1.0;  // state 0 takes action 1
  policy[0](1, 0) = 1.0;  // state 1 takes action 0
  const OccupancyMeasure occ = occupancy(mdp, policy);
  const Vec expected = 0.3 * mdp.phi[1] + 0.7 * mdp.phi[2];
  REQUIRE((occ.feat - expected).lpNorm<Eigen::Infinity>() <= 1e-15);
  REQUIRE(occ.q[0](0, 1) == Approx(0.3));
  REQUIRE(occ.q[0](1, 0) == Approx(0.7));
  REQUIRE(occ.q[0].sum() == Approx(1.0).margin(1e-12));
}

TEST_CASE("a deterministic chain visits one state per step", "[mdp]") {
  TabularMdp mdp;
  mdp.S = 3;
  mdp.A = 2;
  mdp.H = 3;
  for (int h = 0; h < 3; ++h) {
    Mat p = Mat::Zero(6, 3);
    for (int s = 0; s < 3; ++s) {
      for (int a = 0; a < 2; ++a) p(mdp.sa_index(s, a), std::min(s + 1, 2)) = 1.0;
    }
    mdp.P.push_back(p);
  }
  mdp.rho = Vec::Zero(3);
  mdp.rho[0] = 1.0;
  for (int i = 0; i < 6; ++i) mdp.phi.push_back(vec2(0.1 * (i + 1), -0.05 * i));
  mdp.validate();

  const OccupancyMeasure occ = occupancy(mdp, constant_policy(mdp, 0));
  for (int h = 0; h < 3; ++h) {
    REQUIRE(occ.q[h](h, 0) == 1.0);
    REQUIRE(occ.q[h].sum() == Approx(1.0).margin(1e-12));
  }
  const Vec expected =
      (mdp.phi[mdp.sa_index(0, 0)] + mdp.phi[mdp.sa_index(1, 0)] + mdp.phi[mdp.sa_index(2, 0)]) /
      3.0;
  REQUIRE((occ.feat - expected).lpNorm<Eigen::Infinity>() <= 1e-15);
}

TEST_CASE("occupancy features match a Monte-Carlo rollout", "[mdp]") {
  Rng rng(derive_seed(0x3d9, {1}));
  const TabularMdp mdp = random_mdp(rng, 3, 2, 3, 2);
  const MdpPolicy policy = random_stochastic_policy(rng, mdp);
  const OccupancyMeasure occ = occupancy(mdp, policy);

  Rng mc(derive_seed(0x3d9, {2}));
  Vec estimate = Vec::Zero(2);
  const int episodes = 100000;
  for (int e = 0; e < episodes; ++e) {
    int s = 0;
    {
      const double u = mc.uniform01();
      double acc = 0.0;
      for (int c = 0; c < mdp.S; ++c) {
        acc += mdp.rho[c];
        if (u < acc) {
          s = c;
          break;
        }
        s = mdp.S - 1;
      }
    }
    for (int h = 0; h < mdp.H; ++h) {
      int a = 0;
      const double u = mc.uniform01();
      double acc = 0.0;
      for (int c = 0; c < mdp.A; ++c) {
        acc += policy[h](s, c);
        if (u < acc) {
          a = c;
          break;
        }
        a = mdp.A - 1;
      }
      estimate += mdp.phi[mdp.sa_index(s, a)] / mdp.H;
      const double v = mc.uniform01();
      double pacc = 0.0;
      int next = mdp.S - 1;
      for (int c = 0; c < mdp.S; ++c) {
        pacc += mdp.P[h](mdp.sa_index(s, a), c);
        if (v < pacc) {
          next = c;
          break;
        }
      }
      s = next;
    }
  }
  estimate /= static_cast<double>(episodes);
  REQUIRE((estimate - occ.feat).norm() <= 0.01);
}

TEST_CASE("occupancy rejects malformed policies", "[mdp]") {
  Rng rng(derive_seed(0x3d9, {3}));
  const TabularMdp mdp = random_mdp(rng, 2, 2, 2, 2);
  REQUIRE_THROWS_AS(occupancy(mdp, MdpPolicy(1, Mat::Constant(2, 2, 0.5))), InputError);
  REQUIRE_THROWS_AS(occupancy(mdp, MdpPolicy(2, Mat::Constant(2, 2, 0.7))), InputError);
  MdpPolicy negative(2, Mat::Constant(2, 2, 0.5));
  negative[0](0, 0) = -0.5;
  negative[0](0, 1) = 1.5;
  REQUIRE_THROWS_AS(occupancy(mdp, negative), InputError);
}

TEST_CASE("tabular MDPs validate their shape", "[mdp]") {
  Rng rng(derive_seed(0x3d9, {4}));
  TabularMdp mdp = random_mdp(rng, 2, 2, 2, 2);
  mdp.validate();

  TabularMdp bad_rho = mdp;
  bad_rho.rho[0] += 0.1;
  REQUIRE_THROWS_AS(bad_rho.validate(), InputError);

  TabularMdp bad_row = mdp;
  bad_row.P[0](0, 0) += 0.2;
  REQUIRE_THROWS_AS(bad_row.validate(), InputError);

  TabularMdp bad_phi = mdp;
  bad_phi.phi[0] = vec2(3.0, 0.0);
  REQUIRE_THROWS_AS(bad_phi.validate(), InputError);

  TabularMdp bad_horizon = mdp;
  bad_horizon.P.pop_back();
  REQUIRE_THROWS_AS(bad_horizon.validate(), InputError);
}

TEST_CASE("exact occupancies satisfy the flow conditions", "[mdp]") {
  Rng rng(derive_seed(0x3d9, {5}));
  for (int trial = 0; trial < 10; ++trial) {
    const TabularMdp mdp = random_mdp(rng, 3, 2, 4, 2);
    const OccupancyMeasure occ = occupancy(mdp, random_stochastic_policy(rng, mdp));
    REQUIRE(flow_violation(mdp, occ.q) <= 1e-12);
    for (const Mat& q_h : occ.q) {
      REQUIRE(q_h.sum() == Approx(1.0).margin(1e-12));
      REQUIRE(q_h.minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("flow repair restores feasibility and keeps exact tables", "[mdp]") {
  Rng rng(derive_seed(0x3d9, {6}));
  const TabularMdp mdp = random_mdp(rng, 3, 2, 3, 2);

  // Arbitrary noisy tables (including a negative entry) become feasible.
  std::vector<Mat> noisy;
  for (int h = 0; h < mdp.H; ++h) noisy.push_back(stochastic_rows(rng, 3, 2) * 0.4);
  noisy[0](0, 0) = -0.3;
  detail::flow_repair(mdp, noisy);
  REQUIRE(flow_violation(mdp, noisy) <= 1e-9);
  for (const Mat& q_h : noisy) REQUIRE(q_h.minCoeff() >= 0.0);

  // An already-exact occupancy passes through unchanged.
  std::vector<Mat> exact = occupancy(mdp, random_stochastic_policy(rng, mdp)).q;
  std::vector<Mat> repaired = exact;
  detail::flow_repair(mdp, repaired);
  for (int h = 0; h < mdp.H; ++h) {
    REQUIRE((repaired[h] - exact[h]).lpNorm<Eigen::Infinity>() <= 1e-12);
  }

  // A dead row is revived as the uniform action split over its inflow.
  std::vector<Mat> dead = exact;
  dead[0].row(0).setZero();
  detail::flow_repair(mdp, dead);
  REQUIRE(dead[0](0, 0) == Approx(mdp.rho[0] / 2.0).margin(1e-12));
  REQUIRE(flow_violation(mdp, dead) <= 1e-9);
}

// ----------------------------------------------------------------------------
// Trajectory features
// ----------------------------------------------------------------------------

TEST_CASE("trajectory features sum per-step differences", "[mdp]") {
  TabularMdp mdp;
  mdp.S = 2;
  mdp.A = 2;
  mdp.H = 2;
  mdp.phi = {vec2(0.6, 0.0), vec2(0.0, 0.8), vec2(-0.6, 0.3), vec2(0.5, 0.5)};

  const Trajectory same = {{0, 0}, {1, 1}};
  REQUIRE(trajectory_features(mdp, same, same).isZero(0.0));

  const Trajectory other = {{0, 1}, {1, 0}};
  const Vec x = trajectory_features(mdp, same, other);
  REQUIRE(x[0] == Approx(0.6 + 0.5 - 0.0 - (-0.6)).margin(1e-12));
  REQUIRE(x[1] == Approx(0.0 + 0.5 - 0.8 - 0.3).margin(1e-12));

  // One-step trajectories reduce to the bandit feature difference.
  const Vec bandit = trajectory_features(mdp, {{0, 0}}, {{0, 1}});
  REQUIRE((bandit - (mdp.phi[0] - mdp.phi[1])).lpNorm<Eigen::Infinity>() == 0.0);

  REQUIRE_THROWS_AS(trajectory_features(mdp, same, {{0, 0}}), InputError);
  REQUIRE_THROWS_AS(trajectory_features(mdp, same, Trajectory{{1, 0}, {1, 1}}), InputError);
  REQUIRE_THROWS_AS(trajectory_features(mdp, {}, {}), InputError);
}

TEST_CASE("trajectory queries are reproducible and bounded", "[mdp]") {
  Rng rng(derive_seed(0x3d9, {7}));
  const TabularMdp mdp = random_mdp(rng, 3, 2, 3, 2);

  Rng draws_a(derive_seed(0x3d9, {9}));
  Rng draws_b(derive_seed(0x3d9, {9}));
  const QuerySet qs_a = sample_trajectory_queries(mdp, 25, draws_a);
  const QuerySet qs_b = sample_trajectory_queries(mdp, 25, draws_b);
  REQUIRE(qs_a.queries.size() == 25);
  for (std::size_t i = 0; i < qs_a.queries.size(); ++i) {
    REQUIRE((qs_a.queries[i].feat0 - qs_b.queries[i].feat0).lpNorm<Eigen::Infinity>() == 0.0);
    REQUIRE((qs_a.queries[i].feat1 - qs_b.queries[i].feat1).lpNorm<Eigen::Infinity>() == 0.0);
    REQUIRE(qs_a.queries[i].feat0.norm() <= mdp.H * mdp.L + 1e-9);
    REQUIRE(qs_a.queries[i].diff().size() == 2);
  }
}

// ----------------------------------------------------------------------------
// Pessimistic-median optimization
// ----------------------------------------------------------------------------

TEST_CASE("a one-step instance recovers the best pessimistic action", "[mdp]") {
  TabularMdp mdp;
  mdp.S = 1;
  mdp.A = 2;
  mdp.H = 1;
  mdp.P = {Mat::Constant(2, 1, 1.0)};
  mdp.rho = Vec::Ones(1);
  mdp.phi = {vec2(0.8, 0.2), vec2(0.2, 0.6)};
  MedianBox mbox;
  mbox.m_lo = vec2(0.5, 0.1);
  mbox.m_hi = vec2(1.0, 0.3);
  mbox.k = 3;

  const MdpPolicyResult result = optimize_mdp_pessimistic_median(mdp, mbox);
  const double action_0 = box_min_value(mdp.phi[0], mbox.m_lo, mbox.m_hi);
  const double action_1 = box_min_value(mdp.phi[1], mbox.m_lo, mbox.m_hi);
  REQUIRE(action_0 == Approx(0.8 * 0.5 + 0.2 * 0.1));
  REQUIRE(result.value == Approx(std::max(action_0, action_1)).margin(1e-12));
  REQUIRE(result.path == "enumeration");
  REQUIRE((result.occ.feat - mdp.phi[0]).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("a straddling box is neutralized by a balanced policy", "[mdp]") {
  TabularMdp mdp;
  mdp.S = 1;
  mdp.A = 2;
  mdp.H = 2;
  mdp.P = {Mat::Constant(2, 1, 1.0), Mat::Constant(2, 1, 1.0)};
  mdp.rho = Vec::Ones(1);
  mdp.phi = {Vec::Constant(1, 0.5), Vec::Constant(1, -0.5)};
  MedianBox mbox;
  mbox.m_lo = Vec::Constant(1, -1.0);
  mbox.m_hi = Vec::Constant(1, 1.0);
  mbox.k = 1;

  const MdpPolicyResult result = optimize_mdp_pessimistic_median(mdp, mbox);
  // Any nonzero feature pays the straddling penalty, so the alternating
  // policy (one step of each action) with zero net feature is optimal.
  REQUIRE(result.value == Approx(0.0).margin(1e-15));
  REQUIRE(std::abs(result.occ.feat[0]) <= 1e-12);
  REQUIRE(result.enumeration_value.has_value());
}

TEST_CASE("enumeration and gradient paths agree on signed boxes", "[mdp]") {
  Rng rng(derive_seed(0x3d9, {10}));
  for (int trial = 0; trial < 10; ++trial) {
    const TabularMdp mdp = random_mdp(rng, 2, 2, 2, 2);
    const MedianBox mbox = signed_box(rng, 2);
    MdpOptimizeOptions options;
    options.path = MdpOptimizeOptions::Path::both;
    options.seed = derive_seed(0x3d9, {11, static_cast<std::uint64_t>(trial)});
    const MdpPolicyResult result = optimize_mdp_pessimistic_median(mdp, mbox, options);
    REQUIRE(result.enumeration_value.has_value());
    REQUIRE(result.gradient_value.has_value());
    REQUIRE(*result.gradient_value == Approx(*result.enumeration_value).margin(1e-4));
    REQUIRE(result.value >= *result.enumeration_value - 1e-15);
    REQUIRE(flow_violation(mdp, result.occ.q) <= 1e-9);
  }
}

TEST_CASE("the gradient path's incumbent value never decreases", "[mdp]") {
  Rng rng(derive_seed(0x3d9, {12}));
  const TabularMdp mdp = random_mdp(rng, 3, 2, 3, 2);
  MedianBox mbox;
  mbox.m_lo = vec2(-0.4, 0.1);  // first coordinate straddles zero
  mbox.m_hi = vec2(0.6, 0.5);
  mbox.k = 3;

  std::vector<double> trace;
  MdpOptimizeOptions options;
  options.path = MdpOptimizeOptions::Path::gradient_only;
  options.restarts = 1;
  options.gradient_iterations = 400;
  options.value_trace = &trace;
  const MdpPolicyResult result = optimize_mdp_pessimistic_median(mdp, mbox, options);
  REQUIRE(trace.size() >= 2);
  for (std::size_t i = 1; i < trace.size(); ++i) REQUIRE(trace[i] >= trace[i - 1] - 1e-12);
  REQUIRE(result.gradient_value.has_value());
  REQUIRE(*result.gradient_value >= trace.back() - 1e-12);
}

TEST_CASE("directional derivatives match finite differences", "[mdp]") {
  Rng rng(derive_seed(0x3d9, {13}));
  const TabularMdp mdp = random_mdp(rng, 3, 2, 3, 2);
  const MedianBox mbox = signed_box(rng, 2);

  int checked = 0;
  for (int attempt = 0; checked < 10; ++attempt) {
    REQUIRE(attempt < 200);
    const std::vector<Mat> q = occupancy(mdp, random_stochastic_policy(rng, mdp)).q;
    const std::vector<Mat> p = occupancy(mdp, random_stochastic_policy(rng, mdp)).q;
    const Vec feat = detail::occupancy_features(mdp, q);
    if (feat.cwiseAbs().minCoeff() < 1e-3) continue;  // stay off the kink

    const std::vector<Mat> grad = detail::pessimistic_supergradient(mdp, mbox, feat);
    double expected = 0.0;
    for (int h = 0; h < mdp.H; ++h) {
      expected += (grad[h].array() * (p[h] - q[h]).array()).sum();
    }
    if (std::abs(expected) < 1e-3) continue;  // skip ill-conditioned directions

    const double eps = 1e-5;
    const auto value_at = [&](double t) {
      std::vector<Mat> mix(mdp.H);
      for (int h = 0; h < mdp.H; ++h) mix[h] = q[h] + t * (p[h] - q[h]);
      return box_min_value(detail::occupancy_features(mdp, mix), mbox.m_lo, mbox.m_hi);
    };
    const double fd = (value_at(eps) - value_at(-eps)) / (2.0 * eps);
    REQUIRE(std::abs(fd - expected) / std::abs(expected) <= 1e-5);
    ++checked;
  }
}

TEST_CASE("optimization results are reproducible", "[mdp]") {
  Rng rng(derive_seed(0x3d9, {14}));
  const TabularMdp mdp = random_mdp(rng, 3, 2, 4, 2);
  const MedianBox mbox = signed_box(rng, 2);
  MdpOptimizeOptions options;
  options.path = MdpOptimizeOptions::Path::gradient_only;
  options.seed = 99;
  const MdpPolicyResult first = optimize_mdp_pessimistic_median(mdp, mbox, options);
  const MdpPolicyResult second = optimize_mdp_pessimistic_median(mdp, mbox, options);
  REQUIRE(first.value == second.value);
  REQUIRE((first.occ.feat - second.occ.feat).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("oversized enumeration requests are refused", "[mdp]") {
  Rng rng(derive_seed(0x3d9, {15}));
  const TabularMdp mdp = random_mdp(rng, 3, 2, 3, 2);  // 2^9 deterministic policies
  const MedianBox mbox = signed_box(rng, 2);
  MdpOptimizeOptions options;
  options.enumeration_cap = 100;
  options.path = MdpOptimizeOptions::Path::enumerate_only;
  REQUIRE_THROWS_AS(optimize_mdp_pessimistic_median(mdp, mbox, options), CapacityError);
  options.path = MdpOptimizeOptions::Path::both;
  REQUIRE_THROWS_AS(optimize_mdp_pessimistic_median(mdp, mbox, options), CapacityError);
  // The automatic path falls back to the gradient method instead.
  options.path = MdpOptimizeOptions::Path::automatic;
  const MdpPolicyResult result = optimize_mdp_pessimistic_median(mdp, mbox, options);
  REQUIRE(result.path == "gradient");
  REQUIRE_FALSE(result.enumeration_value.has_value());
}

TEST_CASE("dimension mismatches between box and features are rejected", "[mdp]") {
  Rng rng(derive_seed(0x3d9, {16}));
  const TabularMdp mdp = random_mdp(rng, 2, 2, 2, 2);
  MedianBox mbox;
  mbox.m_lo = Vec::Constant(3, -0.1);
  mbox.m_hi = Vec::Constant(3, 0.5);
  mbox.k = 1;
  REQUIRE_THROWS_AS(optimize_mdp_pessimistic_median(mdp, mbox), InputError);
}
