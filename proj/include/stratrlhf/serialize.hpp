#pragma once

// ============================================================================
// JSON input/output: configuration files (strict about unknown keys),
// archival of instances, datasets, fits, and tabular MDPs, and the
// experiment summary document. Key order is kept stable for reproducible
// artifacts.
// ============================================================================

#include "stratrlhf/bench.hpp"
#include "stratrlhf/core.hpp"
#include "stratrlhf/env.hpp"
#include "stratrlhf/estimation.hpp"
#include "stratrlhf/mdp.hpp"
#include "stratrlhf/preference.hpp"
#include "stratrlhf/strategic.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace stratrlhf {

using Json = nlohmann::ordered_json;

namespace detail {

inline Json vec_to_json(const Vec& v) {
  Json arr = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

inline Vec vec_from_json(const Json& j) {
  require_config(j.is_array(), "expected a numeric array");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

inline Json mat_to_json(const Mat& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec_to_json(m.row(r).transpose()));
  return rows;
}

inline Mat mat_from_json(const Json& j) {
  require_config(j.is_array() && !j.empty(), "expected a non-empty array of rows");
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = static_cast<Eigen::Index>(j[0].size());
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    require_config(static_cast<Eigen::Index>(j[r].size()) == cols, "ragged matrix rows");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

inline void check_keys(const Json& j, const std::vector<std::string>& allowed,
                       const std::string& context) {
  require_config(j.is_object(), context + ": expected an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const std::string& key : allowed) {
      if (item.key() == key) {
        known = true;
        break;
      }
    }
    require_config(known, context + ": unknown key '" + item.key() + "'");
  }
}

}  // namespace detail

// ----------------------------------------------------------------------------
// Instance configuration
// ----------------------------------------------------------------------------

inline Json to_json(const InstanceConfig& cfg) {
  Json j;
  j["d"] = cfg.d;
  j["k"] = cfg.k;
  j["n"] = cfg.n;
  j["B"] = cfg.B;
  j["L"] = cfg.L;
  j["seed"] = cfg.seed;
  j["gt_mean"] = cfg.gt_mean;
  j["gt_scale"] = cfg.gt_scale;
  j["sampler"] = to_string(cfg.sampler);
  return j;
}

inline InstanceConfig instance_config_from_json(const Json& j) {
  detail::check_keys(j, {"d", "k", "n", "B", "L", "seed", "gt_mean", "gt_scale", "sampler"},
                     "instance config");
  InstanceConfig cfg;
  if (j.contains("d")) cfg.d = j["d"].get<int>();
  if (j.contains("k")) cfg.k = j["k"].get<int>();
  if (j.contains("n")) cfg.n = j["n"].get<int>();
  if (j.contains("B")) cfg.B = j["B"].get<double>();
  if (j.contains("L")) cfg.L = j["L"].get<double>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("gt_mean")) cfg.gt_mean = j["gt_mean"].get<double>();
  if (j.contains("gt_scale")) cfg.gt_scale = j["gt_scale"].get<double>();
  if (j.contains("sampler")) cfg.sampler = sampler_from_string(j["sampler"].get<std::string>());
  return cfg;
}

// ----------------------------------------------------------------------------
// Experiment configuration
// ----------------------------------------------------------------------------

inline Json to_json(const ExperimentConfig& cfg) {
  Json j;
  j["instance"] = to_json(cfg.instance);
  j["n_grid"] = cfg.n_grid;
  j["seeds"] = cfg.seeds;
  Json algs = Json::array();
  for (Algorithm alg : cfg.algorithms) algs.push_back(to_string(alg));
  j["algorithms"] = std::move(algs);
  j["regime"] = cfg.regime;
  j["delta"] = cfg.delta;
  j["cf"] = cfg.c_f;
  Json attack;
  attack["steps"] = cfg.attack.steps;
  attack["c0"] = cfg.attack.c0;
  attack["a0"] = cfg.attack.a0;
  attack["probe_decay"] = cfg.attack.probe_decay;
  attack["step_decay"] = cfg.attack.step_decay;
  attack["seed"] = cfg.attack.seed;
  Json eval;
  eval["mode"] = to_string(cfg.attack.eval.mode);
  eval["replications"] = cfg.attack.eval.replications;
  attack["eval"] = std::move(eval);
  j["attack"] = std::move(attack);
  j["threads"] = cfg.threads;
  return j;
}

inline ExperimentConfig experiment_config_from_json(const Json& j) {
  detail::check_keys(j, {"instance", "n_grid", "seeds", "algorithms", "regime", "delta", "cf",
                         "attack", "threads"},
                     "experiment config");
  ExperimentConfig cfg;
  if (j.contains("instance")) cfg.instance = instance_config_from_json(j["instance"]);
  if (j.contains("n_grid")) cfg.n_grid = j["n_grid"].get<std::vector<int>>();
  if (j.contains("seeds")) cfg.seeds = j["seeds"].get<int>();
  if (j.contains("algorithms")) {
    cfg.algorithms.clear();
    for (const auto& name : j["algorithms"]) {
      cfg.algorithms.push_back(algorithm_from_string(name.get<std::string>()));
    }
  }
  if (j.contains("regime")) cfg.regime = j["regime"].get<std::string>();
  if (j.contains("delta")) cfg.delta = j["delta"].get<double>();
  if (j.contains("cf")) cfg.c_f = j["cf"].get<double>();
  if (j.contains("attack")) {
    const Json& attack = j["attack"];
    detail::check_keys(attack, {"steps", "c0", "a0", "probe_decay", "step_decay", "seed", "eval"},
                       "attack config");
    if (attack.contains("steps")) cfg.attack.steps = attack["steps"].get<int>();
    if (attack.contains("c0")) cfg.attack.c0 = attack["c0"].get<double>();
    if (attack.contains("a0")) cfg.attack.a0 = attack["a0"].get<double>();
    if (attack.contains("probe_decay")) cfg.attack.probe_decay = attack["probe_decay"].get<double>();
    if (attack.contains("step_decay")) cfg.attack.step_decay = attack["step_decay"].get<double>();
    if (attack.contains("seed")) cfg.attack.seed = attack["seed"].get<std::uint64_t>();
    if (attack.contains("eval")) {
      const Json& eval = attack["eval"];
      detail::check_keys(eval, {"mode", "replications"}, "attack eval config");
      if (eval.contains("mode")) {
        cfg.attack.eval.mode = eval_mode_from_string(eval["mode"].get<std::string>());
      }
      if (eval.contains("replications")) {
        cfg.attack.eval.replications = eval["replications"].get<int>();
      }
    }
  }
  if (j.contains("threads")) cfg.threads = j["threads"].get<int>();
  return cfg;
}

inline ExperimentConfig experiment_config_from_string(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& err) {
    throw ConfigError(std::string("configuration parse error: ") + err.what());
  }
  return experiment_config_from_json(j);
}

// ----------------------------------------------------------------------------
// Instances, datasets, fits
// ----------------------------------------------------------------------------

inline Json to_json(const ProblemInstance& instance) {
  Json j;
  j["config"] = to_json(instance.config);
  Json params = Json::array();
  for (const Vec& theta : instance.true_params) params.push_back(detail::vec_to_json(theta));
  j["true_params"] = std::move(params);
  Json sets = Json::array();
  for (const QuerySet& set : instance.query_sets) {
    Json queries = Json::array();
    for (const ComparisonQuery& q : set.queries) {
      Json query;
      query["feat0"] = detail::vec_to_json(q.feat0);
      query["feat1"] = detail::vec_to_json(q.feat1);
      queries.push_back(std::move(query));
    }
    sets.push_back(std::move(queries));
  }
  j["query_sets"] = std::move(sets);
  return j;
}

inline ProblemInstance problem_instance_from_json(const Json& j) {
  detail::check_keys(j, {"config", "true_params", "query_sets"}, "problem instance");
  ProblemInstance instance;
  instance.config = instance_config_from_json(j.at("config"));
  for (const auto& theta : j.at("true_params")) {
    instance.true_params.push_back(detail::vec_from_json(theta));
  }
  for (const auto& set_json : j.at("query_sets")) {
    QuerySet set;
    for (const auto& query_json : set_json) {
      detail::check_keys(query_json, {"feat0", "feat1"}, "comparison query");
      ComparisonQuery q;
      q.feat0 = detail::vec_from_json(query_json.at("feat0"));
      q.feat1 = detail::vec_from_json(query_json.at("feat1"));
      set.queries.push_back(std::move(q));
    }
    instance.query_sets.push_back(std::move(set));
  }
  return instance;
}

/// Dataset archival; the sampling parameter appears only when diagnostics
/// are explicitly requested.
inline Json to_json(const LabelerDataset& data, bool include_diagnostics = false) {
  Json j;
  Json queries = Json::array();
  for (const ComparisonQuery& q : data.queries().queries) {
    Json query;
    query["feat0"] = detail::vec_to_json(q.feat0);
    query["feat1"] = detail::vec_to_json(q.feat1);
    queries.push_back(std::move(query));
  }
  j["queries"] = std::move(queries);
  j["labels"] = data.labels();
  if (include_diagnostics) {
    Json diagnostics;
    diagnostics["report_param"] = detail::vec_to_json(data.diagnostics_report_param());
    j["diagnostics"] = std::move(diagnostics);
  }
  return j;
}

inline Json to_json(const MleFit& fit) {
  Json j;
  j["theta_hat"] = detail::vec_to_json(fit.theta_hat);
  j["cov"] = detail::mat_to_json(fit.cov);
  j["reg"] = fit.reg;
  j["n"] = fit.n;
  j["converged"] = fit.converged;
  j["grad_norm"] = fit.grad_norm;
  j["iterations"] = fit.iterations;
  return j;
}

// ----------------------------------------------------------------------------
// Tabular MDPs
// ----------------------------------------------------------------------------

inline Json to_json(const TabularMdp& mdp) {
  Json j;
  j["S"] = mdp.S;
  j["A"] = mdp.A;
  j["H"] = mdp.H;
  j["L"] = mdp.L;
  j["rho"] = detail::vec_to_json(mdp.rho);
  Json transitions = Json::array();
  for (const Mat& p_h : mdp.P) transitions.push_back(detail::mat_to_json(p_h));
  j["P"] = std::move(transitions);
  Json features = Json::array();
  for (const Vec& f : mdp.phi) features.push_back(detail::vec_to_json(f));
  j["phi"] = std::move(features);
  return j;
}

inline TabularMdp tabular_mdp_from_json(const Json& j) {
  detail::check_keys(j, {"S", "A", "H", "L", "rho", "P", "phi"}, "tabular MDP");
  TabularMdp mdp;
  mdp.S = j.at("S").get<int>();
  mdp.A = j.at("A").get<int>();
  mdp.H = j.at("H").get<int>();
  if (j.contains("L")) mdp.L = j.at("L").get<double>();
  mdp.rho = detail::vec_from_json(j.at("rho"));
  for (const auto& p_h : j.at("P")) mdp.P.push_back(detail::mat_from_json(p_h));
  for (const auto& f : j.at("phi")) mdp.phi.push_back(detail::vec_from_json(f));
  mdp.validate();
  return mdp;
}

// ----------------------------------------------------------------------------
// Experiment summary
// ----------------------------------------------------------------------------

/// Aggregate document: config echo, per-(algorithm, regime, n) means and
/// standard errors across seeds, exact per-row timings, and failed cells.
inline Json summary_json(const ExperimentResult& result) {
  Json j;
  j["config"] = to_json(result.config);
  j["row_count"] = result.rows.size();

  Json groups = Json::array();
  std::vector<std::string> regimes;
  if (result.config.run_truthful()) regimes.push_back("truthful");
  if (result.config.run_strategic()) regimes.push_back("strategic");
  for (Algorithm alg : result.config.algorithms) {
    const std::string alg_name = to_string(alg);
    for (const std::string& regime : regimes) {
      for (int n : result.config.n_grid) {
        std::vector<double> subopts, alphas, gains, runtimes;
        for (const ResultRow& row : result.rows) {
          if (row.algorithm != alg_name || row.regime != regime || row.n != n) continue;
          if (!row.error.empty()) continue;
          subopts.push_back(row.subopt);
          alphas.push_back(row.alpha);
          gains.push_back(row.gain);
          runtimes.push_back(row.runtime_ms);
        }
        if (subopts.empty()) continue;
        Json group;
        group["algorithm"] = alg_name;
        group["regime"] = regime;
        group["n"] = n;
        group["seeds"] = subopts.size();
        group["mean_subopt"] = detail::mean_of(subopts);
        group["se_subopt"] = detail::standard_error(subopts);
        group["mean_alpha"] = detail::mean_of(alphas);
        group["se_alpha"] = detail::standard_error(alphas);
        group["mean_gain"] = detail::mean_of(gains);
        group["se_gain"] = detail::standard_error(gains);
        group["mean_runtime_ms"] = detail::mean_of(runtimes);
        groups.push_back(std::move(group));
      }
    }
  }
  j["groups"] = std::move(groups);

  Json failures = Json::array();
  for (const ResultRow& row : result.rows) {
    if (row.error.empty()) continue;
    Json failure;
    failure["algorithm"] = row.algorithm;
    failure["n"] = row.n;
    failure["seed"] = row.seed;
    failure["regime"] = row.regime;
    failure["error"] = row.error;
    failures.push_back(std::move(failure));
  }
  j["failures"] = std::move(failures);
  j["total_runtime_ms"] = result.total_runtime_ms;
  return j;
}

}  // namespace stratrlhf
