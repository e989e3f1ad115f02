#pragma once

// Experiment orchestration: JSON config -> problem, schedule, ensemble run,
// verification suites -> report.json / metadata.json / snapshots.csv /
// fdd.csv, or limits.json in reference mode.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ttsa/engine.hpp"
#include "ttsa/error.hpp"
#include "ttsa/limits.hpp"
#include "ttsa/linalg.hpp"
#include "ttsa/problem.hpp"
#include "ttsa/schedule.hpp"
#include "ttsa/stats.hpp"
#include "ttsa/trajectory.hpp"

namespace ttsa {

using json = nlohmann::json;

inline constexpr int kExitPass = 0;
inline constexpr int kExitVerdictFailure = 1;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitDivergence = 3;

enum class Suite { Covariance, Rates, Fclt, CltMarginals, GtdCompare, Assumptions };

inline const char* to_string(Suite s) {
  switch (s) {
    case Suite::Covariance: return "covariance";
    case Suite::Rates: return "rates";
    case Suite::Fclt: return "fclt";
    case Suite::CltMarginals: return "clt_marginals";
    case Suite::GtdCompare: return "gtd_compare";
    case Suite::Assumptions: return "assumptions";
  }
  return "?";
}

inline std::optional<Suite> parse_suite(const std::string& s) {
  for (Suite k : {Suite::Covariance, Suite::Rates, Suite::Fclt, Suite::CltMarginals, Suite::GtdCompare,
                  Suite::Assumptions})
    if (s == to_string(k)) return k;
  return std::nullopt;
}

struct RunBlock {
  std::size_t n_iters = 0;
  std::size_t n_replicas = 0;
  std::uint64_t master_seed = 0;
  std::vector<std::size_t> checkpoints;  // defaults to {n_iters}
  std::vector<std::size_t> rate_checkpoints;  // defaults to checkpoints
  double burn_in_fraction = 0.5;
  double horizon = 2.0;
  std::vector<double> fclt_lags{0.25, 0.5, 1.0};
  double initial_offset = 1.0;
  bool write_snapshots = true;
};

struct Tolerances {
  double covariance = 0.10;
  double rate_band = 0.10;
  double rate_r2 = 0.98;
  double fclt = 0.15;
  double ou_oracle = 0.05;
  double ks_alpha = 0.01;
  double aux_ratio = 3.0;
  double aux_final = 0.10;
  double gtd_between = 0.08;
  double gtd_limit = 0.12;
  double gtd_exact = 1e-10;
};

struct ExperimentConfig {
  json problem;  // validated by build_problem at parse time
  PolynomialParams schedule;
  RunBlock run;
  std::vector<Suite> suite;
  Tolerances tolerances;
  std::string output = "out";
};

// ---------------------------------------------------------------------------
// Field-level parsing with path diagnostics.

namespace detail {

[[noreturn]] inline void config_fail(const std::string& path, const std::string& what) {
  fail(ErrorCode::ConfigError, path + ": " + what);
}

inline void reject_unknown(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key)) config_fail(path + "." + key, "unknown field");
}

inline const json& field(const json& obj, const std::string& path, const std::string& key) {
  if (!obj.contains(key)) config_fail(path + "." + key, "missing required field");
  return obj.at(key);
}

inline double as_number(const json& v, const std::string& path) {
  if (!v.is_number()) config_fail(path, "expected a number, got " + std::string(v.type_name()));
  const double x = v.get<double>();
  if (!std::isfinite(x)) config_fail(path, "must be finite");
  return x;
}

inline std::size_t as_count(const json& v, const std::string& path) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    config_fail(path, "expected a non-negative integer");
  return v.get<std::size_t>();
}

inline Vector as_vector(const json& v, const std::string& path) {
  if (!v.is_array()) config_fail(path, "expected an array of numbers");
  Vector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i)
    out[static_cast<Eigen::Index>(i)] = as_number(v[i], path + "[" + std::to_string(i) + "]");
  return out;
}

inline Matrix as_matrix(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) config_fail(path, "expected a non-empty array of rows");
  const std::size_t cols = v[0].is_array() ? v[0].size() : 0;
  Matrix out(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::string row_path = path + "[" + std::to_string(i) + "]";
    if (!v[i].is_array() || v[i].size() != cols) config_fail(row_path, "rows must be arrays of equal length");
    for (std::size_t j = 0; j < cols; ++j)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          as_number(v[i][j], row_path + "[" + std::to_string(j) + "]");
  }
  return out;
}

inline std::vector<double> as_doubles(const json& v, const std::string& path) {
  const Vector x = as_vector(v, path);
  return {x.data(), x.data() + x.size()};
}

inline std::vector<std::vector<double>> as_table(const json& v, const std::string& path) {
  if (!v.is_array()) config_fail(path, "expected an array of arrays");
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_doubles(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

inline std::vector<std::size_t> as_counts(const json& v, const std::string& path) {
  if (!v.is_array()) config_fail(path, "expected an array of integers");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_count(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

inline double number_or(const json& obj, const std::string& path, const std::string& key, double fallback) {
  return obj.contains(key) ? as_number(obj.at(key), path + "." + key) : fallback;
}

inline MdpSpec parse_mdp(const json& j, const std::string& path) {
  if (!j.is_object()) config_fail(path, "expected an object");
  reject_unknown(j, path, {"n_states", "n_actions", "features", "rewards", "transitions", "target_policy",
                           "behavior_policy", "state_dist", "gamma"});
  MdpSpec m;
  m.n_states = as_count(field(j, path, "n_states"), path + ".n_states");
  m.n_actions = as_count(field(j, path, "n_actions"), path + ".n_actions");
  m.features = as_matrix(field(j, path, "features"), path + ".features");
  m.rewards = as_table(field(j, path, "rewards"), path + ".rewards");
  const json& tr = field(j, path, "transitions");
  if (!tr.is_array()) config_fail(path + ".transitions", "expected [state][action][next_state] probabilities");
  for (std::size_t s = 0; s < tr.size(); ++s)
    m.transitions.push_back(as_table(tr[s], path + ".transitions[" + std::to_string(s) + "]"));
  m.target_policy = as_table(field(j, path, "target_policy"), path + ".target_policy");
  m.behavior_policy = as_table(field(j, path, "behavior_policy"), path + ".behavior_policy");
  m.state_dist = as_doubles(field(j, path, "state_dist"), path + ".state_dist");
  m.gamma = as_number(field(j, path, "gamma"), path + ".gamma");
  return m;
}

inline json mdp_to_json(const MdpSpec& m) {
  return {{"n_states", m.n_states},
          {"n_actions", m.n_actions},
          {"features", matrix_to_rows(m.features)},
          {"rewards", m.rewards},
          {"transitions", m.transitions},
          {"target_policy", m.target_policy},
          {"behavior_policy", m.behavior_policy},
          {"state_dist", m.state_dist},
          {"gamma", m.gamma}};
}

inline json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

// Re-throws library errors raised while building a problem as ConfigError
// tagged with the config path.
template <class Fn>
auto at_path(const std::string& path, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigError) throw;
    config_fail(path, e.what());
  }
}

}  // namespace detail

/// Builds the problem described by a config "problem" block.
inline ProblemSpec build_problem(const json& j) {
  using namespace detail;
  const std::string path = "problem";
  if (!j.is_object()) config_fail(path, "expected an object");
  const json& kind_j = field(j, path, "kind");
  if (!kind_j.is_string()) config_fail(path + ".kind", "expected a string");
  const std::string kind = kind_j.get<std::string>();
  const std::set<std::string> holder = {"kind", "delta_h", "delta_f", "delta_g"};
  auto allowed = [&](std::initializer_list<const char*> extra) {
    std::set<std::string> s = holder;
    for (const char* e : extra) s.insert(e);
    return s;
  };

  ProblemSpec p;
  if (kind == "linear") {
    reject_unknown(j, path, allowed({"b1", "b2", "b3", "h", "x_star", "y_star", "sigma_xi", "sigma_psi",
                                     "sigma_xipsi"}));
    LinearParams lp;
    lp.b1 = as_matrix(field(j, path, "b1"), path + ".b1");
    lp.b2 = as_matrix(field(j, path, "b2"), path + ".b2");
    lp.b3 = as_matrix(field(j, path, "b3"), path + ".b3");
    if (j.contains("h")) lp.h = as_matrix(j.at("h"), path + ".h");
    if (j.contains("x_star")) lp.x_star = as_vector(j.at("x_star"), path + ".x_star");
    if (j.contains("y_star")) lp.y_star = as_vector(j.at("y_star"), path + ".y_star");
    lp.sigma_xi = as_matrix(field(j, path, "sigma_xi"), path + ".sigma_xi");
    lp.sigma_psi = as_matrix(field(j, path, "sigma_psi"), path + ".sigma_psi");
    if (j.contains("sigma_xipsi")) lp.sigma_xipsi = as_matrix(j.at("sigma_xipsi"), path + ".sigma_xipsi");
    p = at_path(path, [&] { return make_linear(lp); });
  } else if (kind == "pr_averaging" || kind == "shb") {
    reject_unknown(j, path, allowed({"q", "x_opt", "sigma_xi"}));
    Matrix q = j.contains("q") ? as_matrix(j.at("q"), path + ".q") : Matrix(Vector::LinSpaced(2, 1.0, 2.0).asDiagonal());
    Vector x_opt = j.contains("x_opt") ? as_vector(j.at("x_opt"), path + ".x_opt") : Vector();
    Matrix sigma_xi = j.contains("sigma_xi") ? as_matrix(j.at("sigma_xi"), path + ".sigma_xi")
                                             : Matrix(Matrix::Identity(q.rows(), q.rows()));
    p = at_path(path, [&] {
      return kind == "shb" ? make_shb(q, x_opt, sigma_xi) : make_pr_averaging(q, x_opt, sigma_xi);
    });
  } else if (kind == "gtd2" || kind == "tdc") {
    reject_unknown(j, path, allowed({"mdp"}));
    MdpSpec m = parse_mdp(field(j, path, "mdp"), path + ".mdp");
    auto sampler = at_path(path + ".mdp", [&] { return std::make_shared<const MdpSampler>(std::move(m)); });
    p = make_gtd(sampler, kind == "gtd2" ? GtdVariant::Gtd2 : GtdVariant::Tdc);
  } else {
    config_fail(path + ".kind", "unknown problem kind '" + kind + "' (expected linear, pr_averaging, shb, gtd2 or tdc)");
  }
  p.orders.delta_h = number_or(j, path, "delta_h", 1.0);
  p.orders.delta_f = number_or(j, path, "delta_f", 1.0);
  p.orders.delta_g = number_or(j, path, "delta_g", 1.0);
  return p;
}

inline json to_json(const ExperimentConfig& c) {
  const auto& r = c.run;
  const auto& t = c.tolerances;
  json suite = json::array();
  for (Suite s : c.suite) suite.push_back(to_string(s));
  return {{"problem", c.problem},
          {"schedule", {{"alpha0", c.schedule.alpha0}, {"a", c.schedule.a}, {"beta0", c.schedule.beta0}, {"b", c.schedule.b}}},
          {"run",
           {{"n_iters", r.n_iters},
            {"n_replicas", r.n_replicas},
            {"master_seed", r.master_seed},
            {"checkpoints", r.checkpoints},
            {"rate_checkpoints", r.rate_checkpoints},
            {"burn_in_fraction", r.burn_in_fraction},
            {"horizon", r.horizon},
            {"fclt_lags", r.fclt_lags},
            {"initial_offset", r.initial_offset},
            {"write_snapshots", r.write_snapshots}}},
          {"suite", suite},
          {"tolerances",
           {{"covariance", t.covariance},
            {"rate_band", t.rate_band},
            {"rate_r2", t.rate_r2},
            {"fclt", t.fclt},
            {"ou_oracle", t.ou_oracle},
            {"ks_alpha", t.ks_alpha},
            {"aux_ratio", t.aux_ratio},
            {"aux_final", t.aux_final},
            {"gtd_between", t.gtd_between},
            {"gtd_limit", t.gtd_limit},
            {"gtd_exact", t.gtd_exact}}},
          {"output", c.output}};
}

inline ExperimentConfig parse_config(const json& j) {
  using namespace detail;
  if (!j.is_object()) config_fail("<root>", "expected a JSON object");
  reject_unknown(j, "<root>", {"problem", "schedule", "run", "suite", "tolerances", "output"});
  ExperimentConfig c;
  c.problem = field(j, "<root>", "problem");
  build_problem(c.problem);

  const json& s = field(j, "<root>", "schedule");
  if (!s.is_object()) config_fail("schedule", "expected an object");
  reject_unknown(s, "schedule", {"alpha0", "a", "beta0", "b"});
  c.schedule.alpha0 = as_number(field(s, "schedule", "alpha0"), "schedule.alpha0");
  c.schedule.a = as_number(field(s, "schedule", "a"), "schedule.a");
  c.schedule.beta0 = as_number(field(s, "schedule", "beta0"), "schedule.beta0");
  c.schedule.b = as_number(field(s, "schedule", "b"), "schedule.b");
  at_path("schedule", [&] { return StepSchedule::polynomial(c.schedule); });

  const json& r = field(j, "<root>", "run");
  if (!r.is_object()) config_fail("run", "expected an object");
  reject_unknown(r, "run", {"n_iters", "n_replicas", "master_seed", "checkpoints", "rate_checkpoints",
                            "burn_in_fraction", "horizon", "fclt_lags", "initial_offset", "write_snapshots"});
  auto& run = c.run;
  run.n_iters = as_count(field(r, "run", "n_iters"), "run.n_iters");
  run.n_replicas = as_count(field(r, "run", "n_replicas"), "run.n_replicas");
  const json& seed = field(r, "run", "master_seed");
  if (!seed.is_number_unsigned()) config_fail("run.master_seed", "expected a non-negative integer");
  run.master_seed = seed.get<std::uint64_t>();
  if (run.n_iters == 0) config_fail("run.n_iters", "must be positive");
  if (run.n_replicas < 2) config_fail("run.n_replicas", "need at least 2 replicas");
  run.checkpoints = r.contains("checkpoints") ? as_counts(r.at("checkpoints"), "run.checkpoints")
                                              : std::vector<std::size_t>{run.n_iters};
  for (std::size_t i = 0; i < run.checkpoints.size(); ++i) {
    const auto cp = run.checkpoints[i];
    if (cp < 1 || cp > run.n_iters || (i > 0 && cp <= run.checkpoints[i - 1]))
      config_fail("run.checkpoints[" + std::to_string(i) + "]",
                  "checkpoints must be strictly increasing within [1, n_iters]");
  }
  if (run.checkpoints.empty()) config_fail("run.checkpoints", "need at least one checkpoint");
  run.rate_checkpoints = r.contains("rate_checkpoints") ? as_counts(r.at("rate_checkpoints"), "run.rate_checkpoints")
                                                        : run.checkpoints;
  for (std::size_t i = 0; i < run.rate_checkpoints.size(); ++i) {
    if (std::find(run.checkpoints.begin(), run.checkpoints.end(), run.rate_checkpoints[i]) == run.checkpoints.end())
      config_fail("run.rate_checkpoints[" + std::to_string(i) + "]", "must also be listed in run.checkpoints");
  }
  run.burn_in_fraction = number_or(r, "run", "burn_in_fraction", run.burn_in_fraction);
  if (!(run.burn_in_fraction > 0.0 && run.burn_in_fraction < 1.0))
    config_fail("run.burn_in_fraction", "must lie in (0, 1)");
  run.horizon = number_or(r, "run", "horizon", run.horizon);
  if (!(run.horizon > 0.0)) config_fail("run.horizon", "must be positive");
  if (r.contains("fclt_lags")) run.fclt_lags = as_doubles(r.at("fclt_lags"), "run.fclt_lags");
  for (std::size_t i = 0; i < run.fclt_lags.size(); ++i) {
    if (!(run.fclt_lags[i] > 0.0 && run.fclt_lags[i] <= run.horizon))
      config_fail("run.fclt_lags[" + std::to_string(i) + "]", "lags must lie in (0, horizon]");
  }
  run.initial_offset = number_or(r, "run", "initial_offset", run.initial_offset);
  if (r.contains("write_snapshots")) {
    if (!r.at("write_snapshots").is_boolean()) config_fail("run.write_snapshots", "expected a boolean");
    run.write_snapshots = r.at("write_snapshots").get<bool>();
  }

  const json& suite = field(j, "<root>", "suite");
  if (!suite.is_array() || suite.empty()) config_fail("suite", "expected a non-empty array of suite names");
  for (std::size_t i = 0; i < suite.size(); ++i) {
    const std::string p = "suite[" + std::to_string(i) + "]";
    if (!suite[i].is_string()) config_fail(p, "expected a string");
    const auto parsed = parse_suite(suite[i].get<std::string>());
    if (!parsed)
      config_fail(p, "unknown suite '" + suite[i].get<std::string>() +
                         "' (expected covariance, rates, fclt, clt_marginals, gtd_compare or assumptions)");
    if (std::find(c.suite.begin(), c.suite.end(), *parsed) == c.suite.end()) c.suite.push_back(*parsed);
  }

  if (j.contains("tolerances")) {
    const json& t = j.at("tolerances");
    if (!t.is_object()) config_fail("tolerances", "expected an object");
    reject_unknown(t, "tolerances", {"covariance", "rate_band", "rate_r2", "fclt", "ou_oracle", "ks_alpha",
                                     "aux_ratio", "aux_final", "gtd_between", "gtd_limit", "gtd_exact"});
    auto& tol = c.tolerances;
    tol.covariance = number_or(t, "tolerances", "covariance", tol.covariance);
    tol.rate_band = number_or(t, "tolerances", "rate_band", tol.rate_band);
    tol.rate_r2 = number_or(t, "tolerances", "rate_r2", tol.rate_r2);
    tol.fclt = number_or(t, "tolerances", "fclt", tol.fclt);
    tol.ou_oracle = number_or(t, "tolerances", "ou_oracle", tol.ou_oracle);
    tol.ks_alpha = number_or(t, "tolerances", "ks_alpha", tol.ks_alpha);
    tol.aux_ratio = number_or(t, "tolerances", "aux_ratio", tol.aux_ratio);
    tol.aux_final = number_or(t, "tolerances", "aux_final", tol.aux_final);
    tol.gtd_between = number_or(t, "tolerances", "gtd_between", tol.gtd_between);
    tol.gtd_limit = number_or(t, "tolerances", "gtd_limit", tol.gtd_limit);
    tol.gtd_exact = number_or(t, "tolerances", "gtd_exact", tol.gtd_exact);
  }

  if (j.contains("output")) {
    if (!j.at("output").is_string()) config_fail("output", "expected a directory path string");
    c.output = j.at("output").get<std::string>();
  }
  const bool needs_gtd = std::find(c.suite.begin(), c.suite.end(), Suite::GtdCompare) != c.suite.end();
  const std::string kind = c.problem.at("kind").get<std::string>();
  if (needs_gtd && kind != "gtd2" && kind != "tdc")
    config_fail("suite", "gtd_compare needs a gtd2 or tdc problem");
  return c;
}

/// Parses JSON text; syntax errors report line and column.
inline ExperimentConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    fail(ErrorCode::ConfigError,
         "malformed JSON at line " + std::to_string(line) + ", column " + std::to_string(col) + ": " + e.what());
  }
  return parse_config(j);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::ConfigError, "cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

// ---------------------------------------------------------------------------
// Serialization of results.

inline json to_json(const Matrix& m) { return matrix_to_rows(m); }

inline json to_json(const LimitSpec& l) {
  return {{"drift", to_json(l.drift)},
          {"diffusion_cov", to_json(l.diffusion_cov)},
          {"stationary_cov", to_json(l.stationary_cov)}};
}

inline json to_json(const SpectralReport& r) {
  return {{"real_parts", r.real_parts},
          {"min_real_part", r.min_real_part},
          {"hurwitz_for_negation", r.hurwitz_for_negation}};
}

inline json to_json(const CovEstimate& c) {
  return {{"matrix", to_json(c.matrix)}, {"std_error", to_json(c.std_error)}, {"n_samples", c.n_samples}};
}

inline json to_json(const MeanReport& m) {
  return {{"mean", detail::vector_to_json(m.mean)},
          {"std_error", detail::vector_to_json(m.std_error)},
          {"max_abs_z", m.max_abs_z},
          {"flagged", m.flagged}};
}

inline json to_json(const TestVerdict& v) {
  json j = {{"name", v.name},
            {"statistic", v.statistic},
            {"threshold", v.threshold},
            {"rule", v.rule},
            {"pass", v.pass},
            {"context", v.context}};
  if (v.p_value) j["p_value"] = *v.p_value;
  return j;
}

inline json to_json(const AssumptionReport& r) {
  json conds = json::array();
  for (const auto& c : r.conditions)
    conds.push_back({{"name", c.name}, {"pass", c.pass}, {"heuristic", c.heuristic}, {"reason", c.reason}});
  return {{"conditions", conds}, {"pass", r.pass}};
}

inline json to_json(const GtdMatrices& m) {
  return {{"A", to_json(m.a)},
          {"b", detail::vector_to_json(m.b)},
          {"C", to_json(m.c)},
          {"D", to_json(m.d)},
          {"identity_residual", m.identity_residual},
          {"identity_holds", m.identity_residual <= kGtdIdentityTolerance}};
}

// ---------------------------------------------------------------------------
// Running.

struct RunOptions {
  unsigned threads = 0;  // 0: hardware concurrency
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool allow_invalid_schedule = false;
  bool write_files = true;
};

struct ExperimentOutcome {
  json report;
  std::vector<TestVerdict> verdicts;
  int exit_code = kExitPass;
};

namespace detail {

inline bool has(const std::vector<Suite>& s, Suite k) { return std::find(s.begin(), s.end(), k) != s.end(); }

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

inline std::map<std::string, std::string> context_of(const ExperimentConfig& c, std::size_t n) {
  const auto& s = c.schedule;
  return {{"problem", c.problem.at("kind").get<std::string>()},
          {"schedule", "alpha0=" + fmt_double(s.alpha0) + " a=" + fmt_double(s.a) + " beta0=" + fmt_double(s.beta0) +
                           " b=" + fmt_double(s.b)},
          {"n", std::to_string(n)}};
}

inline RunConfig engine_config(const ExperimentConfig& c, const ProblemSpec& p, std::uint64_t seed,
                               unsigned threads) {
  RunConfig rc;
  rc.n_iters = c.run.n_iters;
  rc.n_replicas = c.run.n_replicas;
  rc.master_seed = seed;
  rc.checkpoints = c.run.checkpoints;
  rc.initial_offset_x = Vector::Constant(static_cast<Eigen::Index>(p.dim_x), c.run.initial_offset);
  rc.initial_offset_y = Vector::Constant(static_cast<Eigen::Index>(p.dim_y), c.run.initial_offset);
  rc.threads = threads;
  return rc;
}

// Stream ids for the OU oracle ensembles, disjoint from replica ids.
inline constexpr std::uint64_t kOuFastStream = 1ULL << 40;
inline constexpr std::uint64_t kOuSlowStream = 1ULL << 41;

inline FddSamples ou_ensemble(const LimitSpec& lim, const std::vector<double>& times, std::size_t replicas,
                              std::uint64_t seed, std::uint64_t stream_base) {
  const OuPathSampler sampler(lim, times);
  FddSamples out;
  out.times = times;
  for (std::size_t j = 0; j < times.size(); ++j) out.by_time.emplace_back(static_cast<Eigen::Index>(replicas), lim.drift.rows());
  for (std::size_t r = 0; r < replicas; ++r) {
    CounterRng rng(seed, stream_base + r);
    const auto path = sampler.sample(rng, OuStart::Stationary);
    for (std::size_t j = 0; j < times.size(); ++j)
      out.by_time[j].row(static_cast<Eigen::Index>(r)) = path[j].transpose();
    out.replica_ids.push_back(r);
  }
  return out;
}

inline double mean_norm(const Matrix& rows) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) acc += rows.row(i).norm();
  return acc / static_cast<double>(rows.rows());
}

inline double mean_sq_norm(const Matrix& rows) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) acc += rows.row(i).squaredNorm();
  return acc / static_cast<double>(rows.rows());
}

}  // namespace detail

/// Runs every requested suite. Throws Error on configuration or divergence
/// problems; verdict failures are reported in the outcome.
inline ExperimentOutcome run_suites(const ExperimentConfig& cfg, const RunOptions& opts,
                                    std::ostream* csv_snapshots = nullptr, std::ostream* csv_fdd = nullptr) {
  using namespace detail;
  const std::uint64_t seed = opts.seed.value_or(cfg.run.master_seed);
  const ProblemSpec p = build_problem(cfg.problem);
  const StepSchedule sched = StepSchedule::polynomial(cfg.schedule);
  const auto& tol = cfg.tolerances;
  ExperimentOutcome out;
  json& report = out.report;
  auto effective = cfg;
  effective.run.master_seed = seed;
  report["config"] = to_json(effective);

  const AssumptionReport assumptions = sched.validate(p.orders);
  report["assumptions"] = to_json(assumptions);
  const bool simulate = has(cfg.suite, Suite::Covariance) || has(cfg.suite, Suite::Rates) ||
                        has(cfg.suite, Suite::Fclt) || has(cfg.suite, Suite::CltMarginals) ||
                        has(cfg.suite, Suite::GtdCompare);
  if (!assumptions.pass && simulate && !opts.allow_invalid_schedule) {
    std::string failed;
    for (const auto& c : assumptions.conditions)
      if (!c.pass) failed += (failed.empty() ? "" : ", ") + ("(" + c.name + ") " + c.reason);
    fail(ErrorCode::ConfigError, "schedule violates step-size condition " + failed +
                                     "; pass --allow-invalid-schedule to simulate anyway");
  }
  if (has(cfg.suite, Suite::Assumptions)) {
    for (const auto& c : assumptions.conditions) {
      TestVerdict v;
      v.name = "assumption_" + c.name;
      v.statistic = c.pass ? 0.0 : 1.0;
      v.threshold = 0.0;
      v.rule = "condition holds";
      v.pass = c.pass;
      v.context = context_of(cfg, 0);
      v.context["reason"] = c.reason;
      out.verdicts.push_back(v);
    }
  }

  const ProblemCheck check = check_problem(p, sched);
  report["problem"] = {{"kind", p.kind},
                       {"dim_x", p.dim_x},
                       {"dim_y", p.dim_y},
                       {"root_residual_f", check.root_residual_f},
                       {"root_residual_g", check.root_residual_g},
                       {"inner_residual", check.inner_residual},
                       {"fast_drift_spectrum", to_json(check.fast_drift)},
                       {"slow_drift_spectrum", to_json(check.slow_drift)}};
  const auto lin = linearize(p);
  report["problem"]["linearization"] = {
      {"B1", to_json(lin.b1)}, {"B2", to_json(lin.b2)}, {"B3", to_json(lin.b3)}, {"H_star", to_json(lin.h_star)}};
  report["schedule"] = {{"beta_tilde", sched.beta_tilde()}};
  if (has(cfg.suite, Suite::Assumptions)) {
    TestVerdict fast = threshold_verdict("hurwitz_fast", -check.fast_drift.min_real_part, 0.0, context_of(cfg, 0));
    fast.rule = "min real part of B1 eigenvalues > 0";
    fast.pass = check.fast_drift.hurwitz_for_negation;
    TestVerdict slow = threshold_verdict("hurwitz_slow", -check.slow_drift.min_real_part, 0.0, context_of(cfg, 0));
    slow.rule = "min real part of (B3 - beta_tilde I / 2) eigenvalues > 0";
    slow.pass = check.slow_drift.hurwitz_for_negation;
    out.verdicts.push_back(fast);
    out.verdicts.push_back(slow);
  }
  if (!simulate) {
    if (check.fast_drift.hurwitz_for_negation && check.slow_drift.hurwitz_for_negation)
      report["limits"] = {{"fast", to_json(fast_limit(p))}, {"slow", to_json(slow_limit(p, sched))}};
  } else {
    const LimitSpec fast = fast_limit(p);
    const LimitSpec slow = slow_limit(p, sched);
    report["limits"] = {{"fast", to_json(fast)}, {"slow", to_json(slow)}};

    const RunConfig rc = engine_config(cfg, p, seed, opts.threads);
    std::optional<FddRecorder> recorder;
    TraceRequest trace;
    if (has(cfg.suite, Suite::Fclt)) {
      const auto n0 = static_cast<std::size_t>(cfg.run.burn_in_fraction * static_cast<double>(cfg.run.n_iters));
      std::vector<double> times{0.0};
      for (double s : cfg.run.fclt_lags) times.push_back(s);
      times.push_back(cfg.run.horizon);
      std::sort(times.begin(), times.end());
      times.erase(std::unique(times.begin(), times.end()), times.end());
      recorder.emplace(sched, std::max<std::size_t>(n0, 1), times, cfg.run.n_replicas,
                       static_cast<Eigen::Index>(p.dim_x), static_cast<Eigen::Index>(p.dim_y));
      if (recorder->last_index() > cfg.run.n_iters)
        fail(ErrorCode::ConfigError, "run.horizon: trajectories from n0 = " + std::to_string(n0) + " need " +
                                         std::to_string(recorder->last_index()) + " iterations, n_iters is " +
                                         std::to_string(cfg.run.n_iters));
      trace = recorder->request();
    }
    const EnsembleResult ens = run_ensemble(p, sched, rc, recorder ? &trace : nullptr);
    report["ensemble"] = {{"n_replicas", ens.n_replicas}, {"diverged", ens.diverged.size()}};
    if (csv_snapshots) write_snapshots_csv(*csv_snapshots, ens);
    const EnsembleSnapshot& last = ens.snapshots.back();

    if (has(cfg.suite, Suite::Covariance)) {
      const CovEstimate cx = empirical_cov(last.x_check);
      const CovEstimate cy = empirical_cov(last.y_check);
      const CovEstimate cz = empirical_cov(last.z_check);
      report["covariance"] = {{"n", last.n},
                              {"x_check", to_json(cx)},
                              {"y_check", to_json(cy)},
                              {"z_check", to_json(cz)},
                              {"Sigma_x", to_json(fast.stationary_cov)},
                              {"Sigma_y", to_json(slow.stationary_cov)}};
      report["mean_reports"] = {{"x_check", to_json(mean_report(last.x_check))},
                                {"y_check", to_json(mean_report(last.y_check))},
                                {"z_check", to_json(mean_report(last.z_check))}};
      const auto ctx = context_of(cfg, last.n);
      out.verdicts.push_back(threshold_verdict("cov_x_check", frobenius_relative(cx.matrix, fast.stationary_cov),
                                               tol.covariance, ctx));
      out.verdicts.push_back(threshold_verdict("cov_y_check", frobenius_relative(cy.matrix, slow.stationary_cov),
                                               tol.covariance, ctx));
      out.verdicts.push_back(threshold_verdict("cov_z_check", frobenius_relative(cz.matrix, slow.stationary_cov),
                                               tol.covariance, ctx));

      // Auxiliary sequence: |z_check - y_check| / sqrt(kappa_{n-1}) stays bounded
      // and the gap is small next to |y_check| at the end.
      json aux = json::array();
      std::vector<double> ratios;
      for (const auto& snap : ens.snapshots) {
        const double gap = mean_norm(snap.z_check - snap.y_check);
        const double ratio = gap / std::sqrt(sched.step_at(snap.n - 1).kappa);
        ratios.push_back(ratio);
        aux.push_back({{"n", snap.n}, {"mean_gap", gap}, {"gap_over_sqrt_kappa", ratio},
                       {"mean_y_check_norm", mean_norm(snap.y_check)}});
      }
      report["auxiliary"] = aux;
      std::vector<double> sorted = ratios;
      std::sort(sorted.begin(), sorted.end());
      const std::size_t m = sorted.size();
      const double median = m % 2 == 1 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
      out.verdicts.push_back(threshold_verdict("aux_ratio_bounded", sorted.back() / median, tol.aux_ratio, ctx));
      out.verdicts.back().rule = "max/median < threshold";
      out.verdicts.back().pass = sorted.back() / median < tol.aux_ratio;
      out.verdicts.push_back(threshold_verdict(
          "aux_final_gap", mean_norm(last.z_check - last.y_check) / mean_norm(last.y_check), tol.aux_final, ctx));
      out.verdicts.back().rule = "statistic < threshold";
      out.verdicts.back().pass = out.verdicts.back().statistic < tol.aux_final;
    }

    if (has(cfg.suite, Suite::Rates)) {
      std::vector<double> mx, my, sa, sb;
      for (std::size_t n : cfg.run.rate_checkpoints) {
        const auto& snap = ens.at(n);
        mx.push_back(mean_sq_norm(snap.x_hat));
        my.push_back(mean_sq_norm(snap.y_hat));
        const Step st = sched.step_at(n);
        sa.push_back(st.alpha);
        sb.push_back(st.beta);
      }
      const RateFit fx = rate_slope(cfg.run.rate_checkpoints, mx, sa);
      const RateFit fy = rate_slope(cfg.run.rate_checkpoints, my, sb);
      report["rates"] = {{"checkpoints", cfg.run.rate_checkpoints},
                         {"mean_sq_x_hat", mx},
                         {"mean_sq_y_hat", my},
                         {"x", {{"slope", fx.slope}, {"intercept", fx.intercept}, {"r_squared", fx.r_squared}}},
                         {"y", {{"slope", fy.slope}, {"intercept", fy.intercept}, {"r_squared", fy.r_squared}}}};
      const auto ctx = context_of(cfg, cfg.run.rate_checkpoints.back());
      for (const auto& [name, fit] : {std::pair{"x", fx}, std::pair{"y", fy}}) {
        TestVerdict slope = threshold_verdict(std::string("rate_") + name + "_slope", std::abs(fit.slope - 1.0),
                                              tol.rate_band, ctx);
        slope.rule = "|slope - 1| <= threshold";
        slope.context["slope"] = fmt_double(fit.slope);
        TestVerdict r2 = threshold_verdict(std::string("rate_") + name + "_r_squared", fit.r_squared, tol.rate_r2, ctx);
        r2.rule = "statistic > threshold";
        r2.pass = fit.r_squared > tol.rate_r2;
        out.verdicts.push_back(slope);
        out.verdicts.push_back(r2);
      }
    }

    if (has(cfg.suite, Suite::CltMarginals)) {
      json ks = json::array();
      for (Eigen::Index c = 0; c < last.y_check.cols(); ++c) {
        const double sd = std::sqrt(slow.stationary_cov(c, c));
        std::vector<double> z;
        z.reserve(static_cast<std::size_t>(last.y_check.rows()));
        for (Eigen::Index i = 0; i < last.y_check.rows(); ++i) z.push_back(last.y_check(i, c) / sd);
        TestVerdict v = ks_test_1d(z, standard_normal_cdf, tol.ks_alpha, "ks_y_check_" + std::to_string(c));
        v.context = context_of(cfg, last.n);
        out.verdicts.push_back(v);
      }
    }

    if (recorder) {
      const auto& times = recorder->result(PathKind::Ybar).times;
      const FddSamples ou_fast = ou_ensemble(fast, times, cfg.run.n_replicas, seed, kOuFastStream);
      const FddSamples ou_slow = ou_ensemble(slow, times, cfg.run.n_replicas, seed, kOuSlowStream);
      json fclt = json::array();
      auto check_autocov = [&](PathKind kind, const FddSamples& fdd, const LimitSpec& lim, double threshold) {
        for (std::size_t j = 0; j < times.size(); ++j) {
          const double lag = times[j];
          if (std::find(cfg.run.fclt_lags.begin(), cfg.run.fclt_lags.end(), lag) == cfg.run.fclt_lags.end()) continue;
          const Matrix est = autocov_estimate(fdd, 0, j);
          const Matrix ref = ou_autocov(lim, lag);
          auto ctx = context_of(cfg, recorder->first_index());
          ctx["lag"] = fmt_double(lag);
          out.verdicts.push_back(threshold_verdict(std::string("fclt_") + to_string(kind) + "_s" + fmt_double(lag),
                                                   frobenius_relative(est, ref), threshold, ctx));
          fclt.push_back({{"path", to_string(kind)}, {"lag", lag}, {"estimate", to_json(est)}, {"reference", to_json(ref)}});
        }
      };
      const FddSamples xbar = recorder->result(PathKind::Xbar);
      const FddSamples ybar = recorder->result(PathKind::Ybar);
      const FddSamples zbar = recorder->result(PathKind::Zbar);
      check_autocov(PathKind::Xbar, xbar, fast, tol.fclt);
      check_autocov(PathKind::Ybar, ybar, slow, tol.fclt);
      check_autocov(PathKind::Zbar, zbar, slow, tol.fclt);
      check_autocov(PathKind::OuFast, ou_fast, fast, tol.ou_oracle);
      check_autocov(PathKind::OuSlow, ou_slow, slow, tol.ou_oracle);
      report["fclt"] = {{"n0", recorder->first_index()}, {"times", times}, {"autocov", fclt}};
      if (csv_fdd) {
        write_fdd_csv_header(*csv_fdd);
        write_fdd_csv_rows(*csv_fdd, PathKind::Xbar, xbar);
        write_fdd_csv_rows(*csv_fdd, PathKind::Ybar, ybar);
        write_fdd_csv_rows(*csv_fdd, PathKind::Zbar, zbar);
        write_fdd_csv_rows(*csv_fdd, PathKind::OuFast, ou_fast);
        write_fdd_csv_rows(*csv_fdd, PathKind::OuSlow, ou_slow);
      }
    }

    if (has(cfg.suite, Suite::GtdCompare)) {
      const auto& sampler = p.noise.mdp;
      const ProblemSpec gtd2 = make_gtd(sampler, GtdVariant::Gtd2);
      const ProblemSpec tdc = make_gtd(sampler, GtdVariant::Tdc);
      const LimitSpec l2 = slow_limit(gtd2, sched);
      const LimitSpec lt = slow_limit(tdc, sched);
      const double limit_gap = std::max({(l2.drift - lt.drift).cwiseAbs().maxCoeff(),
                                         (l2.diffusion_cov - lt.diffusion_cov).cwiseAbs().maxCoeff(),
                                         (l2.stationary_cov - lt.stationary_cov).cwiseAbs().maxCoeff()});
      // The configured variant reuses the main ensemble; the other one gets
      // the next master seed so the two ensembles are independent.
      const bool main_is_gtd2 = p.kind == "gtd2";
      const ProblemSpec& other = main_is_gtd2 ? tdc : gtd2;
      RunConfig orc = rc;
      orc.master_seed = seed + 1;
      orc.checkpoints = {last.n};
      const EnsembleResult other_ens = run_ensemble(other, sched, orc);
      const Matrix cov_main = empirical_cov(last.y_check).matrix;
      const Matrix cov_other = empirical_cov(other_ens.snapshots.back().y_check).matrix;
      const Matrix& cov2 = main_is_gtd2 ? cov_main : cov_other;
      const Matrix& covt = main_is_gtd2 ? cov_other : cov_main;
      const auto ctx = context_of(cfg, last.n);
      report["gtd"] = {{"matrices", to_json(sampler->mats)},
                       {"y_star", vector_to_json(sampler->y_star)},
                       {"slow_limit_gtd2", to_json(l2)},
                       {"slow_limit_tdc", to_json(lt)},
                       {"cov_y_check_gtd2", to_json(cov2)},
                       {"cov_y_check_tdc", to_json(covt)},
                       {"diverged_other", other_ens.diverged.size()}};
      out.verdicts.push_back(threshold_verdict("gtd_identity", sampler->mats.identity_residual, tol.gtd_exact, ctx));
      out.verdicts.push_back(threshold_verdict("gtd_limit_equality", limit_gap, tol.gtd_exact, ctx));
      out.verdicts.push_back(threshold_verdict("gtd_between", frobenius_relative(cov2, covt), tol.gtd_between, ctx));
      out.verdicts.push_back(
          threshold_verdict("gtd2_vs_limit", frobenius_relative(cov2, l2.stationary_cov), tol.gtd_limit, ctx));
      out.verdicts.push_back(
          threshold_verdict("tdc_vs_limit", frobenius_relative(covt, lt.stationary_cov), tol.gtd_limit, ctx));
    }
  }

  json verdicts = json::array();
  bool all = true;
  for (const auto& v : out.verdicts) {
    verdicts.push_back(to_json(v));
    all = all && v.pass;
  }
  report["verdicts"] = verdicts;
  report["pass"] = all;
  out.exit_code = all ? kExitPass : kExitVerdictFailure;
  return out;
}

namespace detail {

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::filesystem::path prepare_output(const std::string& dir) {
  std::filesystem::path out(dir);
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec || !std::filesystem::is_directory(out))
    fail(ErrorCode::ConfigError, "output: cannot create directory '" + dir + "'");
  std::ofstream probe(out / ".write_probe");
  if (!probe) fail(ErrorCode::ConfigError, "output: directory '" + dir + "' is not writable");
  probe.close();
  std::filesystem::remove(out / ".write_probe", ec);
  return out;
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) fail(ErrorCode::ConfigError, "cannot write " + path.string());
  f << j.dump(2) << '\n';
}

inline int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::Diverged:
    case ErrorCode::TooManyDivergences: return kExitDivergence;
    default: return kExitConfigError;
  }
}

}  // namespace detail

/// Full pipeline behind `ttsa run`. Returns the process exit code.
inline int run_experiment(const std::string& config_path, const RunOptions& opts, std::ostream& log = std::cerr) {
  const auto started = std::chrono::steady_clock::now();
  try {
    const ExperimentConfig cfg = load_config(config_path);
    const std::string dir = opts.out.value_or(cfg.output);
    std::filesystem::path out;
    std::ofstream snapshots, fdd;
    if (opts.write_files) {
      out = detail::prepare_output(dir);
      if (cfg.run.write_snapshots) snapshots.open(out / "snapshots.csv");
      if (detail::has(cfg.suite, Suite::Fclt)) fdd.open(out / "fdd.csv");
    }
    const ExperimentOutcome outcome = run_suites(cfg, opts, snapshots.is_open() ? &snapshots : nullptr,
                                                 fdd.is_open() ? &fdd : nullptr);
    if (opts.write_files) {
      detail::write_json(out / "report.json", outcome.report);
      const double seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      detail::write_json(out / "metadata.json", {{"timestamp_utc", detail::utc_timestamp()},
                                                 {"threads", resolve_threads(opts.threads)},
                                                 {"wall_seconds", seconds},
                                                 {"config_path", config_path}});
    }
    for (const auto& v : outcome.verdicts)
      log << (v.pass ? "PASS " : "FAIL ") << v.name << " statistic=" << v.statistic << " threshold=" << v.threshold
          << (v.p_value ? " p=" + detail::fmt_double(*v.p_value) : std::string()) << '\n';
    return outcome.exit_code;
  } catch (const Error& e) {
    log << "error: " << e.what() << '\n';
    return detail::exit_code_for(e);
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kExitConfigError;
  }
}

/// Theory-only report: limits, beta_tilde, spectra and (for GTD problems)
/// the expected matrices.
inline json reference_report(const ExperimentConfig& cfg) {
  const ProblemSpec p = build_problem(cfg.problem);
  const StepSchedule sched = StepSchedule::polynomial(cfg.schedule);
  const auto lin = linearize(p);
  const Matrix slow_b = slow_drift(p, sched);
  const auto fast_spec = spectral_report(lin.b1);
  const auto slow_spec = spectral_report(slow_b);
  auto describe = [](const Matrix& m) {
    std::ostringstream os;
    os << json(matrix_to_rows(m)).dump();
    return os.str();
  };
  if (!fast_spec.hurwitz_for_negation)
    fail(ErrorCode::NotHurwitz, "fast drift B1 = " + describe(lin.b1) + " has eigenvalue real part " +
                                    std::to_string(fast_spec.min_real_part));
  if (!slow_spec.hurwitz_for_negation)
    fail(ErrorCode::NotHurwitz, "slow drift B3 - beta_tilde I / 2 = " + describe(slow_b) +
                                    " has eigenvalue real part " + std::to_string(slow_spec.min_real_part));
  json j = {{"problem", p.kind},
            {"beta_tilde", sched.beta_tilde()},
            {"linearization",
             {{"B1", to_json(lin.b1)}, {"B2", to_json(lin.b2)}, {"B3", to_json(lin.b3)}, {"H_star", to_json(lin.h_star)}}},
            {"fast", to_json(fast_limit(p))},
            {"slow", to_json(slow_limit(p, sched))},
            {"fast_drift_spectrum", to_json(fast_spec)},
            {"slow_drift_spectrum", to_json(slow_spec)},
            {"assumptions", to_json(sched.validate(p.orders))}};
  if (p.noise.kind == NoiseKind::GtdSampling) {
    j["gtd"] = to_json(p.noise.mdp->mats);
    j["gtd"]["y_star"] = detail::vector_to_json(p.noise.mdp->y_star);
  }
  return j;
}

/// `ttsa reference`: writes limits.json. Returns the process exit code.
inline int emit_reference(const std::string& config_path, const RunOptions& opts, std::ostream& log = std::cerr) {
  try {
    const ExperimentConfig cfg = load_config(config_path);
    const json j = reference_report(cfg);
    if (opts.write_files) {
      const auto out = detail::prepare_output(opts.out.value_or(cfg.output));
      detail::write_json(out / "limits.json", j);
    }
    return kExitPass;
  } catch (const Error& e) {
    log << "error: " << e.what() << '\n';
    return detail::exit_code_for(e);
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kExitConfigError;
  }
}

}  // namespace ttsa
