// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
// (also saved to acceptance_out/summary.txt) and exits nonzero if any
// criterion fails. Pass criterion numbers as arguments
// to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ttsa/ttsa.hpp"

using namespace ttsa;
namespace fs = std::filesystem;

namespace {

const std::string kSource = TTSA_SOURCE_DIR;

std::string config_path(const std::string& name) { return kSource + "/configs/" + name; }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Matrix as_matrix(const json& j) { return matrix_from_rows(j.get<std::vector<std::vector<double>>>()); }

const json* find_verdict(const json& report, const std::string& name) {
  for (const auto& v : report.at("verdicts"))
    if (v.at("name") == name) return &v;
  return nullptr;
}

double stat(const json& report, const std::string& name) {
  const json* v = find_verdict(report, name);
  if (!v) throw std::runtime_error("verdict " + name + " missing from report");
  return v->at("statistic").get<double>();
}

fs::path work_dir() {
  const fs::path dir = fs::current_path() / "acceptance_out";
  fs::create_directories(dir);
  return dir;
}

// Criterion 2's config run once per thread count; criteria 2, 3, 4, 9 and 11
// read these reports.
struct BenchmarkRuns {
  bool done = false;
  int exit1 = -1, exit8 = -1;
  json report;
  std::string bytes1, bytes8;
  double seconds1 = 0.0;
};

BenchmarkRuns& benchmark() {
  static BenchmarkRuns runs;
  if (runs.done) return runs;
  const auto dir = work_dir();
  for (unsigned threads : {1u, 8u}) {
    RunOptions opts;
    opts.threads = threads;
    opts.out = (dir / ("linear_benchmark_t" + std::to_string(threads))).string();
    std::ostringstream log;
    const auto t0 = std::chrono::steady_clock::now();
    const int code = run_experiment(config_path("linear_benchmark.json"), opts, log);
    const std::string bytes = read_text(fs::path(*opts.out) / "report.json");
    if (threads == 1) {
      runs.exit1 = code;
      runs.bytes1 = bytes;
      runs.seconds1 = seconds_since(t0);
      runs.report = json::parse(bytes);
    } else {
      runs.exit8 = code;
      runs.bytes8 = bytes;
    }
  }
  runs.done = true;
  return runs;
}

// ---------------------------------------------------------------------------

Outcome lyapunov_random() {
  const auto t0 = std::chrono::steady_clock::now();
  CounterRng rng(1, 0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto d = static_cast<Eigen::Index>(1 + trial % 8);
    Matrix b = Matrix::NullaryExpr(d, d, [&](Eigen::Index, Eigen::Index) { return rng.normal(); });
    const auto spec = spectral_report(b);
    b += (0.1 + std::max(0.0, -spec.min_real_part)) * Matrix::Identity(d, d);
    const Matrix l = Matrix::NullaryExpr(d, d, [&](Eigen::Index, Eigen::Index) { return rng.normal(); });
    const Matrix c = l * l.transpose();
    const Matrix sigma = solve_lyapunov(b, c);
    worst = std::max(worst, lyapunov_residual(b, sigma, c) / (1.0 + c.norm()));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-10 && secs < 1.0, "max scaled residual " + num(worst) + ", " + num(secs) + " s"};
}

Outcome clt_covariance() {
  const auto& r = benchmark();
  const double ex = stat(r.report, "cov_x_check");
  const double ey = stat(r.report, "cov_y_check");
  const double ez = stat(r.report, "cov_z_check");
  return {ex <= 0.10 && ey <= 0.10 && ez <= 0.10,
          "rel err x " + num(ex) + ", y " + num(ey) + ", z " + num(ez) + " (limit 0.10), run " + num(r.seconds1) + " s"};
}

Outcome decoupled_rates() {
  const auto& rates = benchmark().report.at("rates");
  const double sx = rates.at("x").at("slope"), sy = rates.at("y").at("slope");
  const double rx = rates.at("x").at("r_squared"), ry = rates.at("y").at("r_squared");
  const bool ok = sx >= 0.9 && sx <= 1.1 && sy >= 0.9 && sy <= 1.1 && rx > 0.98 && ry > 0.98;
  return {ok, "slope x " + num(sx) + " (r2 " + num(rx) + "), y " + num(sy) + " (r2 " + num(ry) + ")"};
}

Outcome fclt_autocov() {
  const auto& rep = benchmark().report;
  double sim = 0.0, oracle = 0.0;
  for (const char* lag : {"0.25", "0.5", "1"}) {
    for (const char* path : {"Xbar", "Ybar"}) sim = std::max(sim, stat(rep, std::string("fclt_") + path + "_s" + lag));
    for (const char* path : {"OU_fast", "OU_slow"})
      oracle = std::max(oracle, stat(rep, std::string("fclt_") + path + "_s" + lag));
  }
  return {sim <= 0.15 && oracle <= 0.05,
          "worst Xbar/Ybar rel err " + num(sim) + " (limit 0.15), OU oracle " + num(oracle) + " (limit 0.05), n0 " +
              std::to_string(rep.at("fclt").at("n0").get<std::size_t>())};
}

Outcome marginal_normality() {
  const auto cfg = load_config(config_path("linear_benchmark.json"));
  const ProblemSpec p = build_problem(cfg.problem);
  const StepSchedule sched = StepSchedule::polynomial(cfg.schedule);
  const LimitSpec slow = slow_limit(p, sched);
  std::vector<int> passes(p.dim_y, 0);
  std::string ps;
  for (std::uint64_t s = 0; s < 10; ++s) {
    RunConfig rc;
    rc.n_iters = cfg.run.n_iters;
    rc.master_seed = 1000 + s;
    rc.n_replicas = 2000;
    rc.checkpoints = {cfg.run.n_iters};
    const auto ens = run_ensemble(p, sched, rc);
    const Matrix& y = ens.snapshots.back().y_check;
    for (Eigen::Index c = 0; c < y.cols(); ++c) {
      std::vector<double> z;
      for (Eigen::Index i = 0; i < y.rows(); ++i) z.push_back(y(i, c) / std::sqrt(slow.stationary_cov(c, c)));
      const auto v = ks_test_1d(z, standard_normal_cdf, 0.01);
      if (v.pass) ++passes[static_cast<std::size_t>(c)];
      ps += (ps.empty() ? "" : " ") + num(*v.p_value);
    }
  }
  bool ok = true;
  std::string counts;
  for (std::size_t c = 0; c < passes.size(); ++c) {
    ok = ok && passes[c] >= 9;
    counts += (c ? ", " : "") + std::string("coord ") + std::to_string(c) + ": " + std::to_string(passes[c]) + "/10";
  }
  return {ok, counts + " seeds with p > 0.01 (2000 replicas each); p = " + ps};
}

Outcome pr_averaging() {
  const auto cfg = load_config(config_path("pr_averaging.json"));
  const ProblemSpec p = build_problem(cfg.problem);
  const StepSchedule sched = StepSchedule::polynomial(cfg.schedule);
  const LimitSpec slow = slow_limit(p, sched);
  const Matrix want = Matrix(Vector((Vector(2) << 1.0, 0.25).finished()).asDiagonal());
  const bool drift_exact = slow.drift == 0.5 * Matrix::Identity(2, 2);
  const double sigma_err = (slow.stationary_cov - want).cwiseAbs().maxCoeff();
  RunConfig rc;
  rc.n_iters = cfg.run.n_iters;
  rc.master_seed = cfg.run.master_seed;
  rc.n_replicas = cfg.run.n_replicas;
  rc.checkpoints = {cfg.run.n_iters};
  const auto ens = run_ensemble(p, sched, rc);
  const double mc = frobenius_relative(empirical_cov(ens.snapshots.back().y_check).matrix, slow.stationary_cov);
  return {drift_exact && sigma_err < 1e-12 && mc <= 0.10,
          std::string("drift 0.5 I ") + (drift_exact ? "exact" : "inexact") + ", |Sigma_y - diag(1, 0.25)| " +
              num(sigma_err) + ", Monte Carlo rel err " + num(mc) + " (limit 0.10)"};
}

Outcome shb_reference() {
  const auto dir = work_dir() / "shb_reference";
  RunOptions opts;
  opts.out = dir.string();
  std::ostringstream log;
  const int code = emit_reference(config_path("shb_reference.json"), opts, log);
  if (code != kExitPass) return {false, "reference exited " + std::to_string(code) + ": " + log.str()};
  const json limits = read_json(dir / "limits.json");
  const auto cfg = load_config(config_path("shb_reference.json"));
  const Matrix sxi = as_matrix(cfg.problem.at("sigma_xi"));
  const double e_slow = (as_matrix(limits.at("slow").at("diffusion_cov")) - sxi).cwiseAbs().maxCoeff();
  const double e_fast = (as_matrix(limits.at("fast").at("stationary_cov")) - 0.5 * sxi).cwiseAbs().maxCoeff();
  return {e_slow == 0.0 && e_fast < 1e-14,
          "|slow diffusion - Sigma_xi| " + num(e_slow) + ", |fast Sigma - Sigma_xi/2| " + num(e_fast)};
}

Outcome gtd_compare() {
  const auto t0 = std::chrono::steady_clock::now();
  RunOptions opts;
  opts.out = (work_dir() / "gtd2").string();
  std::ostringstream log;
  const int code = run_experiment(config_path("gtd2.json"), opts, log);
  const double secs = seconds_since(t0);
  if (code == kExitConfigError || code == kExitDivergence) return {false, "run exited " + std::to_string(code)};
  const json rep = read_json(fs::path(*opts.out) / "report.json");
  const double id = stat(rep, "gtd_identity"), eq = stat(rep, "gtd_limit_equality");
  const double between = stat(rep, "gtd_between");
  const double l2 = stat(rep, "gtd2_vs_limit"), lt = stat(rep, "tdc_vs_limit");
  const bool ok = id <= 1e-10 && eq <= 1e-10 && between <= 0.08 && l2 <= 0.12 && lt <= 0.12 && secs <= 600.0;
  return {ok, "identity " + num(id) + ", limit gap " + num(eq) + ", GTD2 vs TDC " + num(between) +
                  " (limit 0.08), vs Sigma_y " + num(l2) + " / " + num(lt) + " (limit 0.12), " + num(secs) + " s"};
}

Outcome auxiliary() {
  const auto& rep = benchmark().report;
  const double ratio = stat(rep, "aux_ratio_bounded"), gap = stat(rep, "aux_final_gap");
  return {ratio < 3.0 && gap < 0.1, "max/median " + num(ratio) + " (limit 3), final gap ratio " + num(gap) +
                                         " (limit 0.1)"};
}

Outcome assumption_validator() {
  RunOptions opts;
  opts.write_files = false;
  const auto ok = run_suites(load_config(config_path("assumptions_pass.json")), opts);
  const auto bad = run_suites(load_config(config_path("assumptions_fail.json")), opts);
  bool bad_v = false, others_ok = true;
  std::string reason;
  for (const auto& v : bad.verdicts) {
    if (v.name == "assumption_v") {
      bad_v = !v.pass;
      reason = v.context.at("reason");
    } else {
      others_ok = others_ok && v.pass;
    }
  }
  const bool pass = ok.exit_code == kExitPass && bad.exit_code == kExitVerdictFailure && bad_v && others_ok;
  return {pass, "pass config exit " + std::to_string(ok.exit_code) + "; fail config exit " +
                    std::to_string(bad.exit_code) + ", condition (v): " + reason};
}

Outcome determinism() {
  const auto& r = benchmark();
  const bool same = !r.bytes1.empty() && r.bytes1 == r.bytes8;
  return {same, "report.json " + std::to_string(r.bytes1.size()) + " bytes, threads 1 vs 8 " +
                    (same ? "identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"Lyapunov solver on 100 random stable instances", lyapunov_random},
      {"Decoupled CLT covariances on the linear benchmark", clt_covariance},
      {"Decoupled convergence rates", decoupled_rates},
      {"FCLT autocovariance of Xbar / Ybar", fclt_autocov},
      {"Marginal normality of y_check over 10 seeds", marginal_normality},
      {"Polyak-Ruppert averaging limit", pr_averaging},
      {"Heavy-ball reference limits", shb_reference},
      {"GTD2 / TDC equivalence", gtd_compare},
      {"Auxiliary-sequence decoupling", auxiliary},
      {"Assumption validator verdicts", assumption_validator},
      {"Report determinism across thread counts", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));
  int failures = 0;
  std::ofstream summary(work_dir() / "summary.txt");
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::ostringstream line;
    line << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << criteria[k].first << " -- " << o.detail;
    std::cout << line.str() << std::endl;
    summary << line.str() << '\n' << std::flush;
  }
  const std::string tail =
      failures == 0 ? "all selected criteria passed" : std::to_string(failures) + " criteria failed";
  std::cout << tail << std::endl;
  summary << tail << '\n';
  return failures == 0 ? 0 : 1;
}
