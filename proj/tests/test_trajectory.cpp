#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "support.hpp"
#include "ttsa/engine.hpp"
#include "ttsa/limits.hpp"
#include "ttsa/stats.hpp"
#include "ttsa/trajectory.hpp"

using namespace ttsa;

namespace {

Vector s(double v) { return Vector::Constant(1, v); }

// alpha_k = 1 / (k + 1)
StepSchedule harmonic() { return StepSchedule::polynomial(1.0, 1.0, 1.0, 1.0); }

}  // namespace

TEST(Path, AnchorTimes) {
  const auto path = build_path(Scale::Alpha, 1, {s(0), s(1), s(3)}, harmonic());
  ASSERT_EQ(path.anchor_times().size(), 3u);
  EXPECT_DOUBLE_EQ(path.anchor_times()[0], 0.0);
  EXPECT_DOUBLE_EQ(path.anchor_times()[1], 0.5);
  EXPECT_DOUBLE_EQ(path.anchor_times()[2], 0.5 + 1.0 / 3.0);
}

TEST(Path, HandEvaluatedSegment) {
  const auto path = build_path(Scale::Alpha, 1, {s(0), s(1), s(3)}, harmonic());
  EXPECT_NEAR(eval_path(path, 0.7)[0], 2.2, 1e-12);
  EXPECT_DOUBLE_EQ(eval_path(path, 0.25)[0], 0.5);  // segment midpoint
}

TEST(Path, AnchorsAreExact) {
  CounterRng rng(3, 0);
  std::vector<Vector> values;
  for (int k = 0; k < 200; ++k) values.push_back(Vector::NullaryExpr(2, [&](Eigen::Index) { return rng.normal(); }));
  const auto path = build_path(Scale::Beta, 7, values, StepSchedule::polynomial(1.0, 0.6, 0.7, 0.9));
  for (std::size_t k = 0; k < values.size(); ++k) EXPECT_EQ(path(path.anchor_times()[k]), values[k]) << k;
}

TEST(Path, LipschitzOnSegments) {
  CounterRng rng(4, 0);
  std::vector<Vector> values;
  for (int k = 0; k < 100; ++k) values.push_back(s(rng.normal()));
  const auto sched = StepSchedule::polynomial(1.0, 0.6, 1.0, 0.9);
  const auto path = build_path(Scale::Alpha, 3, values, sched);
  const auto& times = path.anchor_times();
  for (int trial = 0; trial < 500; ++trial) {
    const double t = rng.uniform() * path.horizon();
    const auto loc = sched.locate(Scale::Alpha, 3, t);
    const std::size_t k = loc.index - 3;
    if (k + 1 >= values.size()) continue;
    const double step = times[k + 1] - times[k];
    const double eps = 0.25 * (times[k + 1] - t);
    const double slope = std::abs(values[k + 1][0] - values[k][0]) / step;
    EXPECT_LE(std::abs(path(t + eps)[0] - path(t)[0]), slope * eps * (1.0 + 1e-9) + 1e-15);
  }
}

TEST(Path, Errors) {
  EXPECT_THROW(build_path(Scale::Alpha, 1, {s(0)}, harmonic()), Error);
  const auto path = build_path(Scale::Alpha, 1, {s(0), s(1)}, harmonic());
  try {
    path(0.6);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OutOfHorizon);
  }
  EXPECT_THROW(path(-0.1), Error);
  EXPECT_EQ(path(0.5), s(1));
}

TEST(Path, ReconstructsEngineSequence) {
  const auto p = make_linear(ttsa::testing::linear_benchmark());
  const auto sched = StepSchedule::polynomial(2.0, 0.6, 2.0, 0.9);
  RunConfig cfg;
  cfg.n_iters = 300;
  cfg.n_replicas = 1;
  cfg.master_seed = 9;
  for (std::size_t n = 100; n <= 300; ++n) cfg.checkpoints.push_back(n);
  const auto res = run_ensemble(p, sched, cfg);
  std::vector<Vector> xs, ys;
  for (const auto& snap : res.snapshots) {
    xs.push_back(snap.x_check.row(0).transpose());
    ys.push_back(snap.y_check.row(0).transpose());
  }
  const auto px = build_path(Scale::Alpha, 100, xs, sched);
  const auto py = build_path(Scale::Beta, 100, ys, sched);
  for (std::size_t m = 100; m <= 300; ++m) {
    EXPECT_EQ(px(sched.gamma_sum(Scale::Alpha, 100, m)), xs[m - 100]);
    EXPECT_EQ(py(sched.gamma_sum(Scale::Beta, 100, m)), ys[m - 100]);
  }
}

TEST(Fdd, TimeZeroAndAnchors) {
  const auto sched = harmonic();
  std::vector<PiecewiseLinearPath> paths;
  paths.push_back(build_path(Scale::Alpha, 1, {s(2), s(4), s(8)}, sched));
  paths.push_back(build_path(Scale::Alpha, 1, {s(-1), s(0), s(1)}, sched));
  const auto fdd = sample_fdd(paths, {0.0, 0.5});
  EXPECT_EQ(fdd.replica_ids, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(fdd.by_time[0](0, 0), 2.0);
  EXPECT_EQ(fdd.by_time[0](1, 0), -1.0);
  EXPECT_EQ(fdd.by_time[1](0, 0), 4.0);
  EXPECT_THROW(sample_fdd(paths, {5.0}), Error);
}

TEST(Fdd, RecorderMatchesFullPaths) {
  const auto p = make_linear(ttsa::testing::linear_benchmark());
  const auto sched = StepSchedule::polynomial(2.0, 0.6, 2.0, 0.9);
  const std::size_t n0 = 50;
  const std::vector<double> times = {0.0, 0.3, 0.61, 1.0};
  const std::size_t replicas = 4;
  FddRecorder rec(sched, n0, times, replicas, 2, 2);
  RunConfig cfg;
  cfg.n_iters = rec.last_index();
  cfg.n_replicas = replicas;
  cfg.master_seed = 21;
  for (std::size_t n = n0; n <= cfg.n_iters; ++n) cfg.checkpoints.push_back(n);
  const auto req = rec.request();
  const auto res = run_ensemble(p, sched, cfg, &req);
  for (PathKind kind : {PathKind::Xbar, PathKind::Ybar, PathKind::Zbar}) {
    std::vector<PiecewiseLinearPath> paths;
    for (std::size_t r = 0; r < replicas; ++r) {
      std::vector<Vector> vals;
      for (const auto& snap : res.snapshots)
        vals.push_back(snap.get(quantity_of(kind)).row(static_cast<Eigen::Index>(r)).transpose());
      paths.push_back(build_path(scale_of(kind), n0, vals, sched));
    }
    const auto full = sample_fdd(paths, times);
    const auto streamed = rec.result(kind);
    for (std::size_t j = 0; j < times.size(); ++j)
      EXPECT_EQ(full.by_time[j], streamed.by_time[j]) << to_string(kind) << " t=" << times[j];
  }
}

TEST(Fdd, OuReferenceCrossCovariance) {
  const auto lim = make_limit_spec(Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 1.0));
  ASSERT_DOUBLE_EQ(lim.stationary_cov(0, 0), 0.5);
  const OuPathSampler sampler(lim, {0.0, 1.0});
  FddSamples fdd;
  fdd.times = {0.0, 1.0};
  // 1e4 paths leave a relative standard error near 3%; 1e5 keeps the 5%
  // band several standard errors wide.
  const std::size_t r = 100000;
  fdd.by_time.assign(2, Matrix(r, 1));
  for (std::size_t i = 0; i < r; ++i) {
    CounterRng rng(99, i);
    const auto path = sampler.sample(rng, OuStart::Stationary);
    fdd.replica_ids.push_back(i);
    fdd.by_time[0](static_cast<Eigen::Index>(i), 0) = path[0][0];
    fdd.by_time[1](static_cast<Eigen::Index>(i), 0) = path[1][0];
  }
  const double want = 0.5 * std::exp(-1.0);
  EXPECT_LT(std::abs(autocov_estimate(fdd, 0, 1)(0, 0) - want) / want, 0.05);
}

TEST(Fdd, CsvRows) {
  FddSamples fdd;
  fdd.times = {0.0, 0.5};
  fdd.replica_ids = {3};
  fdd.by_time = {Matrix::Constant(1, 2, 1.0), Matrix::Constant(1, 2, 2.0)};
  std::ostringstream os;
  write_fdd_csv_header(os);
  write_fdd_csv_rows(os, PathKind::Ybar, fdd);
  EXPECT_EQ(os.str(),
            "path,replica_id,time,coord,value\n"
            "Ybar,3,0,0,1\nYbar,3,0,1,1\nYbar,3,0.5,0,2\nYbar,3,0.5,1,2\n");
}
