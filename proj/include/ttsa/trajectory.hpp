#pragma once

// Continuous piecewise-linear trajectories through rescaled sequences.
// A path started at index n places value m at time Gamma_{n,m} (fast steps
// for Xbar, slow steps for Ybar / Zbar) and interpolates linearly between.

#include <algorithm>
#include <cstddef>
#include <memory>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "ttsa/engine.hpp"
#include "ttsa/error.hpp"
#include "ttsa/linalg.hpp"
#include "ttsa/schedule.hpp"

namespace ttsa {

enum class PathKind { Xbar, Ybar, Zbar, OuFast, OuSlow };

inline const char* to_string(PathKind k) {
  switch (k) {
    case PathKind::Xbar: return "Xbar";
    case PathKind::Ybar: return "Ybar";
    case PathKind::Zbar: return "Zbar";
    case PathKind::OuFast: return "OU_fast";
    case PathKind::OuSlow: return "OU_slow";
  }
  return "?";
}

inline Scale scale_of(PathKind k) { return k == PathKind::Xbar ? Scale::Alpha : Scale::Beta; }

inline Quantity quantity_of(PathKind k) {
  switch (k) {
    case PathKind::Xbar: return Quantity::XCheck;
    case PathKind::Ybar: return Quantity::YCheck;
    case PathKind::Zbar: return Quantity::ZCheck;
    default: fail(ErrorCode::InvalidArgument, "OU paths are not built from engine sequences");
  }
}

namespace detail {

// Segment formula v_k + ((t - t_floor) / step) (v_{k+1} - v_k). At an anchor
// (t == t_floor) this returns v_k bit-exactly.
inline void interpolate(const Vector& lo, const Vector& hi, double t, double t_floor, double step, Vector& out) {
  const double w = (t - t_floor) / step;
  out = lo + w * (hi - lo);
}

}  // namespace detail

class PiecewiseLinearPath {
 public:
  PiecewiseLinearPath(Scale scale, std::size_t n, std::vector<Vector> values, StepSchedule sched)
      : scale_(scale), n_(n), values_(std::move(values)), sched_(std::move(sched)) {
    require(values_.size() >= 2, ErrorCode::InsufficientValues, "a path needs at least 2 values");
    const auto d = values_.front().size();
    for (const auto& v : values_)
      require(v.size() == d, ErrorCode::DimensionMismatch, "path values must share one dimension");
    times_.reserve(values_.size());
    for (std::size_t k = 0; k < values_.size(); ++k) times_.push_back(sched_.gamma_sum(scale_, n_, n_ + k));
  }

  Scale scale() const noexcept { return scale_; }
  std::size_t start_index() const noexcept { return n_; }
  Eigen::Index dim() const noexcept { return values_.front().size(); }
  const std::vector<double>& anchor_times() const noexcept { return times_; }
  const std::vector<Vector>& anchor_values() const noexcept { return values_; }
  double horizon() const noexcept { return times_.back(); }
  const StepSchedule& schedule() const noexcept { return sched_; }

  Vector operator()(double t) const {
    require(t >= 0.0 && t <= horizon(), ErrorCode::OutOfHorizon,
            "t = " + std::to_string(t) + " outside [0, " + std::to_string(horizon()) + "]");
    const auto loc = sched_.locate(scale_, n_, t);
    const std::size_t k = loc.index - n_;
    if (k + 1 >= values_.size()) return values_.back();  // t == horizon
    Vector out;
    detail::interpolate(values_[k], values_[k + 1], t, loc.t_floor, sched_.value(scale_, loc.index), out);
    return out;
  }

 private:
  Scale scale_;
  std::size_t n_;
  std::vector<Vector> values_;
  std::vector<double> times_;
  StepSchedule sched_;
};

inline PiecewiseLinearPath build_path(Scale scale, std::size_t n, std::vector<Vector> values,
                                      const StepSchedule& sched) {
  return PiecewiseLinearPath(scale, n, std::move(values), sched);
}

inline Vector eval_path(const PiecewiseLinearPath& path, double t) { return path(t); }

/// Samples of a path ensemble at fixed times: by_time[j] holds one row per
/// replica (ordered by replica id) with the path value at times[j].
struct FddSamples {
  std::vector<double> times;
  std::vector<std::size_t> replica_ids;
  std::vector<Matrix> by_time;

  std::size_t n_replicas() const noexcept { return replica_ids.size(); }
  Eigen::Index dim() const noexcept { return by_time.empty() ? 0 : by_time.front().cols(); }
};

inline FddSamples sample_fdd(const std::vector<PiecewiseLinearPath>& paths, const std::vector<double>& times) {
  require(!paths.empty(), ErrorCode::InsufficientSamples, "sample_fdd needs at least one path");
  FddSamples out;
  out.times = times;
  const auto rows = static_cast<Eigen::Index>(paths.size());
  const auto d = paths.front().dim();
  for (std::size_t r = 0; r < paths.size(); ++r) {
    require(paths[r].dim() == d, ErrorCode::DimensionMismatch, "paths differ in dimension");
    out.replica_ids.push_back(r);
  }
  for (double t : times) {
    Matrix m(rows, d);
    for (std::size_t r = 0; r < paths.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = paths[r](t).transpose();
    out.by_time.push_back(std::move(m));
  }
  return out;
}

/// Columns: path,replica_id,time,coord,value
inline void write_fdd_csv_header(std::ostream& os) { os << "path,replica_id,time,coord,value\n"; }

inline void write_fdd_csv_rows(std::ostream& os, PathKind kind, const FddSamples& fdd) {
  os.precision(17);
  for (std::size_t i = 0; i < fdd.replica_ids.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < fdd.times.size(); ++j) {
      const auto& m = fdd.by_time[j];
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        os << to_string(kind) << ',' << fdd.replica_ids[i] << ',' << fdd.times[j] << ',' << c << ','
           << m(row, c) << '\n';
      }
    }
  }
}

/// Streams Xbar / Ybar / Zbar samples at fixed times out of an ensemble run
/// without storing whole traces. Each replica keeps only the two anchor
/// values bracketing every requested time, then applies the same segment
/// formula as PiecewiseLinearPath.
class FddRecorder {
 public:
  FddRecorder(const StepSchedule& sched, std::size_t n0, std::vector<double> times, std::size_t n_replicas,
              Eigen::Index dim_x, Eigen::Index dim_y)
      : n0_(n0), times_(std::move(times)), n_replicas_(n_replicas) {
    require(n0 >= 1, ErrorCode::InvalidArgument, "path start index must be >= 1");
    require(!times_.empty(), ErrorCode::InvalidArgument, "no fdd times requested");
    for (double t : times_) require(t >= 0.0, ErrorCode::InvalidArgument, "fdd times must be >= 0");
    for (PathKind k : kKinds) {
      Plan& plan = plans_[index(k)];
      plan.kind = k;
      for (double t : times_) {
        const auto loc = sched.locate(scale_of(k), n0, t);
        plan.points.push_back({loc.index, loc.t_floor, sched.value(scale_of(k), loc.index), t});
        last_ = std::max(last_, loc.index + 1);
      }
      const Eigen::Index d = k == PathKind::Xbar ? dim_x : dim_y;
      plan.samples.assign(times_.size(), Matrix::Zero(static_cast<Eigen::Index>(n_replicas), d));
    }
    diverged_.assign(n_replicas, 0);
  }

  std::size_t first_index() const noexcept { return n0_; }
  /// Last engine index the recorder needs (n_iters must reach it).
  std::size_t last_index() const noexcept { return last_; }

  TraceRequest request() {
    TraceRequest req;
    req.first = n0_;
    req.last = last_;
    req.make_observer = [this](std::size_t replica) -> std::unique_ptr<ReplicaObserver> {
      return std::make_unique<Observer>(*this, replica);
    };
    return req;
  }

  FddSamples result(PathKind kind) const {
    const Plan& plan = plans_[index(kind)];
    FddSamples out;
    out.times = times_;
    for (std::size_t r = 0; r < n_replicas_; ++r)
      if (!diverged_[r]) out.replica_ids.push_back(r);
    for (const auto& m : plan.samples) {
      Matrix kept(static_cast<Eigen::Index>(out.replica_ids.size()), m.cols());
      for (std::size_t i = 0; i < out.replica_ids.size(); ++i)
        kept.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(out.replica_ids[i]));
      out.by_time.push_back(std::move(kept));
    }
    return out;
  }

 private:
  static constexpr PathKind kKinds[] = {PathKind::Xbar, PathKind::Ybar, PathKind::Zbar};
  static std::size_t index(PathKind k) { return static_cast<std::size_t>(k); }

  struct Point {
    std::size_t index;  // N(n0, t)
    double t_floor;
    double step;
    double t;
  };

  struct Plan {
    PathKind kind = PathKind::Xbar;
    std::vector<Point> points;
    std::vector<Matrix> samples;  // per time: replicas x dim
  };

  class Observer final : public ReplicaObserver {
   public:
    Observer(FddRecorder& owner, std::size_t replica) : owner_(owner), replica_(replica) {
      for (std::size_t p = 0; p < 3; ++p) {
        lo_[p].resize(owner.times_.size());
        hi_[p].resize(owner.times_.size());
      }
    }

    void on_rescaled(std::size_t n, const Rescaled& r) override {
      for (std::size_t p = 0; p < 3; ++p) {
        const Plan& plan = owner_.plans_[p];
        const Vector& v = get(r, quantity_of(plan.kind));
        for (std::size_t j = 0; j < plan.points.size(); ++j) {
          if (plan.points[j].index == n) lo_[p][j] = v;
          if (plan.points[j].index + 1 == n) hi_[p][j] = v;
        }
      }
    }

    void on_finish(bool diverged) override {
      if (diverged) {
        owner_.diverged_[replica_] = 1;
        return;
      }
      Vector out;
      for (std::size_t p = 0; p < 3; ++p) {
        Plan& plan = owner_.plans_[p];
        for (std::size_t j = 0; j < plan.points.size(); ++j) {
          const Point& pt = plan.points[j];
          detail::interpolate(lo_[p][j], hi_[p][j], pt.t, pt.t_floor, pt.step, out);
          plan.samples[j].row(static_cast<Eigen::Index>(replica_)) = out.transpose();
        }
      }
    }

   private:
    FddRecorder& owner_;
    std::size_t replica_;
    std::vector<Vector> lo_[3];
    std::vector<Vector> hi_[3];
  };

  std::size_t n0_;
  std::vector<double> times_;
  std::size_t n_replicas_;
  std::size_t last_ = 0;
  Plan plans_[3];
  std::vector<char> diverged_;  // one slot per replica; written by that replica only
};

}  // namespace ttsa
