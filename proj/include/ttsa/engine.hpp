#pragma once

// The coupled iteration
//   x_{n+1} = x_n - alpha_n (F(x_n, y_n) + xi_n)
//   y_{n+1} = y_n - beta_n  (G(x_n, y_n) + psi_n)
// its error / rescaled / auxiliary sequences, and reproducible Monte Carlo
// ensembles of independent replicas.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "ttsa/error.hpp"
#include "ttsa/linalg.hpp"
#include "ttsa/problem.hpp"
#include "ttsa/rng.hpp"
#include "ttsa/schedule.hpp"

namespace ttsa {

inline constexpr double kDivergenceThreshold = 1e12;
inline constexpr double kMaxDivergedFraction = 0.01;

struct RunConfig {
  std::size_t n_iters = 0;
  std::uint64_t master_seed = 0;
  std::size_t n_replicas = 1;
  std::vector<std::size_t> checkpoints;
  Vector initial_offset_x;  // empty: 1.0 in every coordinate
  Vector initial_offset_y;
  unsigned threads = 0;  // 0: hardware concurrency
};

inline void validate_run_config(const RunConfig& cfg) {
  require(cfg.n_replicas > 0, ErrorCode::InvalidArgument, "n_replicas must be positive");
  for (std::size_t i = 0; i < cfg.checkpoints.size(); ++i) {
    const auto c = cfg.checkpoints[i];
    require(c >= 1 && c <= cfg.n_iters, ErrorCode::InvalidArgument,
            "checkpoint " + std::to_string(c) + " outside [1, n_iters]");
    require(i == 0 || c > cfg.checkpoints[i - 1], ErrorCode::InvalidArgument,
            "checkpoints must be strictly increasing");
  }
}

struct IterateState {
  std::size_t n = 0;
  Vector x;
  Vector y;
};

/// x_hat = x - H(y), y_hat = y - y_star, x_check = x_hat / sqrt(alpha_{n-1}),
/// y_check = y_hat / sqrt(beta_{n-1}),
/// z_check = y_check - sqrt(kappa_{n-1}) B2 B1^{-1} x_check.
struct Rescaled {
  Vector x_hat;
  Vector y_hat;
  Vector x_check;
  Vector y_check;
  Vector z_check;
};

enum class Quantity { XHat, YHat, XCheck, YCheck, ZCheck };

inline constexpr Quantity kAllQuantities[] = {Quantity::XHat, Quantity::YHat, Quantity::XCheck,
                                              Quantity::YCheck, Quantity::ZCheck};

inline const char* to_string(Quantity q) {
  switch (q) {
    case Quantity::XHat: return "x_hat";
    case Quantity::YHat: return "y_hat";
    case Quantity::XCheck: return "x_check";
    case Quantity::YCheck: return "y_check";
    case Quantity::ZCheck: return "z_check";
  }
  return "?";
}

inline const Vector& get(const Rescaled& r, Quantity q) {
  switch (q) {
    case Quantity::XHat: return r.x_hat;
    case Quantity::YHat: return r.y_hat;
    case Quantity::XCheck: return r.x_check;
    case Quantity::YCheck: return r.y_check;
    case Quantity::ZCheck: return r.z_check;
  }
  return r.x_hat;
}

/// Holds B2 B1^{-1} so repeated rescaling does not refactor B1.
class Rescaler {
 public:
  Rescaler(const ProblemSpec& p, const StepSchedule& sched) : p_(&p), sched_(&sched) {
    const auto lin = linearize(p);
    Eigen::FullPivLU<Matrix> lu(lin.b1);
    require(lu.isInvertible(), ErrorCode::SingularB1, "B1 is singular");
    correction_ = lin.b2 * lu.inverse();
  }

  const Matrix& correction() const noexcept { return correction_; }

  void compute(std::size_t n, const Vector& x, const Vector& y, Rescaled& out) const {
    require(n >= 1, ErrorCode::IndexOutOfRange, "rescaled quantities need n >= 1");
    const auto dx = static_cast<Eigen::Index>(p_->dim_x);
    out.x_hat.resize(dx);
    p_->h(y, out.x_hat);
    out.x_hat = x - out.x_hat;
    out.y_hat = y - p_->y_star;
    const Step prev = sched_->step_at(n - 1);
    out.x_check = out.x_hat / std::sqrt(prev.alpha);
    out.y_check = out.y_hat / std::sqrt(prev.beta);
    out.z_check = out.y_check;
    out.z_check.noalias() -= std::sqrt(prev.kappa) * (correction_ * out.x_check);
  }

 private:
  const ProblemSpec* p_;
  const StepSchedule* sched_;
  Matrix correction_;
};

inline Rescaled rescale(const ProblemSpec& p, const StepSchedule& sched, std::size_t n, const Vector& x,
                        const Vector& y) {
  require(n >= 1, ErrorCode::IndexOutOfRange, "rescale at n = 0: alpha_{n-1} is undefined");
  require_dims(p, x, y);
  Rescaled r;
  Rescaler(p, sched).compute(n, x, y, r);
  return r;
}

/// Reusable buffers for the hot loop.
class Stepper {
 public:
  explicit Stepper(const ProblemSpec& p)
      : p_(&p),
        fv_(static_cast<Eigen::Index>(p.dim_x)),
        gv_(static_cast<Eigen::Index>(p.dim_y)),
        xi_(static_cast<Eigen::Index>(p.dim_x)),
        psi_(static_cast<Eigen::Index>(p.dim_y)),
        scratch_(static_cast<Eigen::Index>(p.dim_x + p.dim_y)) {}

  /// Advances (x, y) by one synchronous step. Returns false when any
  /// coordinate leaves the finite ball of radius 1e12.
  bool advance(const StepSchedule& sched, std::size_t n, Vector& x, Vector& y, CounterRng& rng) {
    const auto& p = *p_;
    p.f(x, y, fv_);
    p.g(x, y, gv_);
    sample_noise_into(p, rng, x, y, xi_, psi_, scratch_);
    const Step s = sched.step_at(n);
    x -= s.alpha * (fv_ + xi_);
    y -= s.beta * (gv_ + psi_);
    return within_bounds(x) && within_bounds(y);
  }

  static bool within_bounds(const Vector& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (!(std::abs(v[i]) <= kDivergenceThreshold)) return false;
    return true;
  }

 private:
  const ProblemSpec* p_;
  Vector fv_, gv_, xi_, psi_, scratch_;
};

inline IterateState step_once(const ProblemSpec& p, const StepSchedule& sched, const IterateState& s,
                              CounterRng& rng) {
  require_dims(p, s.x, s.y);
  IterateState next{s.n + 1, s.x, s.y};
  Stepper stepper(p);
  if (!stepper.advance(sched, s.n, next.x, next.y, rng))
    fail(ErrorCode::Diverged, "iterate left the 1e12 ball at step " + std::to_string(s.n));
  return next;
}

inline IterateState initial_state(const ProblemSpec& p, const RunConfig& cfg) {
  const auto dx = static_cast<Eigen::Index>(p.dim_x);
  const auto dy = static_cast<Eigen::Index>(p.dim_y);
  const Vector ox = cfg.initial_offset_x.size() == 0 ? Vector::Ones(dx) : cfg.initial_offset_x;
  const Vector oy = cfg.initial_offset_y.size() == 0 ? Vector::Ones(dy) : cfg.initial_offset_y;
  require(ox.size() == dx && oy.size() == dy, ErrorCode::DimensionMismatch, "initial offsets");
  return {0, p.x_star + ox, p.y_star + oy};
}

// ---------------------------------------------------------------------------
// Ensembles.

struct EnsembleSnapshot {
  std::size_t n = 0;
  std::vector<std::size_t> replica_ids;
  // One row per surviving replica, in replica-id order.
  Matrix x_hat, y_hat, x_check, y_check, z_check;

  const Matrix& get(Quantity q) const {
    switch (q) {
      case Quantity::XHat: return x_hat;
      case Quantity::YHat: return y_hat;
      case Quantity::XCheck: return x_check;
      case Quantity::YCheck: return y_check;
      case Quantity::ZCheck: return z_check;
    }
    return x_hat;
  }
};

struct EnsembleResult {
  std::size_t n_replicas = 0;
  std::vector<std::size_t> diverged;  // replica ids
  std::vector<EnsembleSnapshot> snapshots;

  const EnsembleSnapshot& at(std::size_t n) const {
    for (const auto& s : snapshots)
      if (s.n == n) return s;
    fail(ErrorCode::IndexOutOfRange, "no snapshot at checkpoint " + std::to_string(n));
  }
};

/// Receives one replica's rescaled vectors for every n inside a trace window.
class ReplicaObserver {
 public:
  virtual ~ReplicaObserver() = default;
  virtual void on_rescaled(std::size_t n, const Rescaled& r) = 0;
  /// Called once the replica has finished (or diverged).
  virtual void on_finish(bool diverged) = 0;
};

struct TraceRequest {
  std::size_t first = 1;
  std::size_t last = 1;
  std::function<std::unique_ptr<ReplicaObserver>(std::size_t replica)> make_observer;
};

inline unsigned resolve_threads(unsigned requested) {
  if (requested != 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Work items are
/// independent, so the outcome does not depend on scheduling.
inline void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), count));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next.store(count);
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

namespace detail {

struct ReplicaRecord {
  bool diverged = false;
  std::vector<Rescaled> checkpoints;
};

inline ReplicaRecord run_replica(const ProblemSpec& p, const StepSchedule& sched, const RunConfig& cfg,
                                 const Rescaler& rescaler, std::size_t replica, const TraceRequest* trace) {
  ReplicaRecord rec;
  rec.checkpoints.reserve(cfg.checkpoints.size());
  CounterRng rng(cfg.master_seed, replica);
  IterateState s = initial_state(p, cfg);
  Stepper stepper(p);
  std::unique_ptr<ReplicaObserver> observer;
  if (trace && trace->make_observer) observer = trace->make_observer(replica);
  Rescaled r;
  std::size_t next_cp = 0;
  for (std::size_t n = 0; n < cfg.n_iters; ++n) {
    if (!stepper.advance(sched, n, s.x, s.y, rng)) {
      rec.diverged = true;
      break;
    }
    const std::size_t m = n + 1;  // index of the iterate just produced
    const bool is_cp = next_cp < cfg.checkpoints.size() && cfg.checkpoints[next_cp] == m;
    const bool in_trace = observer && m >= trace->first && m <= trace->last;
    if (!is_cp && !in_trace) continue;
    rescaler.compute(m, s.x, s.y, r);
    if (is_cp) {
      rec.checkpoints.push_back(r);
      ++next_cp;
    }
    if (in_trace) observer->on_rescaled(m, r);
  }
  if (observer) observer->on_finish(rec.diverged);
  return rec;
}

}  // namespace detail

/// Runs cfg.n_replicas independent replicas; replica r draws from the
/// counter-based stream (master_seed, r). Diverged replicas are excluded
/// from the snapshots and listed in `diverged`.
inline EnsembleResult run_ensemble(const ProblemSpec& p, const StepSchedule& sched, const RunConfig& cfg,
                                   const TraceRequest* trace = nullptr) {
  validate_run_config(cfg);
  if (trace) {
    require(trace->first >= 1 && trace->first <= trace->last && trace->last <= cfg.n_iters,
            ErrorCode::InvalidArgument, "trace window must lie inside [1, n_iters]");
  }
  const Rescaler rescaler(p, sched);
  std::vector<detail::ReplicaRecord> records(cfg.n_replicas);
  parallel_for(cfg.n_replicas, resolve_threads(cfg.threads), [&](std::size_t r) {
    records[r] = detail::run_replica(p, sched, cfg, rescaler, r, trace);
  });

  EnsembleResult out;
  out.n_replicas = cfg.n_replicas;
  for (std::size_t r = 0; r < records.size(); ++r)
    if (records[r].diverged) out.diverged.push_back(r);
  const auto limit = static_cast<std::size_t>(kMaxDivergedFraction * static_cast<double>(cfg.n_replicas));
  require(out.diverged.size() <= limit, ErrorCode::TooManyDivergences,
          std::to_string(out.diverged.size()) + " of " + std::to_string(cfg.n_replicas) +
              " replicas diverged");

  const auto survivors = static_cast<Eigen::Index>(cfg.n_replicas - out.diverged.size());
  const auto dx = static_cast<Eigen::Index>(p.dim_x);
  const auto dy = static_cast<Eigen::Index>(p.dim_y);
  for (std::size_t k = 0; k < cfg.checkpoints.size(); ++k) {
    EnsembleSnapshot snap;
    snap.n = cfg.checkpoints[k];
    snap.x_hat.resize(survivors, dx);
    snap.x_check.resize(survivors, dx);
    snap.y_hat.resize(survivors, dy);
    snap.y_check.resize(survivors, dy);
    snap.z_check.resize(survivors, dy);
    snap.replica_ids.reserve(static_cast<std::size_t>(survivors));
    Eigen::Index row = 0;
    for (std::size_t r = 0; r < records.size(); ++r) {
      if (records[r].diverged) continue;
      const auto& v = records[r].checkpoints[k];
      snap.x_hat.row(row) = v.x_hat.transpose();
      snap.y_hat.row(row) = v.y_hat.transpose();
      snap.x_check.row(row) = v.x_check.transpose();
      snap.y_check.row(row) = v.y_check.transpose();
      snap.z_check.row(row) = v.z_check.transpose();
      snap.replica_ids.push_back(r);
      ++row;
    }
    out.snapshots.push_back(std::move(snap));
  }
  return out;
}

/// Columns: checkpoint_n,replica_id,quantity,coord,value
inline void write_snapshots_csv(std::ostream& os, const EnsembleResult& result) {
  os << "checkpoint_n,replica_id,quantity,coord,value\n";
  os.precision(17);
  for (const auto& snap : result.snapshots) {
    for (std::size_t i = 0; i < snap.replica_ids.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      for (Quantity q : kAllQuantities) {
        const auto& m = snap.get(q);
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
          os << snap.n << ',' << snap.replica_ids[i] << ',' << to_string(q) << ',' << c << ','
             << m(row, c) << '\n';
        }
      }
    }
  }
}

}  // namespace ttsa
