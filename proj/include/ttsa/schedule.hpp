#pragma once

// Step-size sequences alpha_n (fast) and beta_n (slow), their ratio, the
// limit beta_tilde, step-size condition checks and the time-interpolation
// maps Gamma / N / t_floor.

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <utility>
#include <vector>

#include "ttsa/error.hpp"

namespace ttsa {

enum class Scale { Alpha, Beta };

inline const char* to_string(Scale s) { return s == Scale::Alpha ? "alpha" : "beta"; }

struct Step {
  double alpha = 0.0;
  double beta = 0.0;
  double kappa = 0.0;
};

struct PolynomialParams {
  double alpha0 = 1.0;
  double a = 0.6;
  double beta0 = 1.0;
  double b = 0.9;
};

struct ConditionVerdict {
  std::string name;  // "i" .. "v"
  bool pass = false;
  bool heuristic = false;
  std::string reason;
};

struct AssumptionReport {
  std::vector<ConditionVerdict> conditions;
  bool pass = false;

  const ConditionVerdict* find(const std::string& name) const {
    for (const auto& c : conditions)
      if (c.name == name) return &c;
    return nullptr;
  }
};

/// Caller-declared regularity orders of H, F and G.
struct HolderOrders {
  double delta_h = 1.0;
  double delta_f = 1.0;
  double delta_g = 1.0;
};

class StepSchedule {
 public:
  enum class Kind { Polynomial, Table };

  static StepSchedule polynomial(double alpha0, double a, double beta0, double b) {
    require(std::isfinite(alpha0) && alpha0 > 0.0 && std::isfinite(beta0) && beta0 > 0.0,
            ErrorCode::InvalidArgument, "alpha0 and beta0 must be positive");
    require(a > 0.0 && a <= 1.0 && b > 0.0 && b <= 1.0, ErrorCode::InvalidArgument,
            "exponents a and b must lie in (0, 1]");
    StepSchedule s;
    s.kind_ = Kind::Polynomial;
    s.poly_ = {alpha0, a, beta0, b};
    return s;
  }

  static StepSchedule polynomial(const PolynomialParams& p) {
    return polynomial(p.alpha0, p.a, p.beta0, p.b);
  }

  static StepSchedule table(std::vector<double> alpha, std::vector<double> beta) {
    require(!alpha.empty() && alpha.size() == beta.size(), ErrorCode::InvalidArgument,
            "step tables must be non-empty and of equal length");
    for (std::size_t k = 0; k < alpha.size(); ++k) {
      require(alpha[k] > 0.0 && beta[k] > 0.0 && std::isfinite(alpha[k]) && std::isfinite(beta[k]),
              ErrorCode::InvalidArgument, "step tables must be positive and finite");
      if (k > 0)
        require(alpha[k] <= alpha[k - 1] && beta[k] <= beta[k - 1], ErrorCode::InvalidArgument,
                "step tables must be non-increasing");
    }
    StepSchedule s;
    s.kind_ = Kind::Table;
    s.alpha_table_ = std::make_shared<const std::vector<double>>(std::move(alpha));
    s.beta_table_ = std::make_shared<const std::vector<double>>(std::move(beta));
    return s;
  }

  Kind kind() const noexcept { return kind_; }
  const PolynomialParams& params() const noexcept { return poly_; }

  /// Table length, or 0 for the (unbounded) polynomial family.
  std::size_t table_size() const noexcept { return kind_ == Kind::Table ? alpha_table_->size() : 0; }

  Step step_at(std::size_t n) const {
    if (kind_ == Kind::Polynomial) {
      // One log shared by both exponents; this sits in the engine's hot loop.
      const double log_base = std::log(static_cast<double>(n) + 1.0);
      Step s{poly_.alpha0 * std::exp(-poly_.a * log_base), poly_.beta0 * std::exp(-poly_.b * log_base), 0.0};
      s.kappa = s.beta / s.alpha;
      return s;
    }
    Step s{alpha(n), beta(n), 0.0};
    s.kappa = s.beta / s.alpha;
    return s;
  }

  double alpha(std::size_t n) const { return value(Scale::Alpha, n); }
  double beta(std::size_t n) const { return value(Scale::Beta, n); }

  double value(Scale scale, std::size_t n) const {
    if (kind_ == Kind::Polynomial) {
      const double log_base = std::log(static_cast<double>(n) + 1.0);
      return scale == Scale::Alpha ? poly_.alpha0 * std::exp(-poly_.a * log_base)
                                   : poly_.beta0 * std::exp(-poly_.b * log_base);
    }
    const auto& t = scale == Scale::Alpha ? *alpha_table_ : *beta_table_;
    require(n < t.size(), ErrorCode::IndexOutOfRange,
            "index " + std::to_string(n) + " beyond step table of length " + std::to_string(t.size()));
    return t[n];
  }

  /// lim (1/beta_{n+1} - 1/beta_n).
  double beta_tilde() const {
    if (kind_ == Kind::Polynomial) return poly_.b == 1.0 ? 1.0 / poly_.beta0 : 0.0;
    const auto& t = *beta_table_;
    require(t.size() >= 3, ErrorCode::NoLimit, "step table too short to estimate beta_tilde");
    // Tail differences over the last quarter of the table must agree.
    const std::size_t first = std::max<std::size_t>(1, t.size() - std::max<std::size_t>(2, t.size() / 4));
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    double last = 0.0;
    for (std::size_t k = first; k < t.size(); ++k) {
      last = 1.0 / t[k] - 1.0 / t[k - 1];
      lo = std::min(lo, last);
      hi = std::max(hi, last);
    }
    require(hi - lo <= 1e-6, ErrorCode::NoLimit,
            "tail differences of 1/beta vary by " + std::to_string(hi - lo));
    return std::max(last, 0.0);
  }

  AssumptionReport validate(const HolderOrders& orders) const {
    require(kind_ == Kind::Polynomial, ErrorCode::Unsupported,
            "step-size conditions are certified only for the polynomial family");
    require(orders.delta_h >= 0.5 && orders.delta_h <= 1.0, ErrorCode::InvalidArgument,
            "delta_H must lie in [0.5, 1]");
    require(orders.delta_f > 0.0 && orders.delta_f <= 1.0 && orders.delta_g > 0.0 &&
                orders.delta_g <= 1.0,
            ErrorCode::InvalidArgument, "delta_F and delta_G must lie in (0, 1]");
    const auto& p = poly_;
    AssumptionReport r;
    const bool vanishing_ratio = p.b > p.a;
    r.conditions.push_back(
        {"i", vanishing_ratio, false,
         vanishing_ratio ? "alpha_n, beta_n decrease to 0 and kappa_n = (beta0/alpha0)(n+1)^(a-b) -> 0"
                         : "b <= a, so kappa_n = (beta0/alpha0)(n+1)^(a-b) does not vanish"});
    r.conditions.push_back(
        {"ii", true, false,
         "polynomial family: beta_{n-1}/beta_n = 1 + O(1/n) = 1 + O(beta_n); beta_tilde = " +
             std::to_string(beta_tilde())});
    r.conditions.push_back(
        {"iii", true, false,
         "polynomial family: alpha_{n-1}/alpha_n and kappa_{n-1}/kappa_n are 1 + O(1/n) = 1 + O(beta_n)"});
    const bool nondecreasing = p.a <= 1.0 && p.b <= 1.0;
    r.conditions.push_back({"iv", nondecreasing, false,
                            nondecreasing ? "n (n+1)^(-e) is increasing for exponents e <= 1"
                                          : "an exponent exceeds 1"});
    const double ratio = p.b / p.a;
    const double upper = 1.0 + std::min(orders.delta_f, orders.delta_g);
    const double lower = 2.0 / (1.0 + orders.delta_h);
    const bool ok_upper = ratio < upper;
    const bool ok_lower = ratio >= lower;
    std::string reason = "b/a = " + std::to_string(ratio) + "; need b/a < 1 + min(delta_F, delta_G) = " +
                         std::to_string(upper) + " and b/a >= 2/(1 + delta_H) = " + std::to_string(lower);
    if (!ok_upper) reason += " (upper bound violated)";
    if (!ok_lower) reason += " (lower bound violated)";
    r.conditions.push_back({"v", ok_upper && ok_lower, false, reason});
    r.pass = true;
    for (const auto& c : r.conditions) r.pass = r.pass && c.pass;
    return r;
  }

  /// Gamma_{n,m}: sum of the chosen steps over k = n .. m-1 (0 when m <= n).
  double gamma_sum(Scale scale, std::size_t n, std::size_t m) const {
    if (m <= n) return 0.0;
    const auto sums = partial_sums(scale, n, m - n, -1.0);
    return (*sums)[m - n];
  }

  struct Located {
    std::size_t index = 0;  // N(n, t)
    double t_floor = 0.0;   // Gamma_{n, N(n, t)}
  };

  /// N(n, t) = max{m >= n : Gamma_{n,m} <= t} together with its Gamma value.
  Located locate(Scale scale, std::size_t n, double t) const {
    require(t >= 0.0 && std::isfinite(t), ErrorCode::InvalidArgument, "locate needs finite t >= 0");
    const auto sums = partial_sums(scale, n, 0, t);
    // sums is non-decreasing and sums->back() > t.
    const auto it = std::upper_bound(sums->begin(), sums->end(), t);
    const auto k = static_cast<std::size_t>(std::distance(sums->begin(), it)) - 1;
    return {n + k, (*sums)[k]};
  }

 private:
  StepSchedule() : cache_(std::make_shared<Cache>()) {}

  using Sums = std::vector<double>;

  struct Cache {
    std::shared_mutex mutex;
    std::map<std::pair<int, std::size_t>, std::shared_ptr<Sums>> tables;
  };

  // Cumulative sums S[k] = Gamma_{n, n+k}, extended until it holds at least
  // `min_terms` steps and (if t >= 0) an entry strictly above t. Extended
  // tables are published as fresh copies so readers never see mutation.
  std::shared_ptr<const Sums> partial_sums(Scale scale, std::size_t n, std::size_t min_terms,
                                           double t) const {
    const auto key = std::make_pair(static_cast<int>(scale), n);
    auto satisfied = [&](const Sums& s) {
      return s.size() > min_terms && (t < 0.0 || s.back() > t);
    };
    {
      std::shared_lock lock(cache_->mutex);
      const auto it = cache_->tables.find(key);
      if (it != cache_->tables.end() && satisfied(*it->second)) return it->second;
    }
    std::unique_lock lock(cache_->mutex);
    auto& slot = cache_->tables[key];
    if (slot && satisfied(*slot)) return slot;
    auto grown = slot ? std::make_shared<Sums>(*slot) : std::make_shared<Sums>(Sums{0.0});
    const std::size_t limit = table_size();
    while (!satisfied(*grown)) {
      const std::size_t k = n + grown->size() - 1;
      if (kind_ == Kind::Table && k >= limit) {
        fail(ErrorCode::IndexOutOfRange,
             "step table exhausted while summing from index " + std::to_string(n));
      }
      grown->push_back(grown->back() + value(scale, k));
    }
    slot = grown;
    return slot;
  }

  Kind kind_ = Kind::Polynomial;
  PolynomialParams poly_{};
  std::shared_ptr<const std::vector<double>> alpha_table_;
  std::shared_ptr<const std::vector<double>> beta_table_;
  std::shared_ptr<Cache> cache_;
};

}  // namespace ttsa
