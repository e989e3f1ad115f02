#pragma once

// Fixtures shared by the unit and acceptance tests.

#include <memory>

#include "ttsa/problem.hpp"

namespace ttsa::testing {

// 3 states, 2 actions, 2 features, gamma = 0.9.
inline MdpSpec benchmark_mdp() {
  MdpSpec m;
  m.n_states = 3;
  m.n_actions = 2;
  m.features = matrix_from_rows({{1, 0}, {0, 1}, {-1, -1}});
  m.rewards = {{1.0, 0.0}, {0.5, 0.2}, {0.0, 0.8}};
  m.transitions = {{{0.1, 0.6, 0.3}, {0.5, 0.2, 0.3}},
                   {{0.3, 0.3, 0.4}, {0.2, 0.1, 0.7}},
                   {{0.6, 0.2, 0.2}, {0.3, 0.5, 0.2}}};
  m.target_policy = {{0.7, 0.3}, {0.4, 0.6}, {0.5, 0.5}};
  m.behavior_policy = {{0.5, 0.5}, {0.5, 0.5}, {0.6, 0.4}};
  m.state_dist = {0.4, 0.35, 0.25};
  m.gamma = 0.9;
  return m;
}

inline std::shared_ptr<const MdpSampler> benchmark_sampler() {
  return std::make_shared<const MdpSampler>(benchmark_mdp());
}

// Non-symmetric 2-D linear benchmark with unit noise.
inline LinearParams linear_benchmark() {
  LinearParams lp;
  lp.b1 = matrix_from_rows({{1.0, 0.3}, {-0.2, 1.2}});
  lp.b2 = matrix_from_rows({{0.2, 0.1}, {-0.1, 0.2}});
  lp.b3 = matrix_from_rows({{1.0, 0.25}, {-0.25, 0.9}});
  lp.h = matrix_from_rows({{0.5, 0.0}, {0.1, 0.5}});
  lp.y_star = Vector(2);
  lp.y_star << 1.0, -0.5;
  lp.x_star = Vector::Zero(2);
  lp.sigma_xi = Matrix::Identity(2, 2);
  lp.sigma_psi = Matrix::Identity(2, 2);
  lp.sigma_xipsi = Matrix::Zero(2, 2);
  return lp;
}

inline Matrix diag(double a, double b) {
  Matrix m = Matrix::Zero(2, 2);
  m(0, 0) = a;
  m(1, 1) = b;
  return m;
}

}  // namespace ttsa::testing
