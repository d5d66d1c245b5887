#pragma once

// Shared random-instance generators for the test suites.

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

#include "cvxspline/cone_qp.hpp"
#include "cvxspline/splines.hpp"

namespace cvxspline::testing {

/// Design-based problem: degree p, K intervals, n = M K points, y a convex
/// bump mixture plus Gaussian noise of random size (sometimes strongly
/// non-convex so that many constraints bind).
inline ConeProblem random_design_problem(std::mt19937_64& rng, int p, int K) {
  std::uniform_int_distribution<int> mdist(4, 12);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  std::normal_distribution<double> z;
  const int n = mdist(rng) * K;
  const double a = unif(rng), c = 2.0 * unif(rng), s = std::pow(10.0, 1.5 * unif(rng) - 0.5);
  const double bump = 3.0 * unif(rng);
  std::vector<double> y(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double x = static_cast<double>(i + 1) / n;
    y[i] = a + c * (x - 0.5) * (x - 0.5) + bump * std::sin(6.0 * x) + s * z(rng);
  }
  return ConeProblem::from_design(build_design(make_basis(p, K), y));
}

/// Lambda = I with a random, typically non-convex, ybar.
inline ConeProblem random_identity_problem(std::mt19937_64& rng, int m) {
  std::normal_distribution<double> z;
  Eigen::VectorXd ybar(m);
  for (int i = 0; i < m; ++i) ybar[i] = z(rng) + 0.05 * (i - m / 2.0) * (i - m / 2.0);
  return {Eigen::MatrixXd(Eigen::MatrixXd::Identity(m, m)), ybar};
}

/// Dimension-m problem alternating between the two generators above
/// (design problems use p = 1 and K = m - 1).
inline ConeProblem random_problem(std::mt19937_64& rng, int m, int index) {
  if (index % 2 == 0) return random_identity_problem(rng, m);
  return random_design_problem(rng, 1, m - 1);
}

inline std::vector<int> random_subset(std::mt19937_64& rng, int count, double prob = 0.5) {
  std::bernoulli_distribution coin(prob);
  std::vector<int> out;
  for (int i = 0; i < count; ++i)
    if (coin(rng)) out.push_back(i);
  return out;
}

}  // namespace cvxspline::testing
