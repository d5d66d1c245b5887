#pragma once

// B-spline bases on equally spaced clamped knots over [0,1], design matrices
// at the design points, and the normalized Gram matrix Lambda = X^T X / beta_n.

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "cvxspline/error.hpp"

namespace cvxspline {

inline constexpr int kMaxDegree = 3;

/// Clamped uniform B-spline basis of degree p with K interior intervals.
///
/// Knots are 0 (multiplicity p+1), 1/K, ..., (K-1)/K, 1 (multiplicity p+1),
/// giving K + p basis functions. Intervals are half-open on the left,
/// (k/K, (k+1)/K], except the first one which also contains x = 0.
class SplineBasis {
 public:
  /// Nonzero basis values at a point: functions first .. first + degree.
  struct Local {
    int first = 0;
    std::array<double, kMaxDegree + 1> values{};
  };

  SplineBasis(int degree, int num_intervals) : p_(degree), k_(num_intervals) {
    detail::require(degree >= 0 && degree <= kMaxDegree,
                    "spline degree must be in {0,1,2,3}, got " + std::to_string(degree));
    detail::require(num_intervals >= 2,
                    "number of knot intervals must be >= 2, got " + std::to_string(num_intervals));
    knots_.reserve(static_cast<std::size_t>(k_ + 2 * p_ + 1));
    for (int i = 0; i < p_; ++i) knots_.push_back(0.0);
    for (int j = 0; j <= k_; ++j) knots_.push_back(breakpoint(j));
    for (int i = 0; i < p_; ++i) knots_.push_back(1.0);
  }

  int degree() const noexcept { return p_; }
  int num_intervals() const noexcept { return k_; }
  int size() const noexcept { return k_ + p_; }
  const std::vector<double>& knots() const noexcept { return knots_; }

  /// Interior breakpoint kappa_j = j / K, j = 0..K.
  double breakpoint(int j) const noexcept { return static_cast<double>(j) / k_; }

  /// Index s of the interval (kappa_s, kappa_{s+1}] holding x (s = 0 at x = 0).
  int interval(double x) const {
    check_domain(x);
    int s = std::clamp(static_cast<int>(std::floor(x * k_)), 0, k_ - 1);
    while (s > 0 && x <= breakpoint(s)) --s;
    while (s < k_ - 1 && x > breakpoint(s + 1)) ++s;
    return s;
  }

  /// Cox-de Boor triangle on the interval containing x.
  Local eval_local(double x) const {
    const int s = interval(x);
    const int mu = s + p_;  // knot span [t_mu, t_{mu+1}]
    Local out;
    out.first = s;
    auto& N = out.values;
    std::array<double, kMaxDegree + 1> left{}, right{};
    N[0] = 1.0;
    for (int j = 1; j <= p_; ++j) {
      left[j] = x - knots_[mu + 1 - j];
      right[j] = knots_[mu + j] - x;
      double saved = 0.0;
      for (int r = 0; r < j; ++r) {
        const double temp = N[r] / (right[r + 1] + left[j - r]);
        N[r] = saved + right[r + 1] * temp;
        saved = left[j - r] * temp;
      }
      N[j] = saved;
    }
    return out;
  }

  Eigen::VectorXd eval(double x) const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(size());
    const Local loc = eval_local(x);
    for (int a = 0; a <= p_; ++a) v[loc.first + a] = loc.values[a];
    return v;
  }

  /// Spline sum_k coeffs_k B_k(x).
  double evaluate(const Eigen::Ref<const Eigen::VectorXd>& coeffs, double x) const {
    const Local loc = eval_local(x);
    double acc = 0.0;
    for (int a = 0; a <= p_; ++a) acc += coeffs[loc.first + a] * loc.values[a];
    return acc;
  }

 private:
  static void check_domain(double x) {
    if (!(x >= 0.0 && x <= 1.0))
      throw InvalidArgument("evaluation point outside [0,1]: " + std::to_string(x));
  }

  int p_;
  int k_;
  std::vector<double> knots_;
};

inline SplineBasis make_basis(int p, int num_intervals) { return SplineBasis(p, num_intervals); }

inline Eigen::VectorXd eval_basis(const SplineBasis& basis, double x) { return basis.eval(x); }

/// Equally spaced design points x_i = i/n, i = 1..n.
inline std::vector<double> design_points(int n) {
  std::vector<double> x(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) x[i] = static_cast<double>(i + 1) / n;
  return x;
}

/// Design matrix, scale beta_n, Gram matrix Lambda = X^T X / beta_n and
/// ybar = X^T y / beta_n.
struct DesignBundle {
  Eigen::SparseMatrix<double, Eigen::RowMajor> X;
  double beta_n = 0.0;
  Eigen::SparseMatrix<double> Lambda;
  Eigen::VectorXd ybar;
};

inline DesignBundle build_design(const SplineBasis& basis, std::span<const double> x,
                                 std::span<const double> y) {
  const int n = static_cast<int>(x.size());
  const int m = basis.size();
  const int p = basis.degree();
  detail::require(y.size() == x.size(), "x and y lengths differ");
  detail::require(n >= basis.num_intervals(),
                  "sample size n=" + std::to_string(n) + " is below the interval count K=" +
                      std::to_string(basis.num_intervals()));

  // Upper band of X^T X: band(k, d) = sum_i B_k(x_i) B_{k+d}(x_i), d = 0..p.
  Eigen::MatrixXd band = Eigen::MatrixXd::Zero(m, p + 1);
  Eigen::VectorXd xty = Eigen::VectorXd::Zero(m);
  std::vector<Eigen::Triplet<double>> xt;
  xt.reserve(static_cast<std::size_t>(n) * (p + 1));
  for (int i = 0; i < n; ++i) {
    const auto loc = basis.eval_local(x[i]);
    for (int a = 0; a <= p; ++a) {
      const int k = loc.first + a;
      const double va = loc.values[a];
      xt.emplace_back(i, k, va);
      xty[k] += va * y[i];
      for (int b = a; b <= p; ++b) band(k, b - a) += va * loc.values[b];
    }
  }

  // beta_n is taken at the first interior basis function (1-based k = p+1);
  // bases with K < p+1 have none, so fall back to the largest diagonal.
  int ref = p;
  if (basis.num_intervals() < p + 1) band.col(0).maxCoeff(&ref);
  const double beta = band(ref, 0);
  if (!(beta > 0.0)) throw SingularSystem("no design point in the support of the reference basis");

  DesignBundle out;
  out.beta_n = beta;
  out.X.resize(n, m);
  out.X.setFromTriplets(xt.begin(), xt.end());

  std::vector<Eigen::Triplet<double>> lt;
  lt.reserve(static_cast<std::size_t>(m) * (2 * p + 1));
  for (int k = 0; k < m; ++k) {
    lt.emplace_back(k, k, band(k, 0) / beta);
    for (int d = 1; d <= p && k + d < m; ++d) {
      const double v = band(k, d) / beta;
      lt.emplace_back(k, k + d, v);
      lt.emplace_back(k + d, k, v);
    }
  }
  out.Lambda.resize(m, m);
  out.Lambda.setFromTriplets(lt.begin(), lt.end());
  out.ybar = xty / beta;
  return out;
}

/// Design at the equispaced points x_i = i/n with n = y.size().
inline DesignBundle build_design(const SplineBasis& basis, std::span<const double> y) {
  const auto x = design_points(static_cast<int>(y.size()));
  return build_design(basis, x, y);
}

}  // namespace cvxspline
