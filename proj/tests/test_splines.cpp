#include <gtest/gtest.h>

#include <random>

#include "cvxspline/splines.hpp"

using namespace cvxspline;

namespace {

// Textbook recursive definition on the full knot vector, written against the
// same half-open (t_i, t_{i+1}] convention; independent of the triangular
// evaluation used by SplineBasis.
double naive_bspline(int i, int p, const std::vector<double>& t, double x) {
  if (p == 0) {
    if (t[i] == t[i + 1]) return 0.0;
    if (x == 0.0) return (t[i] == 0.0 && t[i + 1] > 0.0) ? 1.0 : 0.0;
    return (t[i] < x && x <= t[i + 1]) ? 1.0 : 0.0;
  }
  double out = 0.0;
  if (t[i + p] > t[i]) out += (x - t[i]) / (t[i + p] - t[i]) * naive_bspline(i, p - 1, t, x);
  if (t[i + p + 1] > t[i + 1])
    out += (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * naive_bspline(i + 1, p - 1, t, x);
  return out;
}

}  // namespace

TEST(SplineBasis, CountsAndKnots) {
  for (int p = 0; p <= 3; ++p) {
    const auto basis = make_basis(p, 5);
    EXPECT_EQ(basis.size(), 5 + p);
    EXPECT_EQ(basis.knots().size(), static_cast<std::size_t>(5 + 2 * p + 1));
    EXPECT_EQ(basis.knots().front(), 0.0);
    EXPECT_EQ(basis.knots().back(), 1.0);
  }
}

TEST(SplineBasis, RejectsBadArguments) {
  EXPECT_THROW(make_basis(4, 5), InvalidArgument);
  EXPECT_THROW(make_basis(-1, 5), InvalidArgument);
  EXPECT_THROW(make_basis(1, 1), InvalidArgument);
  const auto basis = make_basis(1, 4);
  EXPECT_THROW(eval_basis(basis, -0.01), InvalidArgument);
  EXPECT_THROW(eval_basis(basis, 1.5), InvalidArgument);
}

TEST(SplineBasis, PiecewiseConstantIndicatorBins) {
  const auto basis = make_basis(0, 4);
  EXPECT_EQ(basis.size(), 4);
  Eigen::VectorXd expected(4);
  expected << 0, 1, 0, 0;
  EXPECT_EQ(eval_basis(basis, 0.3), expected);
  // (k-1)/4 < x <= k/4: the right endpoint belongs to the lower bin.
  expected << 1, 0, 0, 0;
  EXPECT_EQ(eval_basis(basis, 0.25), expected);
  EXPECT_EQ(eval_basis(basis, 0.0), expected);
  expected << 0, 0, 0, 1;
  EXPECT_EQ(eval_basis(basis, 1.0), expected);
}

TEST(SplineBasis, HatFunctionsPeakAtKnots) {
  const auto basis = make_basis(1, 4);
  EXPECT_EQ(basis.size(), 5);
  Eigen::VectorXd expected(5);
  expected << 0, 1, 0, 0, 0;
  EXPECT_NEAR((eval_basis(basis, 0.25) - expected).cwiseAbs().maxCoeff(), 0.0, 1e-15);
  expected << 0, 0, 1, 0, 0;
  EXPECT_NEAR((eval_basis(basis, 0.5) - expected).cwiseAbs().maxCoeff(), 0.0, 1e-15);
}

TEST(SplineBasis, QuadraticMatchesRecursion) {
  const auto basis = make_basis(2, 4);
  const Eigen::VectorXd v = eval_basis(basis, 0.375);
  // Frozen from an independent B-spline implementation.
  const double expected[6] = {0.0, 0.125, 0.75, 0.125, 0.0, 0.0};
  for (int k = 0; k < 6; ++k) {
    EXPECT_NEAR(v[k], expected[k], 1e-15) << k;
    EXPECT_NEAR(v[k], naive_bspline(k, 2, basis.knots(), 0.375), 1e-15) << k;
  }
}

TEST(SplineBasis, AgreesWithRecursiveDefinitionEverywhere) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int p = 0; p <= 3; ++p) {
    for (int K : {2, 3, 7, 16}) {
      const auto basis = make_basis(p, K);
      for (int s = 0; s < 200; ++s) {
        const double x = unif(rng);
        const Eigen::VectorXd v = eval_basis(basis, x);
        for (int k = 0; k < basis.size(); ++k)
          ASSERT_NEAR(v[k], naive_bspline(k, p, basis.knots(), x), 1e-13) << "p=" << p << " K=" << K;
      }
    }
  }
}

TEST(SplineBasis, PartitionOfUnityNonnegativeLocal) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int p = 0; p <= 3; ++p) {
    const auto basis = make_basis(p, 13);
    for (int s = 0; s < 10000; ++s) {
      const double x = unif(rng);
      const Eigen::VectorXd v = eval_basis(basis, x);
      ASSERT_LE(std::abs(v.sum() - 1.0), 1e-12);
      ASSERT_GE(v.minCoeff(), 0.0);
      ASSERT_LE((v.array() != 0.0).count(), p + 1);
    }
  }
}

TEST(DesignBundle, LinearGramIsTridiagonal) {
  const auto basis = make_basis(1, 2);
  const std::vector<double> y(4, 0.0);
  const auto d = build_design(basis, y);
  const Eigen::MatrixXd L = d.Lambda;
  ASSERT_EQ(L.rows(), 3);
  EXPECT_EQ(L(0, 2), 0.0);
  EXPECT_EQ(L(2, 0), 0.0);
  EXPECT_GT(L(0, 1), 0.0);
  EXPECT_EQ(d.ybar, Eigen::VectorXd::Zero(3));
}

TEST(DesignBundle, RejectsTooFewPoints) {
  const auto basis = make_basis(1, 8);
  const std::vector<double> y(7, 1.0);
  EXPECT_THROW(build_design(basis, y), InvalidArgument);
}

TEST(DesignBundle, BetaScalesLikeNOverK) {
  // Direct summation of squared hat values gives 0.666748046875 at every K
  // with n = 64 K (frozen from an independent evaluation).
  for (int K : {4, 8, 16}) {
    const int n = 64 * K;
    const auto d = build_design(make_basis(1, K), std::vector<double>(n, 0.0));
    EXPECT_NEAR(d.beta_n * K / n, 0.666748046875, 1e-12) << K;
  }
}

TEST(DesignBundle, GramInvariants) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z;
  for (int p = 0; p <= 3; ++p) {
    for (int K : {2, 4, 9, 20}) {
      const int n = 4 * K * 8;
      std::vector<double> y(n);
      for (auto& v : y) v = z(rng);
      const auto d = build_design(make_basis(p, K), y);
      const Eigen::MatrixXd L = d.Lambda;
      const int m = K + p;
      EXPECT_LE((L - L.transpose()).cwiseAbs().maxCoeff(), 1e-14);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
          if (std::abs(i - j) > p) EXPECT_EQ(L(i, j), 0.0);
          EXPECT_LE(std::abs(L(i, j)), 1.0 + 1e-14);
        }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(L);
      EXPECT_GT(es.eigenvalues().minCoeff(), 0.0) << "p=" << p << " K=" << K;
      // ybar = X^T y / beta_n
      Eigen::Map<const Eigen::VectorXd> yv(y.data(), n);
      EXPECT_LE((d.ybar - Eigen::VectorXd(d.X.transpose() * yv) / d.beta_n).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}
