#pragma once

// Numerical checks of the matrix facts behind the uniform max-norm Lipschitz
// bound of ybar -> b_hat:
//   * F F^T is tridiagonal, entrywise nonnegative, strictly diagonally dominant;
//   * the row sums eta of F equal the row sums of F F^T;
//   * the spectrum of Xi F F^T, Xi = diag(1/eta), lies in [1/3, 1];
//   * max_alpha |F^T (F Lambda F^T)^{-1} F|_inf stays bounded as K grows.

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cvxspline/cone_qp.hpp"
#include "cvxspline/parallel.hpp"
#include "cvxspline/splines.hpp"

namespace cvxspline::lipschitz {

struct StructureCheck {
  bool passed = true;
  std::string witness;  // first violated property, empty on success
};

inline StructureCheck check_FF_structure(std::span<const int> alpha, int m) {
  const Eigen::MatrixXd F = build_F_alpha(alpha, m).dense();
  const Eigen::MatrixXd G = F * F.transpose();
  const Eigen::Index l = G.rows();
  auto fail = [](const std::string& what, Eigen::Index i, Eigen::Index j, double v) {
    std::ostringstream os;
    os << what << " at (" << i << "," << j << "): " << v;
    return StructureCheck{false, os.str()};
  };
  for (Eigen::Index i = 0; i < l; ++i) {
    double off = 0.0;
    for (Eigen::Index j = 0; j < l; ++j) {
      const double v = G(i, j);
      if (std::abs(i - j) > 1 && v != 0.0) return fail("entry outside the tridiagonal band", i, j, v);
      if (v < 0.0) return fail("negative entry", i, j, v);
      if (j != i) off += std::abs(v);
    }
    if (!(G(i, i) > off)) return fail("row not strictly diagonally dominant", i, i, G(i, i) - off);
  }
  return {};
}

struct RowSumCheck {
  bool passed = true;
  double max_deviation = 0.0;
};

inline RowSumCheck row_sum_identity(std::span<const int> alpha, int m, double tol = 1e-12) {
  const Eigen::MatrixXd F = build_F_alpha(alpha, m).dense();
  const Eigen::VectorXd eta = F.rowwise().sum();
  const Eigen::VectorXd gram_rows = (F * F.transpose()).rowwise().sum();
  const double dev = (eta - gram_rows).cwiseAbs().maxCoeff();
  return {dev <= tol, dev};
}

struct EigenRange {
  double min = 0.0;
  double max = 0.0;
  bool within(double lo, double hi, double tol = 1e-10) const { return min >= lo - tol && max <= hi + tol; }
};

/// Extreme eigenvalues of Xi F F^T, computed on the similar symmetric matrix
/// Xi^{1/2} F F^T Xi^{1/2}.
inline EigenRange eig_sandwich(std::span<const int> alpha, int m) {
  const Eigen::MatrixXd F = build_F_alpha(alpha, m).dense();
  const Eigen::VectorXd s = F.rowwise().sum().cwiseInverse().cwiseSqrt();
  const Eigen::MatrixXd S = s.asDiagonal() * (F * F.transpose()) * s.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S, Eigen::EigenvaluesOnly);
  return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
}

/// |F^T (F Lambda F^T)^{-1} F|_inf for the given active set.
inline double selection_inf_norm(std::span<const int> alpha, const SparseMatrix& Lambda) {
  const auto sm = selection_matrix(build_F_alpha(alpha, static_cast<int>(Lambda.rows())), Lambda);
  return sm.G.cwiseAbs().rowwise().sum().maxCoeff();
}

// ---------------------------------------------------------------------------
// Active-set sampling

enum class Sampling { exhaustive, random };

inline std::string to_string(Sampling s) { return s == Sampling::exhaustive ? "exhaustive" : "random"; }

/// Every subset of {0..m-3}; only sensible for small m.
inline std::vector<std::vector<int>> all_alphas(int m) {
  const int nc = m - 2;
  std::vector<std::vector<int>> out;
  out.reserve(std::size_t{1} << nc);
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << nc); ++mask) {
    std::vector<int> a;
    for (int i = 0; i < nc; ++i)
      if ((mask >> i) & 1u) a.push_back(i);
    out.push_back(std::move(a));
  }
  return out;
}

/// Structured patterns (empty, all active, alternating, one long middle run,
/// two runs sharing an endpoint) followed by uniform random subsets where
/// each index is active with probability 1/2, `count` sets in total.
inline std::vector<std::vector<int>> sample_alphas(int m, int count, std::mt19937_64& rng) {
  const int nc = m - 2;
  std::vector<std::vector<int>> out;
  auto push = [&](std::vector<int> a) {
    if (static_cast<int>(out.size()) < count) out.push_back(std::move(a));
  };
  push({});
  std::vector<int> all(static_cast<std::size_t>(nc));
  for (int i = 0; i < nc; ++i) all[i] = i;
  push(all);
  std::vector<int> alt;
  for (int i = 0; i < nc; i += 2) alt.push_back(i);
  push(alt);
  std::vector<int> run;
  for (int i = nc / 4; i < (3 * nc) / 4; ++i) run.push_back(i);
  push(run);
  std::vector<int> chain;
  for (int i = 0; i < nc / 2; ++i) chain.push_back(i);
  for (int i = nc / 2 + 1; i < nc; ++i) chain.push_back(i);
  push(chain);
  std::bernoulli_distribution coin(0.5);
  while (static_cast<int>(out.size()) < count) {
    std::vector<int> a;
    for (int i = 0; i < nc; ++i)
      if (coin(rng)) a.push_back(i);
    out.push_back(std::move(a));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sweep over knot counts

struct LipschitzRow {
  int num_intervals = 0;
  int m = 0;
  int alphas_tested = 0;
  Sampling sampling = Sampling::random;
  double max_inf_norm = 0.0;
  double eig_min = 0.0;  // over the tested alphas
  double eig_max = 0.0;
  double max_row_sum_deviation = 0.0;
  int structure_violations = 0;
};

struct LipschitzReport {
  int degree = 1;
  std::vector<LipschitzRow> rows;
  int structure_violations = 0;
  double growth_ratio = 0.0;  // max / min of max_inf_norm over the grid
  bool growth_flag = false;   // growth_ratio > growth_limit
};

struct SweepOptions {
  double growth_limit = 1.5;
  int exhaustive_max_m = 10;
  int points_per_interval = 64;  // Lambda is built from n = 64 K design points
  unsigned threads = 0;
};

inline LipschitzReport inf_norm_sweep(int p, const std::vector<int>& grid, int alphas_per_k,
                                      std::uint64_t seed, const SweepOptions& opts = {}) {
  detail::require(!grid.empty(), "knot grid must be nonempty");
  detail::require(alphas_per_k >= 1, "need at least one active set per grid point");
  LipschitzReport report;
  report.degree = p;
  for (int K : grid) {
    const auto basis = make_basis(p, K);
    const int m = basis.size();
    detail::require(m >= 3, "grid point yields fewer than 3 coefficients");
    const int n = opts.points_per_interval * K;
    const auto design = build_design(basis, std::vector<double>(static_cast<std::size_t>(n), 0.0));

    LipschitzRow row;
    row.num_intervals = K;
    row.m = m;
    std::vector<std::vector<int>> alphas;
    if (m <= opts.exhaustive_max_m) {
      alphas = all_alphas(m);
      row.sampling = Sampling::exhaustive;
    } else {
      std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(K)));
      alphas = sample_alphas(m, alphas_per_k, rng);
      row.sampling = Sampling::random;
    }

    struct Result {
      double norm, emin, emax, rowdev;
      bool ok;
    };
    std::vector<Result> results(alphas.size());
    parallel_for(
        alphas.size(),
        [&](std::size_t i) {
          const auto& a = alphas[i];
          const auto st = check_FF_structure(a, m);
          const auto rs = row_sum_identity(a, m);
          const auto ev = eig_sandwich(a, m);
          results[i] = {selection_inf_norm(a, design.Lambda), ev.min, ev.max, rs.max_deviation,
                        st.passed && rs.passed && ev.within(1.0 / 3.0, 1.0)};
        },
        opts.threads);

    row.alphas_tested = static_cast<int>(alphas.size());
    row.eig_min = results.front().emin;
    row.eig_max = results.front().emax;
    for (const auto& r : results) {
      row.max_inf_norm = std::max(row.max_inf_norm, r.norm);
      row.eig_min = std::min(row.eig_min, r.emin);
      row.eig_max = std::max(row.eig_max, r.emax);
      row.max_row_sum_deviation = std::max(row.max_row_sum_deviation, r.rowdev);
      if (!r.ok) ++row.structure_violations;
    }
    report.structure_violations += row.structure_violations;
    report.rows.push_back(row);
  }
  double hi = 0.0, lo = report.rows.front().max_inf_norm;
  for (const auto& r : report.rows) {
    hi = std::max(hi, r.max_inf_norm);
    lo = std::min(lo, r.max_inf_norm);
  }
  report.growth_ratio = hi / lo;
  report.growth_flag = report.growth_ratio > opts.growth_limit;
  return report;
}

}  // namespace cvxspline::lipschitz
