#pragma once

// Least squares over the convexity cone
//
//   minimize 1/2 b^T Lambda b - b^T ybar   subject to  D2 b >= 0,
//
// where D2 is the (m-2) x m second-difference matrix. Constraint indices are
// 0-based throughout: constraint i reads b_i - 2 b_{i+1} + b_{i+2} >= 0.
//
// A working set alpha of equalities is handled through the selection matrix
// F_alpha, whose transpose maps the free coefficients (the "nodes" that are
// not the middle point of an active constraint) to the full coefficient
// vector by linear interpolation. Every linear piece of the solution map is
// ybar -> F^T (F Lambda F^T)^{-1} F ybar.

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cvxspline/error.hpp"
#include "cvxspline/splines.hpp"

namespace cvxspline {

using SparseMatrix = Eigen::SparseMatrix<double>;
using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct ConeProblem {
  SparseMatrix Lambda;
  Eigen::VectorXd ybar;

  int dim() const noexcept { return static_cast<int>(ybar.size()); }

  ConeProblem(SparseMatrix lambda, Eigen::VectorXd y) : Lambda(std::move(lambda)), ybar(std::move(y)) {
    detail::require(Lambda.rows() == Lambda.cols() && Lambda.rows() == ybar.size(),
                    "Lambda must be square and match ybar");
    detail::require(ybar.size() >= 3, "cone problems need dimension m >= 3");
  }
  ConeProblem(const Eigen::MatrixXd& lambda, Eigen::VectorXd y)
      : ConeProblem(SparseMatrix(lambda.sparseView()), std::move(y)) {}

  static ConeProblem from_design(const DesignBundle& d) { return {d.Lambda, d.ybar}; }

  double objective(const Eigen::VectorXd& b) const { return 0.5 * b.dot(Lambda * b) - b.dot(ybar); }
};

// ---------------------------------------------------------------------------
// Cone geometry

inline Eigen::MatrixXd second_diff_matrix(int m) {
  detail::require(m >= 3, "second difference matrix needs m >= 3");
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(m - 2, m);
  for (int i = 0; i < m - 2; ++i) {
    D(i, i) = 1.0;
    D(i, i + 1) = -2.0;
    D(i, i + 2) = 1.0;
  }
  return D;
}

inline Eigen::VectorXd second_differences(const Eigen::Ref<const Eigen::VectorXd>& b) {
  const Eigen::Index m = b.size();
  Eigen::VectorXd d(std::max<Eigen::Index>(m - 2, 0));
  for (Eigen::Index i = 0; i + 2 < m; ++i) d[i] = b[i] - 2.0 * b[i + 1] + b[i + 2];
  return d;
}

/// Generators {v1, -v1, v2, -v2, v3, ..., vm} of the cone D2 b >= 0.
inline std::vector<Eigen::VectorXd> cone_generators(int m) {
  detail::require(m >= 3, "cone generators need m >= 3");
  std::vector<Eigen::VectorXd> out;
  out.reserve(static_cast<std::size_t>(m) + 2);
  Eigen::VectorXd v1(m), v2(m);
  for (int j = 0; j < m; ++j) {
    v1[j] = 1.0 - j;  // 1, 0, -1, ..., -(m-2)
    v2[j] = j;        // 0, 1, 2, ..., m-1
  }
  out.push_back(v1);
  out.push_back(-v1);
  out.push_back(v2);
  out.push_back(-v2);
  for (int k = 3; k <= m; ++k) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(m);
    for (int j = k - 1; j < m; ++j) v[j] = j - (k - 1) + 1.0;
    out.push_back(std::move(v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimality certificate

/// Residuals of the complementarity characterization
///
///   0 <= D2 b  _|_  (C^2)_{gamma.} (Lambda b - ybar) >= 0,
///   1^T (Lambda b - ybar) = 0,  (C^2)_{m.} (Lambda b - ybar) = 0,
///
/// with C the unit lower-triangular matrix of ones. Tolerances are relative:
/// residuals are compared against tol * s, s = max(1, |ybar|_inf), and the
/// complementarity product against tol * s^2.
struct KktCertificate {
  double primal_violation = 0.0;    // max(0, -min D2 b)
  double dual_violation = 0.0;      // max(0, -min multiplier)
  double complementarity_gap = 0.0; // |<D2 b, multipliers>|
  double boundary_sum = 0.0;        // |C_{m.} g|
  double boundary_moment = 0.0;     // |C_{m.} C g|
  double tol = 0.0;
  double scale = 1.0;

  bool passed() const noexcept {
    const double t = tol * scale;
    return primal_violation <= t && dual_violation <= t && complementarity_gap <= t * scale &&
           boundary_sum <= t && boundary_moment <= t;
  }

  double worst_relative() const noexcept {
    return std::max({primal_violation / scale, dual_violation / scale,
                     complementarity_gap / (scale * scale), boundary_sum / scale,
                     boundary_moment / scale});
  }
};

namespace detail {

// Running sums with Neumaier compensation; the double cumulative sum of the
// gradient multiplies roundoff by up to m^2 otherwise.
inline Eigen::VectorXd compensated_cumsum(const Eigen::VectorXd& g) {
  Eigen::VectorXd out(g.size());
  double sum = 0.0, comp = 0.0;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const double t = sum + g[i];
    if (std::abs(sum) >= std::abs(g[i]))
      comp += (sum - t) + g[i];
    else
      comp += (g[i] - t) + sum;
    sum = t;
    out[i] = sum + comp;
  }
  return out;
}

inline double problem_scale(const ConeProblem& problem) {
  return std::max(1.0, problem.ybar.lpNorm<Eigen::Infinity>());
}

}  // namespace detail

/// Multipliers (C^2 g)_{0..m-3} and the two cumulative sums' last entries for
/// the gradient g = Lambda b - ybar.
struct ConeMultipliers {
  Eigen::VectorXd mu;
  double total = 0.0;   // C_{m.} g
  double moment = 0.0;  // C_{m.} C g
};

inline ConeMultipliers cone_multipliers(const ConeProblem& problem, const Eigen::VectorXd& b) {
  const Eigen::VectorXd g = problem.Lambda * b - problem.ybar;
  const Eigen::VectorXd s1 = detail::compensated_cumsum(g);
  const Eigen::VectorXd s2 = detail::compensated_cumsum(s1);
  const Eigen::Index m = g.size();
  return {s2.head(m - 2), s1[m - 1], s2[m - 1]};
}

inline KktCertificate kkt_certificate(const ConeProblem& problem, const Eigen::VectorXd& b,
                                      double tol = 1e-9) {
  detail::require(b.size() == problem.dim(), "coefficient vector has the wrong length");
  detail::require(b.allFinite(), "coefficient vector must be finite");
  const Eigen::VectorXd d2 = second_differences(b);
  const ConeMultipliers mult = cone_multipliers(problem, b);
  KktCertificate c;
  c.tol = tol;
  c.scale = detail::problem_scale(problem);
  c.primal_violation = std::max(0.0, -d2.minCoeff());
  c.dual_violation = std::max(0.0, -mult.mu.minCoeff());
  c.complementarity_gap = std::abs(d2.dot(mult.mu));
  c.boundary_sum = std::abs(mult.total);
  c.boundary_moment = std::abs(mult.moment);
  return c;
}

// ---------------------------------------------------------------------------
// Selection matrices F_alpha and G_alpha

/// One diagonal block of F_alpha: the ordered nodes theta_s of a merged chain
/// of active runs, or a single unconstrained index.
struct SelectionBlock {
  std::vector<int> nodes;
  int first() const { return nodes.front(); }
  int last() const { return nodes.back(); }
  bool singleton() const { return nodes.size() == 1; }
};

struct FAlpha {
  int m = 0;
  std::vector<SelectionBlock> blocks;
  SparseRowMatrix F;  // ell x m, ell = m - |alpha|

  int rows() const noexcept { return static_cast<int>(F.rows()); }
  Eigen::MatrixXd dense() const { return Eigen::MatrixXd(F); }
};

namespace detail {

inline std::vector<int> normalized_alpha(std::span<const int> alpha, int m) {
  std::vector<int> a(alpha.begin(), alpha.end());
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  for (int i : a)
    require(i >= 0 && i <= m - 3, "active index " + std::to_string(i) + " outside 0.." +
                                      std::to_string(m - 3));
  return a;
}

}  // namespace detail

/// Builds F_alpha block by block.
///
///  1. Maximal runs c..c' of consecutive active constraints cover the index
///     ranges [c, c'+2] of coefficients that lie on one line.
///  2. Every index not covered by a run is its own block.
///  3. Blocks are ordered by their least index.
///  4. Consecutive run blocks sharing an endpoint are merged into a chain;
///     the chain's nodes are the run endpoints.
///  5. Each chain contributes one row per node: 1 at the node and the
///     interpolation weights (h-1)/h, ..., 1/h towards the next node and
///     1/h, ..., (h-1)/h from the previous one, h being the node gap.
inline FAlpha build_F_alpha(std::span<const int> alpha, int m) {
  detail::require(m >= 3, "F_alpha needs m >= 3");
  const std::vector<int> act = detail::normalized_alpha(alpha, m);

  struct Range {
    int lo, hi;
    bool run;
  };
  std::vector<Range> ranges;
  for (std::size_t t = 0; t < act.size();) {
    std::size_t u = t;
    while (u + 1 < act.size() && act[u + 1] == act[u] + 1) ++u;
    ranges.push_back({act[t], act[u] + 2, true});
    t = u + 1;
  }
  std::vector<char> covered(static_cast<std::size_t>(m), 0);
  for (const auto& r : ranges)
    for (int i = r.lo; i <= r.hi; ++i) covered[i] = 1;
  for (int i = 0; i < m; ++i)
    if (!covered[i]) ranges.push_back({i, i, false});
  std::sort(ranges.begin(), ranges.end(), [](const Range& a, const Range& b) { return a.lo < b.lo; });

  FAlpha out;
  out.m = m;
  for (std::size_t j = 0; j < ranges.size();) {
    SelectionBlock blk;
    blk.nodes.push_back(ranges[j].lo);
    std::size_t k = j;
    while (k + 1 < ranges.size() && ranges[k + 1].lo == ranges[k].hi) {
      ++k;
      blk.nodes.push_back(ranges[k].lo);
    }
    if (ranges[k].hi != blk.nodes.back()) blk.nodes.push_back(ranges[k].hi);
    out.blocks.push_back(std::move(blk));
    j = k + 1;
  }

  std::vector<Eigen::Triplet<double>> trip;
  int row = 0;
  for (const auto& blk : out.blocks) {
    const auto& nd = blk.nodes;
    for (std::size_t r = 0; r < nd.size(); ++r, ++row) {
      trip.emplace_back(row, nd[r], 1.0);
      if (r + 1 < nd.size()) {
        const int h = nd[r + 1] - nd[r];
        for (int q = 1; q < h; ++q) trip.emplace_back(row, nd[r] + q, static_cast<double>(h - q) / h);
      }
      if (r > 0) {
        const int h = nd[r] - nd[r - 1];
        for (int q = 1; q < h; ++q) trip.emplace_back(row, nd[r - 1] + q, static_cast<double>(q) / h);
      }
    }
  }
  out.F.resize(row, m);
  out.F.setFromTriplets(trip.begin(), trip.end());
  return out;
}

struct SelectionMatrix {
  Eigen::MatrixXd F;
  Eigen::MatrixXd G;  // F^T (F Lambda F^T)^{-1} F
};

inline constexpr double kMaxReducedCondition = 1e12;

inline SelectionMatrix selection_matrix(const Eigen::MatrixXd& F, const SparseMatrix& Lambda) {
  detail::require(F.cols() == Lambda.rows(), "F and Lambda dimensions differ");
  const Eigen::MatrixXd H = F * (Lambda * F.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(H);
  if (llt.info() != Eigen::Success || llt.rcond() < 1.0 / kMaxReducedCondition)
    throw SingularSystem("reduced system F Lambda F^T is numerically singular");
  SelectionMatrix out;
  out.F = F;
  out.G = F.transpose() * llt.solve(F);
  out.G = 0.5 * (out.G + out.G.transpose()).eval();
  return out;
}

inline SelectionMatrix selection_matrix(const FAlpha& f, const SparseMatrix& Lambda) {
  return selection_matrix(f.dense(), Lambda);
}

// ---------------------------------------------------------------------------
// Active-set solver

struct ConeSolution {
  Eigen::VectorXd b_hat;
  std::vector<int> alpha;        // {i : |(D2 b_hat)_i| <= tol * scale}
  std::vector<int> working_set;  // equalities imposed at termination
  KktCertificate kkt;
  int iterations = 0;
  bool certified = false;
  double objective = 0.0;
};

struct SolveOptions {
  double tol = 1e-9;
  int max_iterations = 0;  // 0 -> 10 * m
};

namespace detail {

inline std::vector<int> to_indices(const std::vector<char>& mask) {
  std::vector<int> out;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out.push_back(static_cast<int>(i));
  return out;
}

/// Minimizer of the objective restricted to {b : (D2 b)_W = 0}.
inline Eigen::VectorXd equality_solve(const ConeProblem& problem, const std::vector<int>& working) {
  const FAlpha fa = build_F_alpha(working, problem.dim());
  const SparseRowMatrix& F = fa.F;
  const SparseMatrix Ft = SparseMatrix(F.transpose());
  const SparseMatrix H = SparseMatrix(F * problem.Lambda * Ft);
  Eigen::SimplicialLLT<SparseMatrix> llt(H);
  if (llt.info() != Eigen::Success) throw SingularSystem("reduced system is not positive definite");
  const Eigen::VectorXd rhs = F * problem.ybar;
  Eigen::VectorXd bt = llt.solve(rhs);
  bt += llt.solve(rhs - H * bt);  // one step of iterative refinement
  return Ft * bt;
}

inline double feasibility_slack(const Eigen::VectorXd& b) {
  return 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, b.lpNorm<Eigen::Infinity>());
}

inline ConeSolution finish(const ConeProblem& problem, Eigen::VectorXd b, const std::vector<char>& working,
                           int iterations, bool converged, double tol) {
  ConeSolution sol;
  sol.kkt = kkt_certificate(problem, b, tol);
  const Eigen::VectorXd d2 = second_differences(b);
  const double geo = tol * sol.kkt.scale;
  for (Eigen::Index i = 0; i < d2.size(); ++i)
    if (std::abs(d2[i]) <= geo) sol.alpha.push_back(static_cast<int>(i));
  sol.working_set = to_indices(working);
  sol.iterations = iterations;
  sol.certified = converged && sol.kkt.passed();
  sol.objective = problem.objective(b);
  sol.b_hat = std::move(b);
  return sol;
}

}  // namespace detail

/// Primal active-set method.
///
/// Warm start: the unconstrained minimizer; while the current equality
/// minimizer violates constraints, all violated constraints join the working
/// set (an affine fit, i.e. every constraint active, is always feasible).
/// Main loop: step towards the working-set minimizer, stopping at the first
/// blocking constraint (lowest index on ties) and adding it; at a working-set
/// minimizer, drop the constraint with the most negative multiplier (lowest
/// index on ties) or stop when none is below -tol.
inline ConeSolution solve(const ConeProblem& problem, const SolveOptions& opts = {}) {
  const int m = problem.dim();
  const int nc = m - 2;
  const int cap = opts.max_iterations > 0 ? opts.max_iterations : 10 * m;
  const double tol_abs = opts.tol * detail::problem_scale(problem);

  std::vector<char> working(static_cast<std::size_t>(nc), 0);
  int iterations = 0;

  Eigen::VectorXd b = detail::equality_solve(problem, {});
  ++iterations;
  for (;;) {
    const Eigen::VectorXd d2 = second_differences(b);
    const double slack = detail::feasibility_slack(b);
    bool added = false;
    for (int i = 0; i < nc; ++i)
      if (!working[i] && d2[i] < -slack) working[i] = added = true;
    if (!added) break;
    b = detail::equality_solve(problem, detail::to_indices(working));
    ++iterations;
  }

  bool converged = false;
  bool at_minimizer = true;  // b currently minimizes over the working set
  while (iterations < cap) {
    if (!at_minimizer) {
      const Eigen::VectorXd target = detail::equality_solve(problem, detail::to_indices(working));
      ++iterations;
      const Eigen::VectorXd step = target - b;
      const Eigen::VectorXd d2b = second_differences(b);
      const Eigen::VectorXd d2p = second_differences(step);
      double t = 1.0;
      int blocking = -1;
      for (int i = 0; i < nc; ++i) {
        if (working[i] || !(d2p[i] < 0.0)) continue;
        const double ratio = std::max(0.0, d2b[i]) / -d2p[i];
        if (ratio < t) {
          t = ratio;
          blocking = i;
        }
      }
      if (blocking >= 0) {
        b += t * step;
        working[blocking] = 1;
        continue;
      }
      b = target;
      at_minimizer = true;
    }

    const Eigen::VectorXd mu = cone_multipliers(problem, b).mu;
    int drop = -1;
    double most_negative = -tol_abs;
    for (int i = 0; i < nc; ++i) {
      if (working[i] && mu[i] < most_negative) {
        most_negative = mu[i];
        drop = i;
      }
    }
    if (drop < 0) {
      converged = true;
      break;
    }
    working[drop] = 0;
    at_minimizer = false;
  }
  return detail::finish(problem, std::move(b), working, iterations, converged, opts.tol);
}

/// Exhaustive oracle over all 2^(m-2) working sets. Each equality problem is
/// solved through its dense Lagrangian saddle system
///
///   [ Lambda  A^T ] [ b  ]   [ ybar ]
///   [ A       0   ] [ -nu] = [ 0    ],   A = rows W of D2,
///
/// so neither F_alpha nor the cumulative-sum multipliers are involved. A set
/// is optimal when D2 b >= 0 and nu >= 0 (to tol); the lowest objective among
/// the optimal sets is returned.
inline ConeSolution enumerate_oracle(const ConeProblem& problem, double tol = 1e-9) {
  const int m = problem.dim();
  detail::require(m <= 12, "enumeration oracle is limited to m <= 12");
  const int nc = m - 2;
  const double tol_abs = tol * detail::problem_scale(problem);
  const Eigen::MatrixXd L = problem.Lambda;
  const Eigen::MatrixXd D = second_diff_matrix(m);
  std::optional<ConeSolution> best;
  for (unsigned mask = 0; mask < (1u << nc); ++mask) {
    std::vector<char> working(static_cast<std::size_t>(nc), 0);
    std::vector<int> rows;
    for (int i = 0; i < nc; ++i)
      if ((mask >> i) & 1u) {
        working[i] = 1;
        rows.push_back(i);
      }
    const int k = static_cast<int>(rows.size());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(m + k, m + k);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m + k);
    kkt.topLeftCorner(m, m) = L;
    for (int r = 0; r < k; ++r) {
      kkt.block(m + r, 0, 1, m) = D.row(rows[r]);
      kkt.block(0, m + r, m, 1) = D.row(rows[r]).transpose();
    }
    rhs.head(m) = problem.ybar;
    const Eigen::VectorXd sol = kkt.fullPivLu().solve(rhs);
    Eigen::VectorXd b = sol.head(m);
    const Eigen::VectorXd nu = -sol.tail(k);
    if (second_differences(b).minCoeff() < -tol_abs) continue;
    if (k > 0 && nu.minCoeff() < -tol_abs) continue;
    ConeSolution cand = detail::finish(problem, std::move(b), working, static_cast<int>(mask) + 1, true, tol);
    if (!best || cand.objective < best->objective) best = std::move(cand);
  }
  if (!best) throw NotCertified("no working set satisfies feasibility and multiplier signs");
  return *best;
}

}  // namespace cvxspline
