#pragma once

// Statistical layer: fixed-smoothness convex spline fits, the Lepski-type
// sup-norm adaptive fit, the dyadic pointwise adaptive estimate, the residual
// variance MLE and the unconstrained least-squares comparator.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cvxspline/cone_qp.hpp"
#include "cvxspline/error.hpp"
#include "cvxspline/parallel.hpp"
#include "cvxspline/splines.hpp"

namespace cvxspline {

enum class KnotMode { sup, point };

enum class FitKind { fixed_r, adaptive_sup, pointwise, unconstrained };

inline std::string to_string(FitKind k) {
  switch (k) {
    case FitKind::fixed_r: return "fixed_r";
    case FitKind::adaptive_sup: return "adaptive_sup";
    case FitKind::pointwise: return "pointwise";
    case FitKind::unconstrained: return "unconstrained";
  }
  return "unknown";
}

struct Provenance {
  FitKind kind = FitKind::fixed_r;
  double value = 0.0;  // r for fixed_r / adaptive_sup, j for pointwise, unused otherwise
};

struct FittedSpline {
  SplineBasis basis{1, 2};
  Eigen::VectorXd coeffs;
  Provenance provenance;
  double sigma_used = 0.0;
  std::optional<KktCertificate> kkt;  // absent for unconstrained fits
  int iterations = 0;

  double operator()(double x) const { return basis.evaluate(coeffs, x); }
  Eigen::VectorXd operator()(std::span<const double> xs) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(xs.size()));
    for (std::size_t i = 0; i < xs.size(); ++i) out[static_cast<Eigen::Index>(i)] = (*this)(xs[i]);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Fixed-r fits

/// Knot count for smoothness r: (L/sigma)^{2/(2r+1)} times (n/log n)^{1/(2r+1)}
/// in sup mode or n^{1/(2r+1)} in point mode, rounded and clamped to [3, n].
inline int optimal_Kn(double r, double L, double sigma, int n, KnotMode mode) {
  detail::require(r >= 1.0 && r <= 4.0, "smoothness r must lie in [1,4]");
  detail::require(L > 0.0 && sigma > 0.0, "L and sigma must be positive");
  detail::require(n >= 16, "sample size must be at least 16");
  const double e = 1.0 / (2.0 * r + 1.0);
  const double base = mode == KnotMode::sup ? n / std::log(static_cast<double>(n)) : static_cast<double>(n);
  const double k = std::pow(L / sigma, 2.0 * e) * std::pow(base, e);
  return static_cast<int>(std::clamp(std::round(k), 3.0, static_cast<double>(n)));
}

/// Spline degree used for smoothness r: max(1, ceil(r - 1)).
inline int degree_for(double r) { return std::max(1, static_cast<int>(std::ceil(r - 1.0 - 1e-12))); }

/// Convex least-squares spline with given degree and interval count.
inline FittedSpline fit_convex(std::span<const double> x, std::span<const double> y, int K, int p,
                               const SolveOptions& opts = {}) {
  auto basis = make_basis(p, K);
  detail::require(basis.size() >= 3, "convex fit needs at least 3 coefficients");
  const auto problem = ConeProblem::from_design(build_design(basis, x, y));
  auto sol = solve(problem, opts);
  if (!sol.certified)
    throw NotCertified("solver did not certify optimality (worst relative residual " +
                       std::to_string(sol.kkt.worst_relative()) + ")");
  FittedSpline out;
  out.basis = std::move(basis);
  out.coeffs = std::move(sol.b_hat);
  out.kkt = sol.kkt;
  out.iterations = sol.iterations;
  return out;
}

inline FittedSpline fit_fixed_r(std::span<const double> x, std::span<const double> y, double r, double L,
                                double sigma, KnotMode mode, const SolveOptions& opts = {}) {
  detail::require(x.size() == y.size(), "x and y lengths differ");
  const int K = optimal_Kn(r, L, sigma, static_cast<int>(y.size()), mode);
  auto fit = fit_convex(x, y, K, degree_for(r), opts);
  fit.provenance = {FitKind::fixed_r, r};
  fit.sigma_used = sigma;
  return fit;
}

/// Ordinary least-squares spline; throws SingularSystem on a rank-deficient
/// Gram matrix.
inline FittedSpline fit_unconstrained(std::span<const double> x, std::span<const double> y, int K, int p) {
  auto basis = make_basis(p, K);
  detail::require(y.size() >= static_cast<std::size_t>(basis.size()), "need n >= K + p observations");
  const auto d = build_design(basis, x, y);
  const Eigen::MatrixXd L = d.Lambda;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(L);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1.0 / kMaxReducedCondition)
    throw SingularSystem("design Gram matrix is rank deficient");
  FittedSpline out;
  out.basis = std::move(basis);
  out.coeffs = ldlt.solve(d.ybar);
  out.provenance = {FitKind::unconstrained, 0.0};
  return out;
}

/// sigma^2 estimate |y - fhat(x)|^2 / n.
inline double sigma_mle(std::span<const double> x, std::span<const double> y, const FittedSpline& fit) {
  detail::require(x.size() == y.size() && !y.empty(), "x and y must be nonempty and of equal length");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = y[i] - fit(x[i]);
    acc += r * r;
  }
  return acc / static_cast<double>(y.size());
}

/// Pilot noise level: sqrt of sigma_mle for the p = 1 fit with K = ceil(n^{1/3}).
inline double pilot_sigma(std::span<const double> x, std::span<const double> y) {
  const int n = static_cast<int>(y.size());
  const int K = std::max(3, static_cast<int>(std::ceil(std::cbrt(static_cast<double>(n)) - 1e-9)));
  return std::sqrt(sigma_mle(x, y, fit_convex(x, y, K, 1)));
}

// ---------------------------------------------------------------------------
// Sup-norm adaptation

struct AdaptiveConfig {
  double L = 1.0;
  std::optional<double> sigma;  // nullopt -> pilot estimate
  std::optional<double> C1;     // nullopt -> design-derived default
  std::optional<double> C2;
  double lambda = 0.7;
  int sup_grid_cap = 0;   // 0 -> tau_n; otherwise at most this many grid points above r = 1
  int dyadic_j_cap = 0;   // 0 -> largest j with K_{n,j} <= n / 8
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

/// tau_n + 1 equispaced smoothness values from 1 to 2, tau_n = ceil(sqrt(log n)).
inline std::vector<double> lepski_grid(int n) {
  detail::require(n >= 3, "lepski grid needs n >= 3");
  const int tau = static_cast<int>(std::ceil(std::sqrt(std::log(static_cast<double>(n)))));
  std::vector<double> out;
  for (int j = 0; j <= tau; ++j) out.push_back(1.0 + static_cast<double>(j) / tau);
  return out;
}

struct RiskConstants {
  double C1 = 0.0;
  double C2 = 0.0;
};

/// Constants of the bias and stochastic bounds evaluated on the p = 1
/// reference design (K = 32, n = 64 K): with B = Lambda^{-1},
///   C2 = max_k sqrt(B_kk n / (K beta_n))       (per-coefficient noise sd in units of sigma sqrt(K/n)),
///   C1 = 1 + |B|_inf max_k sum_i B_k(x_i) / beta_n.
inline RiskConstants default_risk_constants() {
  static const RiskConstants cached = [] {
    constexpr int K = 32, n = 64 * K;
    const auto basis = make_basis(1, K);
    const auto d = build_design(basis, std::vector<double>(n, 0.0));
    const Eigen::MatrixXd B = Eigen::MatrixXd(d.Lambda).inverse();
    const Eigen::VectorXd colsum = d.X.transpose() * Eigen::VectorXd::Ones(n) / d.beta_n;
    const double cinf = B.cwiseAbs().rowwise().sum().maxCoeff();
    const double c2 = std::sqrt(B.diagonal().maxCoeff() * n / (K * d.beta_n));
    return RiskConstants{1.0 + cinf * colsum.maxCoeff(), c2};
  }();
  return cached;
}

inline RiskConstants risk_constants(const AdaptiveConfig& cfg) {
  const auto def = default_risk_constants();
  return {cfg.C1.value_or(def.C1), cfg.C2.value_or(def.C2)};
}

/// Balancing knot count K_(r) (unrounded).
inline double K_r(double r, int n, double L, double sigma, const RiskConstants& c) {
  const double e = 1.0 / (2.0 * r + 1.0);
  const double t = std::log(static_cast<double>(n)) / n;
  return std::pow(c.C2 / (c.C1 * r * std::sqrt(2.0 * (2.0 * r + 1.0))), -2.0 * e) * std::pow(sigma / L, -2.0 * e) *
         std::pow(t, -e);
}

/// psi_(r) = C1 L K^{-r} + sqrt(2/(2r+1)) C2 sigma sqrt(K log n / n) at K = K_(r).
inline double psi(double r, int n, double L, double sigma, const RiskConstants& c) {
  detail::require(r >= 1.0 && r <= 2.0, "psi is defined for r in [1,2]");
  const double K = K_r(r, n, L, sigma, c);
  const double t = std::log(static_cast<double>(n)) / n;
  return c.C1 * L * std::pow(K, -r) + std::sqrt(2.0 / (2.0 * r + 1.0)) * c.C2 * sigma * std::sqrt(K * t);
}

inline double psi(double r, int n, const AdaptiveConfig& cfg) {
  detail::require(cfg.sigma.has_value(), "psi needs a resolved sigma");
  return psi(r, n, cfg.L, *cfg.sigma, risk_constants(cfg));
}

/// max_{x in [0,1]} |f(x) - g(x)|: exact over the union of breakpoints when
/// both splines are piecewise linear (or constant, checked from both sides),
/// otherwise over 1000 max(K_f, K_g) + 1 equispaced points.
inline double sup_distance(const FittedSpline& f, const FittedSpline& g) {
  const int pf = f.basis.degree(), pg = g.basis.degree();
  const int kf = f.basis.num_intervals(), kg = g.basis.num_intervals();
  double best = 0.0;
  auto probe = [&](double x) { best = std::max(best, std::abs(f(x) - g(x))); };
  if (pf <= 1 && pg <= 1) {
    std::vector<double> pts;
    for (int j = 0; j <= kf; ++j) pts.push_back(f.basis.breakpoint(j));
    for (int j = 0; j <= kg; ++j) pts.push_back(g.basis.breakpoint(j));
    for (double x : pts) {
      probe(x);
      if (pf == 0 || pg == 0) {
        // right limits at a breakpoint of a step function
        const double xr = std::nextafter(x, 2.0);
        if (xr <= 1.0) probe(xr);
      }
    }
    return best;
  }
  const int N = 1000 * std::max(kf, kg);
  for (int i = 0; i <= N; ++i) probe(static_cast<double>(i) / N);
  return best;
}

struct SupTrace {
  std::vector<double> grid;
  std::vector<int> knots;                    // K used for each grid fit
  std::vector<double> thresholds;            // (1 + sqrt 2)/2 psi_(r_j)
  std::vector<std::vector<double>> distance; // distance[k][j] = |f_k - f_j|_inf
  int k_hat = 0;
  double r_hat = 1.0;
  double sigma = 0.0;
  RiskConstants constants;
};

struct SupResult {
  FittedSpline fit;
  SupTrace trace;
};

/// k_hat = largest k such that |f_(r_k) - f_(r_j)|_inf <= threshold_j for every j <= k.
inline int lepski_select(const std::vector<std::vector<double>>& dist, const std::vector<double>& thr) {
  int k_hat = 0;
  for (int k = 1; k < static_cast<int>(thr.size()); ++k) {
    bool ok = true;
    for (int j = 0; j <= k && ok; ++j) ok = dist[k][j] <= thr[j];
    if (ok) k_hat = k;
  }
  return k_hat;
}

inline SupResult adapt_sup(std::span<const double> x, std::span<const double> y, AdaptiveConfig cfg,
                           const SolveOptions& opts = {}) {
  const int n = static_cast<int>(y.size());
  detail::require(x.size() == y.size(), "x and y lengths differ");
  detail::require(n >= 64, "adapt_sup needs n >= 64");
  if (!cfg.sigma) cfg.sigma = pilot_sigma(x, y);
  detail::require(*cfg.sigma > 0.0, "noise level must be positive");

  SupTrace tr;
  tr.sigma = *cfg.sigma;
  tr.constants = risk_constants(cfg);
  tr.grid = lepski_grid(n);
  if (cfg.sup_grid_cap > 0 && static_cast<int>(tr.grid.size()) > cfg.sup_grid_cap + 1)
    tr.grid.resize(static_cast<std::size_t>(cfg.sup_grid_cap) + 1);
  const std::size_t G = tr.grid.size();

  std::vector<FittedSpline> fits(G);
  parallel_for(
      G, [&](std::size_t j) { fits[j] = fit_fixed_r(x, y, tr.grid[j], cfg.L, tr.sigma, KnotMode::sup, opts); },
      cfg.threads);

  tr.distance.assign(G, std::vector<double>(G, 0.0));
  for (std::size_t k = 0; k < G; ++k) {
    tr.knots.push_back(fits[k].basis.num_intervals());
    tr.thresholds.push_back((1.0 + std::numbers::sqrt2) / 2.0 * psi(tr.grid[k], n, cfg.L, tr.sigma, tr.constants));
    for (std::size_t j = 0; j < k; ++j) tr.distance[k][j] = tr.distance[j][k] = sup_distance(fits[k], fits[j]);
  }
  tr.k_hat = lepski_select(tr.distance, tr.thresholds);
  tr.r_hat = tr.grid[static_cast<std::size_t>(tr.k_hat)];

  SupResult out{std::move(fits[static_cast<std::size_t>(tr.k_hat)]), std::move(tr)};
  out.fit.provenance = {FitKind::adaptive_sup, out.trace.r_hat};
  return out;
}

// ---------------------------------------------------------------------------
// Pointwise adaptation

/// Means of y over K consecutive blocks of n / K observations.
inline Eigen::VectorXd binned_means(std::span<const double> y, int K) {
  const int n = static_cast<int>(y.size());
  detail::require(K >= 1 && n % K == 0, "bin count must divide the sample size");
  const int M = n / K;
  Eigen::VectorXd out(K);
  for (int k = 0; k < K; ++k) {
    double s = 0.0;
    for (int i = 0; i < M; ++i) s += y[static_cast<std::size_t>(k * M + i)];
    out[k] = s / M;
  }
  return out;
}

/// Centres of the bins: zeta_k = ((k-1) M + (M+1)/2) / n, k = 1..K.
inline Eigen::VectorXd zeta_points(int n, int K) {
  detail::require(K >= 1 && n % K == 0, "bin count must divide the sample size");
  const double M = static_cast<double>(n / K);
  Eigen::VectorXd z(K);
  for (int k = 0; k < K; ++k) z[k] = (k * M + (M + 1.0) / 2.0) / n;
  return z;
}

/// Convex projection of a sequence (the p = 0 fit on binned means).
inline Eigen::VectorXd convex_fit_p0(const Eigen::VectorXd& ybar, const SolveOptions& opts = {}) {
  const int K = static_cast<int>(ybar.size());
  detail::require(K >= 3, "convex projection needs at least 3 values");
  SparseMatrix I(K, K);
  I.setIdentity();
  const auto sol = solve(ConeProblem(std::move(I), ybar), opts);
  if (!sol.certified) throw NotCertified("convex projection was not certified");
  return sol.b_hat;
}

struct PointwiseStep {
  int j = 0;
  int K = 0;
  int n_used = 0;        // observations kept so that K divides them
  int d = 0;             // 1-based bin with zeta_d < x0 <= zeta_{d+1}
  bool evaluable = true; // offsets d-2 and d+4 in range
  double statistic = 0.0;
  double threshold = 0.0;
  int indicator = 0;     // I_j
  std::optional<double> estimate;
};

struct PointwiseTrace {
  double x0 = 0.5;
  double sigma = 0.0;
  double lambda = 0.7;
  int j_selected = -1;
  bool capped = false;  // no indicator fired up to the cap; the last evaluable j was used
  std::vector<PointwiseStep> steps;
};

struct PointwiseResult {
  double estimate = 0.0;
  PointwiseTrace trace;
};

namespace detail {

inline int dyadic_K(int n, int j) {
  return static_cast<int>(std::round(std::ldexp(std::pow(static_cast<double>(n), 0.2), j)));
}

/// Linear interpolation of (zeta_k, b_k) at x0 with zeta_d < x0 <= zeta_{d+1} (d 1-based).
inline double interpolate(const Eigen::VectorXd& zeta, const Eigen::VectorXd& b, int d, double x0) {
  const int lo = d - 1, hi = d;
  const double w = (x0 - zeta[lo]) / (zeta[hi] - zeta[lo]);
  return (1.0 - w) * b[lo] + w * b[hi];
}

}  // namespace detail

/// Dyadic pointwise adaptive estimate of f(x0) from y observed at x_i = i/n.
/// For j = 0, 1, ... the observations are grouped into K_{n,j} = round(2^j n^{1/5})
/// bins (the trailing n mod K observations are dropped); the chain stops at
/// the first j with
///   (ybar_{d+4} - ybar_{d+3}) - (ybar_{d-2} - ybar_{d-3}) <= lambda 2^{j/2+1} n^{-2/5} sigma.
/// Levels whose offsets fall outside 1..K are skipped.
inline PointwiseResult adapt_point(std::span<const double> y, double x0, AdaptiveConfig cfg,
                                   const SolveOptions& opts = {}) {
  const int n = static_cast<int>(y.size());
  detail::require(x0 > 0.0 && x0 < 1.0, "x0 must lie in (0,1)");
  detail::require(n >= 64, "adapt_point needs n >= 64");
  detail::require(cfg.lambda > 0.6745, "lambda must satisfy P(Z > lambda) < 1/4");
  if (!cfg.sigma) {
    const auto x = design_points(n);
    cfg.sigma = pilot_sigma(x, y);
  }

  PointwiseTrace tr;
  tr.x0 = x0;
  tr.sigma = *cfg.sigma;
  tr.lambda = cfg.lambda;
  int j_max = 0;
  while (detail::dyadic_K(n, j_max + 1) <= n / 8) ++j_max;
  if (cfg.dyadic_j_cap > 0) j_max = std::min(j_max, cfg.dyadic_j_cap);
  const double scale = cfg.lambda * std::pow(static_cast<double>(n), -0.4) * tr.sigma;

  int last_evaluable = -1;
  Eigen::VectorXd last_means, last_zeta;
  for (int j = 0; j <= j_max; ++j) {
    PointwiseStep st;
    st.j = j;
    st.K = detail::dyadic_K(n, j);
    st.n_used = (n / st.K) * st.K;
    const Eigen::VectorXd zeta = zeta_points(st.n_used, st.K) * (static_cast<double>(st.n_used) / n);
    st.d = static_cast<int>(std::count_if(zeta.begin(), zeta.end(), [&](double z) { return z < x0; }));
    st.evaluable = st.d - 2 >= 2 && st.d + 4 <= st.K;
    if (!st.evaluable) {
      tr.steps.push_back(st);
      continue;
    }
    const Eigen::VectorXd means = binned_means(y.first(static_cast<std::size_t>(st.n_used)), st.K);
    auto diff = [&](int k) { return means[k - 1] - means[k - 2]; };  // 1-based first difference
    st.statistic = diff(st.d + 4) - diff(st.d - 2);
    st.threshold = scale * std::pow(2.0, j / 2.0 + 1.0);
    st.indicator = st.statistic <= st.threshold ? 1 : 0;
    last_evaluable = static_cast<int>(tr.steps.size());
    last_means = means;
    last_zeta = zeta;
    if (st.indicator) {
      st.estimate = detail::interpolate(zeta, convex_fit_p0(means, opts), st.d, x0);
      tr.j_selected = j;
      tr.steps.push_back(st);
      return {*st.estimate, std::move(tr)};
    }
    tr.steps.push_back(st);
  }
  if (last_evaluable < 0)
    throw BoundaryError("x0 = " + std::to_string(x0) + " is too close to the boundary for every bin level");
  auto& st = tr.steps[static_cast<std::size_t>(last_evaluable)];
  st.indicator = 1;
  st.estimate = detail::interpolate(last_zeta, convex_fit_p0(last_means, opts), st.d, x0);
  tr.j_selected = st.j;
  tr.capped = true;
  return {*st.estimate, std::move(tr)};
}

/// Same, for data supplied with its design; the binning requires x_i = i/n.
inline PointwiseResult adapt_point(std::span<const double> x, std::span<const double> y, double x0,
                                   const AdaptiveConfig& cfg, const SolveOptions& opts = {}) {
  detail::require(x.size() == y.size(), "x and y lengths differ");
  const double n = static_cast<double>(y.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    detail::require(std::abs(x[i] - (i + 1) / n) <= 1e-9, "pointwise adaptation needs the design x_i = i/n");
  return adapt_point(y, x0, cfg, opts);
}

}  // namespace cvxspline
