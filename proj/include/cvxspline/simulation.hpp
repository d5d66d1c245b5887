#pragma once

// Test functions, reproducible synthetic data, Monte Carlo risk and
// log-log rate fits.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cvxspline/error.hpp"
#include "cvxspline/estimators.hpp"
#include "cvxspline/parallel.hpp"

namespace cvxspline::sim {

struct TestFunction {
  std::string id;
  double r = 1.0;
  double L = 1.0;
  std::function<double(double)> value;
  std::function<double(double)> derivative;
  bool convex = true;

  double operator()(double x) const { return value(x); }
};

inline std::vector<TestFunction> catalog() {
  using std::abs, std::pow, std::exp, std::sqrt;
  return {
      {"f1", 1.0, 1.0, [](double x) { return abs(x - 0.5); },
       [](double x) { return x < 0.5 ? -1.0 : (x > 0.5 ? 1.0 : 0.0); }},
      {"f2", 1.5, 3.0 / std::numbers::sqrt2, [](double x) { return pow(abs(x - 0.5), 1.5); },
       [](double x) { return 1.5 * (x < 0.5 ? -1.0 : 1.0) * sqrt(abs(x - 0.5)); }},
      {"f3", 2.0, 2.0, [](double x) { return x * x; }, [](double x) { return 2.0 * x; }},
      {"f4", 3.0, 2.0, [](double x) { return x * x + 0.1 * x; }, [](double x) { return 2.0 * x + 0.1; }},
      {"f5", 2.0, std::numbers::e, [](double x) { return exp(x); }, [](double x) { return exp(x); }},
  };
}

inline TestFunction find_function(const std::string& id) {
  for (auto& f : catalog())
    if (f.id == id) return f;
  throw InvalidArgument("unknown test function '" + id + "'");
}

// ---------------------------------------------------------------------------
// Random streams

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Seed of the substream for replication `rep` at grid position `cell`.
inline std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t cell, std::uint64_t rep) {
  return splitmix64(splitmix64(splitmix64(seed) ^ cell) ^ rep);
}

/// Standard normals from mt19937_64 via the Box-Muller transform (both
/// variates of each pair are used).
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : rng_(seed) {}

  double operator()() {
    if (cached_) {
      cached_ = false;
      return spare_;
    }
    const double u1 = (static_cast<double>(rng_() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    const double u2 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;          // [0, 1)
    const double rad = std::sqrt(-2.0 * std::log(u1));
    const double ang = 2.0 * std::numbers::pi * u2;
    spare_ = rad * std::sin(ang);
    cached_ = true;
    return rad * std::cos(ang);
  }

 private:
  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool cached_ = false;
};

struct Sample {
  std::vector<double> x;
  std::vector<double> y;
};

/// y_i = f(i/n) + sigma z_i.
inline Sample gen_data(const TestFunction& f, int n, double sigma, std::uint64_t seed) {
  detail::require(n >= 16, "sample size must be at least 16");
  detail::require(sigma >= 0.0, "sigma must be nonnegative");
  Sample s;
  s.x = design_points(n);
  s.y.resize(s.x.size());
  NormalStream z(seed);
  for (std::size_t i = 0; i < s.x.size(); ++i) s.y[i] = f(s.x[i]) + sigma * z();
  return s;
}

// ---------------------------------------------------------------------------
// Summaries

/// Fixed-order pairwise sum.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double a : v) s += a;
    return s;
  }
  const std::size_t h = v.size() / 2;
  return pairwise_sum(v.first(h)) + pairwise_sum(v.subspan(h));
}

struct Summary {
  double mean = 0.0;
  double se = 0.0;        // standard error of the mean
  double variance = 0.0;  // sample variance (n - 1 divisor)
  int count = 0;
};

inline Summary summarize(std::span<const double> v) {
  Summary s;
  s.count = static_cast<int>(v.size());
  if (v.empty()) return s;
  s.mean = pairwise_sum(v) / s.count;
  if (s.count > 1) {
    std::vector<double> sq(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - s.mean) * (v[i] - s.mean);
    s.variance = pairwise_sum(sq) / (s.count - 1);
    s.se = std::sqrt(s.variance / s.count);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Monte Carlo risk

enum class EstimatorKind { fixed_r, adapt_sup, adapt_point };
enum class Metric { sup, pointwise, l2 };

inline std::string to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::fixed_r: return "fixed_r";
    case EstimatorKind::adapt_sup: return "adapt_sup";
    case EstimatorKind::adapt_point: return "adapt_point";
  }
  return "unknown";
}

inline std::string to_string(Metric m) {
  switch (m) {
    case Metric::sup: return "sup";
    case Metric::pointwise: return "pointwise";
    case Metric::l2: return "l2";
  }
  return "unknown";
}

struct EstimatorSpec {
  EstimatorKind kind = EstimatorKind::fixed_r;
  double r = 2.0;                 // fixed_r only
  KnotMode mode = KnotMode::sup;  // fixed_r only
  std::optional<double> L;        // nullopt -> the test function's constant
  std::optional<double> sigma;    // tuning noise level; nullopt -> the true sigma (1 if that is 0)
  double lambda = 0.7;            // adapt_point only

  std::string id() const {
    if (kind != EstimatorKind::fixed_r) return to_string(kind);
    std::ostringstream os;
    os << "fixed_r(" << r << ',' << (mode == KnotMode::sup ? "sup" : "point") << ')';
    return os.str();
  }
};

inline constexpr int kRiskGridSize = 2000;
inline constexpr int kMinReplications = 100;

/// Loss of one estimate against f.
inline double loss(const std::function<double(double)>& fhat, const TestFunction& f, Metric metric, double x0) {
  if (metric == Metric::pointwise) {
    const double e = fhat(x0) - f(x0);
    return e * e;
  }
  double acc = 0.0;
  for (int i = 0; i < kRiskGridSize; ++i) {
    const double t = static_cast<double>(i) / (kRiskGridSize - 1);
    const double e = std::abs(fhat(t) - f(t));
    acc = metric == Metric::sup ? std::max(acc, e) : acc + e * e;
  }
  return metric == Metric::sup ? acc : std::sqrt(acc / kRiskGridSize);
}

/// One replication of the estimator on a data set; returns its loss.
inline double run_estimator(const EstimatorSpec& spec, const TestFunction& f, const Sample& s, double sigma,
                            Metric metric, double x0) {
  const double L = spec.L.value_or(f.L);
  const double tune = spec.sigma.value_or(sigma > 0.0 ? sigma : 1.0);
  switch (spec.kind) {
    case EstimatorKind::fixed_r: {
      const auto fit = fit_fixed_r(s.x, s.y, spec.r, L, tune, spec.mode);
      return loss(fit, f, metric, x0);
    }
    case EstimatorKind::adapt_sup: {
      AdaptiveConfig cfg;
      cfg.L = L;
      cfg.sigma = tune;
      const auto res = adapt_sup(s.x, s.y, cfg);
      return loss(res.fit, f, metric, x0);
    }
    case EstimatorKind::adapt_point: {
      detail::require(metric == Metric::pointwise, "adapt_point only supports the pointwise metric");
      AdaptiveConfig cfg;
      cfg.L = L;
      cfg.sigma = sigma > 0.0 ? spec.sigma.value_or(sigma) : spec.sigma.value_or(0.0);
      cfg.lambda = spec.lambda;
      const double e = adapt_point(s.y, x0, cfg).estimate - f(x0);
      return e * e;
    }
  }
  throw InvalidArgument("unknown estimator");
}

struct RiskRow {
  int n = 0;
  Summary risk;
  int failures = 0;
};

struct RiskReport {
  std::string estimator;
  std::string function;
  Metric metric = Metric::sup;
  double x0 = 0.5;
  double sigma = 0.0;
  int replications = 0;
  std::uint64_t seed = 0;
  std::vector<RiskRow> rows;
};

struct McOptions {
  double x0 = 0.5;
  unsigned threads = 0;
};

/// Mean loss per n over `reps` replications. Replication k at grid index i
/// draws its noise from substream_seed(seed, i, k), so results do not depend
/// on the thread count. Failed replications are counted and excluded.
inline RiskReport mc_risk(const EstimatorSpec& spec, const TestFunction& f, const std::vector<int>& n_grid,
                          double sigma, int reps, Metric metric, std::uint64_t seed, const McOptions& opts = {}) {
  detail::require(reps >= kMinReplications, "at least 100 replications are required");
  detail::require(!n_grid.empty(), "n grid must be nonempty");
  RiskReport rep;
  rep.estimator = spec.id();
  rep.function = f.id;
  rep.metric = metric;
  rep.x0 = opts.x0;
  rep.sigma = sigma;
  rep.replications = reps;
  rep.seed = seed;
  for (std::size_t i = 0; i < n_grid.size(); ++i) {
    const int n = n_grid[i];
    std::vector<std::optional<double>> losses(static_cast<std::size_t>(reps));
    parallel_for(
        losses.size(),
        [&](std::size_t k) {
          const auto s = gen_data(f, n, sigma, substream_seed(seed, i, k));
          try {
            losses[k] = run_estimator(spec, f, s, sigma, metric, opts.x0);
          } catch (const std::runtime_error&) {
            losses[k].reset();
          }
        },
        opts.threads);
    RiskRow row;
    row.n = n;
    std::vector<double> ok;
    for (const auto& l : losses) {
      if (l) ok.push_back(*l);
      else ++row.failures;
    }
    row.risk = summarize(ok);
    rep.rows.push_back(row);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Rate fits

enum class Abscissa { n, n_over_log_n };

struct SlopeFit {
  double slope = 0.0;
  double se = 0.0;
};

/// Ordinary least squares of v on u.
inline SlopeFit ols_slope(std::span<const double> u, std::span<const double> v) {
  detail::require(u.size() == v.size(), "abscissa and ordinate lengths differ");
  detail::require(u.size() >= 4, "a slope needs at least 4 points");
  const double k = static_cast<double>(u.size());
  double mu = 0.0, mv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    mu += u[i];
    mv += v[i];
  }
  mu /= k;
  mv /= k;
  double suu = 0.0, suv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    suu += (u[i] - mu) * (u[i] - mu);
    suv += (u[i] - mu) * (v[i] - mv);
  }
  detail::require(suu > 1e-12 * k, "degenerate abscissa");
  SlopeFit out;
  out.slope = suv / suu;
  double rss = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double e = v[i] - mv - out.slope * (u[i] - mu);
    rss += e * e;
  }
  out.se = std::sqrt(rss / (k - 2.0) / suu);
  return out;
}

inline SlopeFit rate_slope(const RiskReport& report, Abscissa abscissa) {
  std::vector<double> u, v;
  for (const auto& row : report.rows) {
    const double n = row.n;
    u.push_back(std::log(abscissa == Abscissa::n ? n : n / std::log(n)));
    detail::require(row.risk.mean > 0.0, "log-risk needs positive risks");
    v.push_back(std::log(row.risk.mean));
  }
  return ols_slope(u, v);
}

}  // namespace cvxspline::sim
