// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails. Optional argument: a comma-separated
// list of criterion numbers to run.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cvxspline/cvxspline.hpp"
#include "test_support.hpp"

using namespace cvxspline;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome solver_matches_enumeration() {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  int count = 0;
  for (int m = 3; m <= 10; ++m) {
    for (int i = 0; i < 200; ++i, ++count) {
      const auto prob = cvxspline::testing::random_problem(rng, m, i);
      const Eigen::VectorXd diff = solve(prob).b_hat - enumerate_oracle(prob).b_hat;
      worst = std::max(worst, diff.lpNorm<Eigen::Infinity>());
    }
  }
  return {worst <= 1e-8, fmt("%d instances, max |b - b_oracle|_inf = %.3e (limit 1e-8)", count, worst)};
}

Outcome certificates_pass() {
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<int> pdist(0, 3), kdist(4, 32);
  int failed = 0;
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto prob = cvxspline::testing::random_design_problem(rng, pdist(rng), kdist(rng));
    const auto sol = solve(prob, {.tol = 1e-9});
    if (!sol.kkt.passed()) ++failed;
    worst = std::max(worst, sol.kkt.worst_relative());
  }
  return {failed == 0, fmt("1000 instances, %d failed, worst relative residual %.3e (limit 1e-9)", failed, worst)};
}

Outcome matrix_structure() {
  int violations = 0, tested = 0;
  double eig_lo = 1.0, eig_hi = 0.0, row_dev = 0.0;
  auto check = [&](const std::vector<int>& a, int m) {
    ++tested;
    const auto st = lipschitz::check_FF_structure(a, m);
    const auto rs = lipschitz::row_sum_identity(a, m, 1e-12);
    const auto ev = lipschitz::eig_sandwich(a, m);
    eig_lo = std::min(eig_lo, ev.min);
    eig_hi = std::max(eig_hi, ev.max);
    row_dev = std::max(row_dev, rs.max_deviation);
    if (!st.passed || !rs.passed || !ev.within(1.0 / 3.0, 1.0, 1e-10)) ++violations;
  };
  for (int m = 3; m <= 10; ++m)
    for (const auto& a : lipschitz::all_alphas(m)) check(a, m);
  std::mt19937_64 rng(303);
  for (int m : {32, 64})
    for (int i = 0; i < 1000; ++i) check(cvxspline::testing::random_subset(rng, m - 2), m);
  return {violations == 0, fmt("%d active sets, %d violations, eig range [%.6f, %.6f], max row-sum dev %.2e",
                               tested, violations, eig_lo, eig_hi, row_dev)};
}

Outcome uniform_lipschitz() {
  lipschitz::SweepOptions opts;
  opts.exhaustive_max_m = 0;  // sample 200 sets at every K
  const auto rep = lipschitz::inf_norm_sweep(1, {8, 16, 32, 64, 128}, 200, 404, opts);
  std::ostringstream os;
  os << "max |G|_inf per K:";
  for (const auto& r : rep.rows) os << ' ' << r.num_intervals << ':' << fmt("%.4f", r.max_inf_norm);
  os << fmt("; max/min = %.4f (limit 1.5)", rep.growth_ratio);
  return {rep.growth_ratio <= 1.5 && rep.structure_violations == 0, os.str()};
}

const std::vector<int> kRateGrid{1 << 9, 1 << 10, 1 << 11, 1 << 12, 1 << 13, 1 << 14};

Outcome sup_rate() {
  sim::EstimatorSpec spec;
  spec.r = 2.0;
  spec.mode = KnotMode::sup;
  const auto rep = sim::mc_risk(spec, sim::find_function("f3"), kRateGrid, 0.1, 200, sim::Metric::sup, 505);
  const auto s = sim::rate_slope(rep, sim::Abscissa::n_over_log_n);
  return {s.slope >= -0.48 && s.slope <= -0.32,
          fmt("slope %.4f (se %.4f) vs log(n/log n), window [-0.48, -0.32]", s.slope, s.se)};
}

Outcome pointwise_rate() {
  sim::EstimatorSpec spec;
  spec.r = 2.0;
  spec.mode = KnotMode::point;
  const auto rep = sim::mc_risk(spec, sim::find_function("f3"), kRateGrid, 0.1, 200, sim::Metric::pointwise, 606);
  const auto s = sim::rate_slope(rep, sim::Abscissa::n);
  return {s.slope >= -0.92 && s.slope <= -0.65,
          fmt("slope %.4f (se %.4f) vs log n, window [-0.92, -0.65]", s.slope, s.se)};
}

Outcome adaptive_budget() {
  bool ok = true;
  std::ostringstream os;
  for (const char* id : {"f1", "f2", "f3"}) {
    const auto f = sim::find_function(id);
    sim::EstimatorSpec oracle_sup{.kind = sim::EstimatorKind::fixed_r, .r = f.r, .mode = KnotMode::sup};
    sim::EstimatorSpec oracle_pt{.kind = sim::EstimatorKind::fixed_r, .r = f.r, .mode = KnotMode::point};
    sim::EstimatorSpec ad_sup{.kind = sim::EstimatorKind::adapt_sup};
    sim::EstimatorSpec ad_pt{.kind = sim::EstimatorKind::adapt_point};
    // identical seeds: every estimator sees the same data sets
    const auto a = sim::mc_risk(ad_sup, f, {1 << 12}, 0.1, 200, sim::Metric::sup, 707).rows[0];
    const auto o = sim::mc_risk(oracle_sup, f, {1 << 12}, 0.1, 200, sim::Metric::sup, 707).rows[0];
    const auto ap = sim::mc_risk(ad_pt, f, {1 << 12}, 0.1, 200, sim::Metric::pointwise, 707).rows[0];
    const auto op = sim::mc_risk(oracle_pt, f, {1 << 12}, 0.1, 200, sim::Metric::pointwise, 707).rows[0];
    const double rs = a.risk.mean / o.risk.mean, rp = ap.risk.mean / op.risk.mean;
    const int failures = a.failures + o.failures + ap.failures + op.failures;
    ok = ok && rs <= 3.0 && rp <= 3.0 && failures == 0;
    os << fmt("%s sup ratio %.3f, pointwise ratio %.3f; ", id, rs, rp);
    if (failures) os << failures << " failed replications; ";
  }
  os << "limit 3";
  return {ok, os.str()};
}

Outcome variance_mle() {
  const auto f = sim::find_function("f3");
  const int n = 5000, reps = 500;
  const double sigma = 0.5, s2 = sigma * sigma;
  const int K = static_cast<int>(std::ceil(std::cbrt(static_cast<double>(n))));
  std::vector<double> est(reps), scaled(reps);
  parallel_for(est.size(), [&](std::size_t k) {
    const auto s = sim::gen_data(f, n, sigma, sim::substream_seed(808, 0, k));
    est[k] = sigma_mle(s.x, s.y, fit_convex(s.x, s.y, K, 1));
    scaled[k] = std::sqrt(static_cast<double>(n)) * (est[k] - s2);
  });
  const auto m = sim::summarize(est);
  const auto v = sim::summarize(scaled);
  const double z = (m.mean - s2) / m.se;
  const double target = 2.0 * s2 * s2;
  const bool ok = std::abs(z) <= 3.0 && std::abs(v.variance - target) <= 0.25 * target;
  return {ok, fmt("K=%d, mean %.6f (%.2f SE from 0.25, limit 3), var of sqrt(n)(s2-sigma2) %.4f vs 0.125 (+-25%%)",
                  K, m.mean, z, v.variance)};
}

double agreement_fraction(int n, int p, std::uint64_t seed) {
  const auto f = sim::find_function("f4");
  const int K = static_cast<int>(std::ceil(std::pow(static_cast<double>(n), 1.0 / 7.0)));
  std::vector<int> agree(200, 0);
  parallel_for(agree.size(), [&](std::size_t k) {
    const auto s = sim::gen_data(f, n, 0.05, sim::substream_seed(seed, static_cast<std::uint64_t>(n), k));
    const Eigen::VectorXd d = fit_convex(s.x, s.y, K, p).coeffs - fit_unconstrained(s.x, s.y, K, p).coeffs;
    agree[k] = d.lpNorm<Eigen::Infinity>() <= 1e-8;
  });
  return static_cast<double>(std::count(agree.begin(), agree.end(), 1)) / agree.size();
}

Outcome agreement() {
  // K = ceil(n^{1/7}) is the knot rule for r = 3, which the fixed-r rule fits with p = 2.
  const int p = degree_for(3.0);
  const double lo = agreement_fraction(1 << 11, p, 909), hi = agreement_fraction(1 << 13, p, 909);
  const double lo1 = agreement_fraction(1 << 11, 1, 909), hi1 = agreement_fraction(1 << 13, 1, 909);
  return {hi >= lo && hi >= 0.9,
          fmt("p=%d: agreement %.3f at n=2^11, %.3f at n=2^13 (need nondecreasing, >= 0.9); p=1 for reference: "
              "%.3f, %.3f",
              p, lo, hi, lo1, hi1)};
}

Outcome boundary_consistency() {
  const auto f = sim::find_function("f3");
  const std::vector<int> grid{1 << 9, 1 << 11, 1 << 13};
  std::vector<sim::Summary> at0, at1;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    std::vector<double> e0(200), e1(200);
    parallel_for(e0.size(), [&](std::size_t k) {
      const auto s = sim::gen_data(f, grid[i], 0.1, sim::substream_seed(1010, i, k));
      const auto fit = fit_fixed_r(s.x, s.y, 2.0, f.L, 0.1, KnotMode::sup);
      e0[k] = std::abs(fit(0.0) - f(0.0));
      e1[k] = std::abs(fit(1.0) - f(1.0));
    });
    at0.push_back(sim::summarize(e0));
    at1.push_back(sim::summarize(e1));
  }
  bool ok = true;
  for (const auto* s : {&at0, &at1})
    for (std::size_t i = 1; i < s->size(); ++i)
      ok = ok && (*s)[i].mean <= (*s)[i - 1].mean + 2.0 * std::hypot((*s)[i].se, (*s)[i - 1].se);
  std::ostringstream os;
  os << "MAE at x=0:";
  for (const auto& s : at0) os << fmt(" %.5f", s.mean);
  os << "; at x=1:";
  for (const auto& s : at1) os << fmt(" %.5f", s.mean);
  os << " (n = 2^9, 2^11, 2^13)";
  return {ok, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"solver matches enumeration oracle", solver_matches_enumeration},
      {"optimality certificate on random designs", certificates_pass},
      {"selection-matrix structure", matrix_structure},
      {"uniform max-norm Lipschitz bound", uniform_lipschitz},
      {"sup-norm rate", sup_rate},
      {"pointwise rate", pointwise_rate},
      {"adaptive estimators within risk budget", adaptive_budget},
      {"variance MLE", variance_mle},
      {"constrained equals unconstrained for strongly convex f", agreement},
      {"boundary consistency", boundary_consistency},
  };
  std::set<int> only;
  if (argc > 1) {
    std::stringstream ss(argv[1]);
    for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
  }

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = criteria[i].second();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (out.passed ? "PASS" : "FAIL") << "  [" << id << "] " << criteria[i].first << ": " << out.detail
              << fmt(" (%.1fs)", secs) << std::endl;
    if (!out.passed) ++failed;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << '\n';
  return failed ? 1 : 0;
}
