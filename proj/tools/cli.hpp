#pragma once

// Command-line front end. Exit codes:
//   0 success, 2 malformed input or configuration, 3 solver failure
//   (non-certified or singular), 4 boundary error, 5 verification failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cvxspline/cvxspline.hpp"

namespace cvxspline::cli {

using nlohmann::json;

enum ExitCode : int {
  kOk = 0,
  kBadInput = 2,
  kSolverFailure = 3,
  kBoundary = 4,
  kVerificationFailed = 5,
};

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct XYData {
  std::vector<double> x;
  std::vector<double> y;
};

namespace detail {

inline std::string trim(std::string s) {
  const auto a = s.find_first_not_of(" \t\r");
  const auto b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
}

inline double parse_cell(const std::string& cell, int line) {
  const std::string t = trim(cell);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(t, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (t.empty() || used != t.size() || !std::isfinite(v))
    throw InputError("row " + std::to_string(line) + ": '" + t + "' is not a finite number");
  return v;
}

}  // namespace detail

/// Two-column CSV with header `x,y`; x strictly increasing in (0, 1].
inline XYData read_xy_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InputError("empty input: expected header 'x,y'");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);  // BOM
  if (detail::trim(line) != "x,y") throw InputError("row 1: expected header 'x,y', got '" + detail::trim(line) + "'");
  XYData d;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
      throw InputError("row " + std::to_string(row) + ": expected two comma-separated fields");
    const double x = detail::parse_cell(line.substr(0, comma), row);
    const double y = detail::parse_cell(line.substr(comma + 1), row);
    if (!(x > 0.0 && x <= 1.0)) throw InputError("row " + std::to_string(row) + ": x must lie in (0,1]");
    if (!d.x.empty() && !(x > d.x.back()))
      throw InputError("row " + std::to_string(row) + ": x must be strictly increasing");
    d.x.push_back(x);
    d.y.push_back(y);
  }
  if (d.x.empty()) throw InputError("no data rows");
  return d;
}

inline XYData read_xy_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  return read_xy_csv(in);
}

inline json kkt_json(const KktCertificate& k) {
  return {{"primal_violation", k.primal_violation}, {"dual_violation", k.dual_violation},
          {"complementarity_gap", k.complementarity_gap}, {"boundary_sum", k.boundary_sum},
          {"boundary_moment", k.boundary_moment}, {"tol", k.tol}, {"scale", k.scale}, {"passed", k.passed()}};
}

inline json fit_json(const FittedSpline& f) {
  json j{{"provenance", to_string(f.provenance.kind)},
         {"degree", f.basis.degree()},
         {"num_intervals", f.basis.num_intervals()},
         {"num_coefficients", f.basis.size()},
         {"iterations", f.iterations}};
  if (f.basis.size() >= 3) j["min_second_difference"] = second_differences(f.coeffs).minCoeff();
  if (f.kkt) j["kkt"] = kkt_json(*f.kkt);
  return j;
}

class OutputDir {
 public:
  explicit OutputDir(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

  std::ofstream open(const std::string& name) const {
    std::ofstream out(dir_ / name);
    if (!out) throw InputError("cannot write '" + (dir_ / name).string() + "'");
    out << std::setprecision(17);
    return out;
  }

  void write_json(const std::string& name, const json& j) const { open(name) << j.dump(2) << '\n'; }

  /// Evaluation grid i / (N - 1), i = 0..N-1, as `x,fhat`.
  void write_fit(const FittedSpline& f, int grid_size) const {
    auto out = open("fit.csv");
    out << "x,fhat\n";
    for (int i = 0; i < grid_size; ++i) {
      const double x = static_cast<double>(i) / (grid_size - 1);
      out << x << ',' << f(x) << '\n';
    }
    auto c = open("coefficients.csv");
    c << "index,coefficient\n";
    for (Eigen::Index k = 0; k < f.coeffs.size(); ++k) c << k << ',' << f.coeffs[k] << '\n';
  }

 private:
  std::filesystem::path dir_;
};

/// `--sigma` accepts a positive number or "auto".
inline std::optional<double> parse_sigma(const std::string& s) {
  if (s == "auto") return std::nullopt;
  const double v = detail::parse_cell(s, 0);
  if (!(v > 0.0)) throw InputError("--sigma must be positive or 'auto'");
  return v;
}

inline KnotMode parse_mode(const std::string& s) { return s == "point" ? KnotMode::point : KnotMode::sup; }

// ---------------------------------------------------------------------------
// Commands

struct CommonOptions {
  std::string input;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

struct FitOptions {
  double r = 2.0;
  double L = 1.0;
  std::string sigma = "auto";
  std::string mode = "sup";
  int grid_size = 1001;
};

inline int cmd_fit(const CommonOptions& c, const FitOptions& o, std::ostream& out) {
  const auto d = read_xy_csv(c.input);
  const auto given = parse_sigma(o.sigma);
  const double sigma = given ? *given : pilot_sigma(d.x, d.y);
  const auto fit = fit_fixed_r(d.x, d.y, o.r, o.L, sigma, parse_mode(o.mode));
  json s = fit_json(fit);
  s["command"] = "fit";
  s["n"] = d.x.size();
  s["r"] = o.r;
  s["L"] = o.L;
  s["mode"] = o.mode;
  s["sigma"] = sigma;
  s["sigma_source"] = given ? "given" : "auto";
  s["sigma2_hat"] = sigma_mle(d.x, d.y, fit);
  const OutputDir dir(c.out_dir);
  dir.write_fit(fit, o.grid_size);
  dir.write_json("summary.json", s);
  out << s.dump() << '\n';
  return kOk;
}

struct AdaptOptions {
  double L = 1.0;
  std::string sigma = "auto";
  std::optional<double> C1, C2;
  int sup_grid_cap = 0;
  int dyadic_j_cap = 0;
  double lambda = 0.7;
  double x0 = 0.5;
  int grid_size = 1001;
};

inline AdaptiveConfig to_config(const CommonOptions& c, const AdaptOptions& o) {
  AdaptiveConfig cfg;
  cfg.L = o.L;
  cfg.sigma = parse_sigma(o.sigma);
  cfg.C1 = o.C1;
  cfg.C2 = o.C2;
  cfg.lambda = o.lambda;
  cfg.sup_grid_cap = o.sup_grid_cap;
  cfg.dyadic_j_cap = o.dyadic_j_cap;
  cfg.seed = c.seed;
  cfg.threads = c.threads == 0 ? 1 : c.threads;
  return cfg;
}

inline int cmd_adapt_sup(const CommonOptions& c, const AdaptOptions& o, std::ostream& out) {
  const auto d = read_xy_csv(c.input);
  const auto res = adapt_sup(d.x, d.y, to_config(c, o));
  const auto& t = res.trace;
  json tr{{"command", "adapt-sup"},
          {"n", d.x.size()},
          {"grid", t.grid},
          {"num_intervals", t.knots},
          {"thresholds", t.thresholds},
          {"distances", t.distance},
          {"k_hat", t.k_hat},
          {"r_hat", t.r_hat},
          {"sigma", t.sigma},
          {"c1", t.constants.C1},
          {"c2", t.constants.C2},
          {"fit", fit_json(res.fit)}};
  const OutputDir dir(c.out_dir);
  dir.write_fit(res.fit, o.grid_size);
  dir.write_json("trace.json", tr);
  out << tr.dump() << '\n';
  return kOk;
}

inline int cmd_adapt_point(const CommonOptions& c, const AdaptOptions& o, std::ostream& out) {
  if (!(o.x0 > 0.0 && o.x0 < 1.0)) throw InputError("--x0 must lie in (0,1)");
  const auto d = read_xy_csv(c.input);
  const auto res = adapt_point(d.x, d.y, o.x0, to_config(c, o));
  const auto& t = res.trace;
  json steps = json::array();
  for (const auto& s : t.steps) {
    steps.push_back({{"j", s.j},
                     {"num_bins", s.K},
                     {"n_used", s.n_used},
                     {"d", s.d},
                     {"evaluable", s.evaluable},
                     {"statistic", s.statistic},
                     {"threshold", s.threshold},
                     {"indicator", s.indicator},
                     {"estimate", s.estimate ? json(*s.estimate) : json(nullptr)}});
  }
  json j{{"command", "adapt-point"}, {"n", d.x.size()},          {"x0", t.x0},
         {"estimate", res.estimate}, {"j_selected", t.j_selected}, {"capped", t.capped},
         {"sigma", t.sigma},         {"lambda", t.lambda},         {"steps", steps}};
  OutputDir(c.out_dir).write_json("point.json", j);
  out << j.dump() << '\n';
  return kOk;
}

struct SigmaOptions {
  int K = 0;  // 0 -> ceil(n^{1/3})
  int degree = 1;
};

inline int cmd_sigma(const CommonOptions& c, const SigmaOptions& o, std::ostream& out) {
  const auto d = read_xy_csv(c.input);
  const int n = static_cast<int>(d.x.size());
  const int K = o.K > 0 ? o.K : std::max(3, static_cast<int>(std::ceil(std::cbrt(static_cast<double>(n)) - 1e-9)));
  const auto fit = fit_convex(d.x, d.y, K, o.degree);
  const double s2 = sigma_mle(d.x, d.y, fit);
  json j{{"command", "sigma"}, {"n", n},           {"num_intervals", K}, {"degree", o.degree},
         {"sigma2_hat", s2},   {"sigma_hat", std::sqrt(s2)}};
  OutputDir(c.out_dir).write_json("sigma.json", j);
  out << j.dump() << '\n';
  return kOk;
}

struct VerifyOptions {
  int degree = 1;
  std::vector<int> knots{8, 16, 32, 64, 128};
  int alphas = 200;
  double growth_limit = 1.5;
};

inline int cmd_verify_lipschitz(const CommonOptions& c, const VerifyOptions& o, std::ostream& out) {
  lipschitz::SweepOptions so;
  so.growth_limit = o.growth_limit;
  so.threads = c.threads;
  const auto rep = lipschitz::inf_norm_sweep(o.degree, o.knots, o.alphas, c.seed, so);
  auto file = OutputDir(c.out_dir).open("lipschitz.jsonl");
  for (const auto& r : rep.rows) {
    const json j{{"record", "knots"},
                 {"degree", rep.degree},
                 {"num_intervals", r.num_intervals},
                 {"num_coefficients", r.m},
                 {"alphas_tested", r.alphas_tested},
                 {"sampling", lipschitz::to_string(r.sampling)},
                 {"max_inf_norm", r.max_inf_norm},
                 {"eig_min", r.eig_min},
                 {"eig_max", r.eig_max},
                 {"max_row_sum_deviation", r.max_row_sum_deviation},
                 {"structure_violations", r.structure_violations}};
    file << j.dump() << '\n';
    out << j.dump() << '\n';
  }
  const bool ok = rep.structure_violations == 0 && !rep.growth_flag;
  const json summary{{"record", "summary"},
                     {"degree", rep.degree},
                     {"seed", c.seed},
                     {"structure_violations", rep.structure_violations},
                     {"growth_ratio", rep.growth_ratio},
                     {"growth_limit", o.growth_limit},
                     {"growth_flag", rep.growth_flag},
                     {"passed", ok}};
  file << summary.dump() << '\n';
  out << summary.dump() << '\n';
  return ok ? kOk : kVerificationFailed;
}

struct RatesOptions {
  std::string function = "f3";
  std::string estimator = "fixed_r";
  double r = 2.0;
  std::string mode = "sup";
  std::string metric = "sup";
  std::string abscissa = "auto";
  std::vector<int> n{512, 1024, 2048, 4096, 8192, 16384};
  double sigma = 0.1;
  int reps = 200;
  double x0 = 0.5;
  std::optional<double> L;
  std::optional<double> slope_min, slope_max;
};

inline int cmd_mc_rates(const CommonOptions& c, const RatesOptions& o, std::ostream& out) {
  if (o.reps < sim::kMinReplications)
    throw InputError("--reps must be at least " + std::to_string(sim::kMinReplications));
  if (o.n.size() < 4) throw InputError("--n needs at least 4 sample sizes for a slope");
  sim::EstimatorSpec spec;
  if (o.estimator == "fixed_r") spec.kind = sim::EstimatorKind::fixed_r;
  else if (o.estimator == "adapt_sup") spec.kind = sim::EstimatorKind::adapt_sup;
  else if (o.estimator == "adapt_point") spec.kind = sim::EstimatorKind::adapt_point;
  else throw InputError("unknown estimator '" + o.estimator + "'");
  spec.r = o.r;
  spec.mode = parse_mode(o.mode);
  spec.L = o.L;
  sim::Metric metric = sim::Metric::sup;
  if (o.metric == "pointwise") metric = sim::Metric::pointwise;
  else if (o.metric == "l2") metric = sim::Metric::l2;
  const auto abscissa = o.abscissa == "n"              ? sim::Abscissa::n
                        : o.abscissa == "n_over_log_n" ? sim::Abscissa::n_over_log_n
                        : metric == sim::Metric::sup   ? sim::Abscissa::n_over_log_n
                                                       : sim::Abscissa::n;

  sim::McOptions mo;
  mo.x0 = o.x0;
  mo.threads = c.threads;
  const auto rep = sim::mc_risk(spec, sim::find_function(o.function), o.n, o.sigma, o.reps, metric, c.seed, mo);
  const auto slope = sim::rate_slope(rep, abscissa);

  const OutputDir dir(c.out_dir);
  auto jl = dir.open("rates.jsonl");
  auto csv = dir.open("rates.csv");
  csv << "n,mean,se,failures\n";
  for (const auto& r : rep.rows) {
    const json j{{"record", "risk"}, {"n", r.n}, {"mean", r.risk.mean}, {"se", r.risk.se},
                 {"replications", r.risk.count}, {"failures", r.failures}};
    jl << j.dump() << '\n';
    out << j.dump() << '\n';
    csv << r.n << ',' << r.risk.mean << ',' << r.risk.se << ',' << r.failures << '\n';
  }
  bool ok = true;
  if (o.slope_min && slope.slope < *o.slope_min) ok = false;
  if (o.slope_max && slope.slope > *o.slope_max) ok = false;
  json summary{{"record", "summary"},
               {"estimator", rep.estimator},
               {"function", rep.function},
               {"metric", sim::to_string(rep.metric)},
               {"abscissa", abscissa == sim::Abscissa::n ? "n" : "n_over_log_n"},
               {"sigma", rep.sigma},
               {"replications", rep.replications},
               {"seed", rep.seed},
               {"slope", slope.slope},
               {"slope_se", slope.se},
               {"passed", ok}};
  if (o.slope_min) summary["slope_min"] = *o.slope_min;
  if (o.slope_max) summary["slope_max"] = *o.slope_max;
  jl << summary.dump() << '\n';
  out << summary.dump() << '\n';
  return ok ? kOk : kVerificationFailed;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Convex B-spline regression: fits, adaptive estimators, verification sweeps"};
  app.set_config("--config", "", "TOML/INI file with option values (flags override it)");
  app.require_subcommand(1);

  CommonOptions common;
  auto add_common = [&](CLI::App* sub, bool needs_input) {
    if (needs_input) sub->add_option("-i,--input", common.input, "CSV with header x,y")->required();
    sub->add_option("-o,--out-dir", common.out_dir, "directory for output files")->capture_default_str();
    sub->add_option("--seed", common.seed, "random seed")->capture_default_str();
    sub->add_option("--threads", common.threads, "worker threads (0 = all cores)")->capture_default_str();
  };

  FitOptions fit_opts;
  auto* fit = app.add_subcommand("fit", "convex spline fit for a fixed smoothness r");
  add_common(fit, true);
  fit->add_option("--r", fit_opts.r, "smoothness in [1,4]")->capture_default_str();
  fit->add_option("--L", fit_opts.L, "Holder constant")->capture_default_str();
  fit->add_option("--sigma", fit_opts.sigma, "noise sd or 'auto'")->capture_default_str();
  fit->add_option("--mode", fit_opts.mode, "knot rule")->check(CLI::IsMember({"sup", "point"}))->capture_default_str();
  fit->add_option("--grid-size", fit_opts.grid_size, "evaluation points")->check(CLI::Range(2, 10000000))->capture_default_str();

  AdaptOptions adapt_opts;
  auto add_adapt = [&](CLI::App* sub) {
    sub->add_option("--L", adapt_opts.L, "Holder constant")->capture_default_str();
    sub->add_option("--sigma", adapt_opts.sigma, "noise sd or 'auto'")->capture_default_str();
    sub->add_option("--grid-size", adapt_opts.grid_size, "evaluation points")->check(CLI::Range(2, 10000000))->capture_default_str();
  };
  auto* asup = app.add_subcommand("adapt-sup", "sup-norm adaptive fit over the smoothness grid");
  add_common(asup, true);
  add_adapt(asup);
  asup->add_option("--C1", adapt_opts.C1, "bias constant (default: design-derived)");
  asup->add_option("--C2", adapt_opts.C2, "noise constant (default: design-derived)");
  asup->add_option("--sup-grid-cap", adapt_opts.sup_grid_cap, "max grid index (0 = full grid)")->capture_default_str();

  auto* apt = app.add_subcommand("adapt-point", "pointwise adaptive estimate at x0");
  add_common(apt, true);
  add_adapt(apt);
  apt->add_option("--x0", adapt_opts.x0, "query point in (0,1)")->required();
  apt->add_option("--lambda", adapt_opts.lambda, "indicator threshold, > 0.6745")->capture_default_str();
  apt->add_option("--j-cap", adapt_opts.dyadic_j_cap, "max dyadic level (0 = n/8 bins)")->capture_default_str();

  SigmaOptions sigma_opts;
  auto* sig = app.add_subcommand("sigma", "residual variance estimate");
  add_common(sig, true);
  sig->add_option("--K", sigma_opts.K, "interval count (0 = ceil(n^(1/3)))")->capture_default_str();
  sig->add_option("--degree", sigma_opts.degree, "spline degree")->check(CLI::Range(0, kMaxDegree))->capture_default_str();

  VerifyOptions verify_opts;
  auto* ver = app.add_subcommand("verify-lipschitz", "matrix-structure and max-norm Lipschitz sweep");
  add_common(ver, false);
  ver->add_option("--degree", verify_opts.degree, "spline degree")->check(CLI::Range(0, kMaxDegree))->capture_default_str();
  ver->add_option("--knots", verify_opts.knots, "interval counts")->delimiter(',')->capture_default_str();
  ver->add_option("--alphas", verify_opts.alphas, "sampled active sets per K")->check(CLI::PositiveNumber)->capture_default_str();
  ver->add_option("--growth-limit", verify_opts.growth_limit, "allowed max/min ratio")->capture_default_str();

  RatesOptions rate_opts;
  auto* mc = app.add_subcommand("mc-rates", "Monte Carlo risk and log-log rate slope");
  add_common(mc, false);
  mc->add_option("--function", rate_opts.function, "test function id (f1..f5)")->capture_default_str();
  mc->add_option("--estimator", rate_opts.estimator, "fixed_r | adapt_sup | adapt_point")->capture_default_str();
  mc->add_option("--r", rate_opts.r, "smoothness for fixed_r")->capture_default_str();
  mc->add_option("--mode", rate_opts.mode, "knot rule for fixed_r")->check(CLI::IsMember({"sup", "point"}))->capture_default_str();
  mc->add_option("--metric", rate_opts.metric, "sup | pointwise | l2")->check(CLI::IsMember({"sup", "pointwise", "l2"}))->capture_default_str();
  mc->add_option("--abscissa", rate_opts.abscissa, "auto | n | n_over_log_n")->check(CLI::IsMember({"auto", "n", "n_over_log_n"}))->capture_default_str();
  mc->add_option("--n", rate_opts.n, "sample sizes")->delimiter(',')->capture_default_str();
  mc->add_option("--sigma", rate_opts.sigma, "noise sd")->capture_default_str();
  mc->add_option("--reps", rate_opts.reps, "replications per n (>= 100)")->capture_default_str();
  mc->add_option("--x0", rate_opts.x0, "pointwise metric location")->capture_default_str();
  mc->add_option("--L", rate_opts.L, "Holder constant (default: the function's)");
  mc->add_option("--slope-min", rate_opts.slope_min, "acceptance window lower end");
  mc->add_option("--slope-max", rate_opts.slope_max, "acceptance window upper end");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kBadInput;
  }

  try {
    if (fit->parsed()) return cmd_fit(common, fit_opts, out);
    if (asup->parsed()) return cmd_adapt_sup(common, adapt_opts, out);
    if (apt->parsed()) return cmd_adapt_point(common, adapt_opts, out);
    if (sig->parsed()) return cmd_sigma(common, sigma_opts, out);
    if (ver->parsed()) return cmd_verify_lipschitz(common, verify_opts, out);
    if (mc->parsed()) return cmd_mc_rates(common, rate_opts, out);
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kBadInput;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return kBadInput;
  } catch (const BoundaryError& e) {
    err << "boundary error: " << e.what() << '\n';
    return kBoundary;
  } catch (const NotCertified& e) {
    err << "solver error: " << e.what() << '\n';
    return kSolverFailure;
  } catch (const SingularSystem& e) {
    err << "solver error: " << e.what() << '\n';
    return kSolverFailure;
  }
  return kBadInput;
}

}  // namespace cvxspline::cli
