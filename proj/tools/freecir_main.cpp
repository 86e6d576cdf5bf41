// Command-line front end: `simulate` runs a configured matrix-model ensemble
// to CSV + JSON, `verify` runs the statistical check suites, `derive` drives
// the symbolic differential rewriter.
//
// Exit codes: 0 success; 2 configuration, validation, or parse error;
// 3 simulation abort (every run failed); 4 failed verification or comparison.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "freecir/diagnostics.hpp"
#include "freecir/ito.hpp"
#include "freecir/runconfig.hpp"

namespace {

using freecir::json;

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::string config_path;
  std::string out_dir;  // empty: use the config's output_dir
  int workers = 1;
};

int cmd_simulate(const SimulateArgs& args) {
  freecir::RunConfig cfg = freecir::load_run_config(args.config_path);
  const std::filesystem::path out =
      args.out_dir.empty() ? std::filesystem::path(cfg.output_dir)
                           : std::filesystem::path(args.out_dir);

  const freecir::FellerReport feller = freecir::feller_for(cfg);
  if (!feller.satisfied)
    std::cerr << "warning: Feller condition violated (min eig(2a - sigma^2) = "
              << feller.margin << "); simulating the contrast regime anyway\n";

  std::vector<freecir::TrajectoryStats> stats;
  const int code = freecir::run_simulate_to_dir(cfg, out, args.workers, &stats);
  long failed = 0;
  for (const auto& ts : stats)
    if (ts.failed) ++failed;
  std::cout << "wrote " << (out / "trajectory.csv").string() << " and "
            << (out / "summary.json").string() << " (runs: " << cfg.runs
            << ", failed: " << failed << ")\n";
  if (code == 3) std::cerr << "error: all runs aborted\n";
  return code;
}

// ---------------------------------------------------------------------------
// verify

struct VerifyArgs {
  std::string suite;
  int dim = 0;   // 0: suite default
  int runs = 0;  // 0: suite default
  std::uint64_t seed = 1234;
  std::string out_dir = ".";
  int workers = 1;
  bool mismatch = false;  // deliberately break the isometry preconditions
};

struct Check {
  std::string name;
  double estimate = 0.0;
  double target = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

int finish_suite(const VerifyArgs& args, int dim, int runs,
                 const std::vector<Check>& checks) {
  bool all_pass = true;
  json arr = json::array();
  for (const Check& c : checks) {
    all_pass = all_pass && c.pass;
    std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << c.name
              << ": estimate = " << c.estimate << ", target = " << c.target
              << ", tolerance = " << c.tolerance << "\n";
    json cj;
    cj["name"] = c.name;
    cj["estimate"] = c.estimate;
    cj["target"] = c.target;
    cj["tolerance"] = c.tolerance;
    cj["pass"] = c.pass;
    arr.push_back(std::move(cj));
  }
  json report;
  report["suite"] = args.suite;
  report["dim"] = dim;
  report["runs"] = runs;
  report["seed"] = args.seed;
  report["checks"] = std::move(arr);
  report["pass"] = all_pass;
  std::filesystem::create_directories(args.out_dir);
  const std::filesystem::path path =
      std::filesystem::path(args.out_dir) / ("verify_" + args.suite + ".json");
  freecir::write_file_atomic(path, report.dump(2) + "\n");
  std::cout << "suite " << args.suite << ": " << (all_pass ? "PASS" : "FAIL")
            << " (report: " << path.string() << ")\n";
  return all_pass ? 0 : 4;
}

int suite_semicircle(const VerifyArgs& args) {
  const int dim = args.dim > 0 ? args.dim : 256;
  const int runs = args.runs > 0 ? args.runs : 200;
  freecir::SeedPolicy pol{args.seed, 0};
  std::vector<freecir::FreeBrownianPath> paths;
  paths.reserve(static_cast<std::size_t>(runs));
  for (int r = 0; r < runs; ++r)
    paths.push_back(freecir::sample_free_path(pol, static_cast<std::uint64_t>(r),
                                              {0.0, 1.0}, dim));
  const auto moments = freecir::semicircle_moments(paths, 1.0, 6);
  std::vector<Check> checks;
  for (const auto& m : moments) {
    Check c;
    c.name = "phi(W(1)^" + std::to_string(m.order) + ")";
    c.estimate = m.estimate;
    c.target = m.target;
    c.tolerance = 4.0 * m.std_err + 1e-9;
    c.pass = std::abs(m.estimate - m.target) <= c.tolerance;
    checks.push_back(c);
  }
  return finish_suite(args, dim, runs, checks);
}

int suite_freeness(const VerifyArgs& args) {
  const int dim = args.dim > 0 ? args.dim : 128;
  const int runs = args.runs > 0 ? args.runs : 200;
  if (dim % 4 != 0)
    throw freecir::ConfigError("--dim", "freeness suite requires a multiple of 4");
  const freecir::SelfAdjointOperator a =
      freecir::make_operator_from_spectrum({-1.0, -0.5, 0.5, 1.0}, dim / 4);
  freecir::SeedPolicy pol{args.seed, 0};
  std::vector<freecir::SelfAdjointOperator> ws;
  ws.reserve(static_cast<std::size_t>(runs));
  for (int r = 0; r < runs; ++r)
    ws.push_back(freecir::sample_free_increment(
        1.0, dim, pol.stream(static_cast<std::uint64_t>(r), 0)));
  // Deterministic finite-dimension bias of the alternating moments decays
  // like 1/N^2; the floor keeps the criterion honest without hiding it.
  const double floor = 16.0 / (static_cast<double>(dim) * static_cast<double>(dim));
  std::vector<Check> checks;
  for (int m = 1; m <= 2; ++m)
    for (int n = 1; n <= 2; ++n) {
      const freecir::FreenessReport rep = freecir::freeness_test(a, ws, m, n);
      Check c2;
      c2.name = "alt2_a" + std::to_string(m) + "_w" + std::to_string(n);
      c2.estimate = rep.len2_mean;
      c2.target = 0.0;
      c2.tolerance = 4.0 * rep.len2_se + floor;
      c2.pass = std::abs(rep.len2_mean) <= c2.tolerance;
      checks.push_back(c2);
      Check c4;
      c4.name = "alt4_a" + std::to_string(m) + "_w" + std::to_string(n);
      c4.estimate = rep.len4_mean;
      c4.target = 0.0;
      c4.tolerance = 4.0 * rep.len4_se + floor;
      c4.pass = std::abs(rep.len4_mean) <= c4.tolerance;
      checks.push_back(c4);
    }
  return finish_suite(args, dim, runs, checks);
}

int suite_isometry(const VerifyArgs& args) {
  const int dim = args.dim > 0 ? args.dim : 64;
  const int runs = args.runs > 0 ? args.runs : 64;
  if (dim % 2 != 0)
    throw freecir::ConfigError("--dim", "isometry suite requires an even dimension");
  freecir::EquationSpec spec_v;
  spec_v.kind = freecir::EquationKind::SQRT_V_FREE;
  spec_v.a_fn = freecir::SpectralFunction::constant(1.0);
  spec_v.sigma_fn = freecir::SpectralFunction::constant(1.0);
  spec_v.b = 1.0;
  spec_v.x0_spectrum = {0.8, 1.2};
  spec_v.dim_multiplicity = dim / 2;
  freecir::EquationSpec spec_vb = spec_v;
  spec_vb.kind = freecir::EquationKind::SQRT_VBAR_CLASSICAL;
  if (args.mismatch)
    spec_vb.sigma_fn = freecir::SpectralFunction::constant(1.1);
  const freecir::SchemeSpec scheme{freecir::Scheme::EULER, 2e-3, 1.0};
  const std::vector<double> cps = {0.25, 0.5, 1.0};
  const freecir::IsometryReport rep =
      freecir::isometry_check(spec_v, spec_vb, scheme, freecir::SeedPolicy{args.seed, 0},
                              runs, cps, args.workers);
  std::vector<Check> checks;
  auto push = [&](const char* label, std::size_t i, double gap, double se) {
    Check c;
    std::ostringstream name;
    name << label << "_t" << cps[i];
    c.name = name.str();
    c.estimate = gap;
    c.target = 0.0;
    c.tolerance = std::max(0.05, 4.0 * se);
    c.pass = gap <= c.tolerance;
    checks.push_back(c);
  };
  for (std::size_t i = 0; i < cps.size(); ++i) {
    push("second_moment", i, rep.abs_gap[i], rep.std_err[i]);
    push("proj_x0", i, rep.gap_p0[i], rep.se_p0[i]);
    push("proj_free", i, rep.gap_pfree[i], rep.se_pfree[i]);
  }
  return finish_suite(args, dim, runs, checks);
}

int suite_trace_ode(const VerifyArgs& args) {
  const int dim = args.dim > 0 ? args.dim : 64;
  const int runs = args.runs > 0 ? args.runs : 50;
  freecir::EquationSpec spec;
  spec.kind = freecir::EquationKind::FREE_CIR_NONCLASSICAL;
  spec.a_fn = freecir::SpectralFunction::constant(1.0);
  spec.sigma_fn = freecir::SpectralFunction::constant(1.0);
  spec.b = 1.0;
  spec.x0_spectrum = {1.0};
  spec.dim_multiplicity = dim;
  const freecir::SchemeSpec scheme{freecir::Scheme::EULER, 1e-3, 1.0};
  freecir::SimulateOptions opts;
  opts.workers = args.workers;
  const auto stats =
      freecir::simulate(spec, scheme, freecir::SeedPolicy{args.seed, 0}, runs, opts);
  std::vector<double> grid;
  grid.reserve(static_cast<std::size_t>(scheme.steps()) + 1);
  for (long k = 0; k <= scheme.steps(); ++k)
    grid.push_back(static_cast<double>(k) * scheme.dt);
  // Stationary configuration: alpha/b = 1 = y0, so the reference is flat.
  const auto ref = freecir::trace_ode_reference(1.0, 1.0, 1.0, grid);
  const auto dev = freecir::trace_deviation(stats, ref);
  std::vector<Check> checks;
  for (double t : {0.25, 0.5, 1.0}) {
    const auto k = static_cast<std::size_t>(
        freecir::detail::grid_index(t, scheme.dt, scheme.steps()));
    Check c;
    std::ostringstream name;
    name << "trace_dev_t" << t;
    c.name = name.str();
    c.estimate = dev.abs_deviation[k];
    c.target = 0.0;
    c.tolerance = std::max(0.02, 4.0 * dev.std_err[k]);
    c.pass = c.estimate <= c.tolerance;
    checks.push_back(c);
  }
  return finish_suite(args, dim, runs, checks);
}

int suite_feller(const VerifyArgs& args) {
  std::vector<Check> checks;
  {
    Eigen::VectorXd a(2), s(2);
    a << 1.0, 1.0;
    s << 1.0, 1.0;
    const auto rep = freecir::feller_check(a, s);
    checks.push_back({"identity_margin", rep.margin, 1.0, 1e-12,
                      std::abs(rep.margin - 1.0) <= 1e-12 && rep.satisfied});
  }
  {
    // boundary a = sigma^2/2 with scalar sigma: exact zero margin
    Eigen::VectorXd a(2), s(2);
    s << 2.0, 2.0;
    a << s(0) * s(0) / 2.0, s(1) * s(1) / 2.0;
    const auto rep = freecir::feller_check(a, s);
    checks.push_back(
        {"boundary_margin", rep.margin, 0.0, 0.0, rep.margin == 0.0 && rep.satisfied});
  }
  {
    Eigen::VectorXd a(2), s(2);
    a << 1.0, 2.0;
    s << 2.0, 1.0;
    const auto rep = freecir::feller_check(a, s);
    checks.push_back({"violated_margin", rep.margin, -2.0, 1e-12,
                      std::abs(rep.margin + 2.0) <= 1e-12 && !rep.satisfied});
  }
  return finish_suite(args, 2, 0, checks);
}

int cmd_verify(VerifyArgs args) {
  if (const char* env = std::getenv("FREECIR_SEED"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == nullptr || *end != '\0')
      throw freecir::ConfigError("FREECIR_SEED", "must be a nonnegative integer");
    args.seed = static_cast<std::uint64_t>(v);
  }
  if (args.suite == "semicircle") return suite_semicircle(args);
  if (args.suite == "freeness") return suite_freeness(args);
  if (args.suite == "isometry") return suite_isometry(args);
  if (args.suite == "trace-ode") return suite_trace_ode(args);
  if (args.suite == "feller") return suite_feller(args);
  throw freecir::ConfigError("--suite", "unknown suite '" + args.suite + "'");
}

// ---------------------------------------------------------------------------
// derive

struct DeriveArgs {
  std::string expr, file;
  std::string expr2, file2;
  std::string mode;
  std::string symbol = "X";
  std::vector<std::string> commute, central, inverse;
};

std::string read_expression(const std::string& inline_text, const std::string& path,
                            const char* which) {
  if (!inline_text.empty() && !path.empty())
    throw freecir::ConfigError(which, "give either an inline expression or a file");
  if (!inline_text.empty()) return inline_text;
  if (path.empty())
    throw freecir::ConfigError(which, "an expression is required");
  std::ifstream in(path);
  if (!in) throw freecir::ConfigError(path, "cannot open expression file");
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
  return text;
}

std::pair<std::string, std::string> split_pair(const std::string& spec,
                                               const char* flag) {
  const auto comma = spec.find(',');
  if (comma == std::string::npos || comma == 0 || comma + 1 == spec.size())
    throw freecir::ConfigError(flag, "expected two comma-separated symbols, got '" +
                                         spec + "'");
  return {spec.substr(0, comma), spec.substr(comma + 1)};
}

int cmd_derive(const DeriveArgs& args) {
  freecir::ito::RewriteContext ctx;
  for (const std::string& s : args.central) ctx.declare_central(s);
  for (const std::string& s : args.inverse) {
    auto [x, y] = split_pair(s, "--inverse");
    ctx.declare_inverse(x, y);
  }
  for (const std::string& s : args.commute) {
    auto [x, y] = split_pair(s, "--commute");
    ctx.declare_commuting(x, y);
  }

  const std::string text = read_expression(args.expr, args.file, "--expr/--file");
  const freecir::ito::DifferentialForm form = freecir::ito::parse_expression(text, ctx);

  if (args.mode == "reduce") {
    std::cout << freecir::ito::to_string(freecir::ito::normalize(form, ctx)) << "\n";
    return 0;
  }
  if (args.mode == "d-square") {
    const auto d = freecir::ito::ito_differential(2, args.symbol, form, ctx);
    std::cout << freecir::ito::to_string(d) << "\n";
    return 0;
  }
  if (args.mode == "compare") {
    const std::string text2 =
        read_expression(args.expr2, args.file2, "--expr2/--file2");
    const freecir::ito::DifferentialForm rhs =
        freecir::ito::parse_expression(text2, ctx);
    const auto eq = freecir::ito::forms_equal(form, rhs, ctx);
    if (eq.equal) {
      std::cout << "forms equal\n";
      return 0;
    }
    std::cout << "difference: " << freecir::ito::to_string(eq.difference) << "\n";
    return 4;
  }
  throw freecir::ConfigError("--mode", "unknown mode '" + args.mode + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Matrix-model laboratory for free square-root diffusions"};
  app.require_subcommand(1);

  SimulateArgs sim_args;
  CLI::App* sim = app.add_subcommand(
      "simulate", "Run a configured ensemble; write trajectory.csv + summary.json");
  sim->add_option("--config", sim_args.config_path, "JSON run configuration")
      ->required();
  sim->add_option("--out", sim_args.out_dir,
                  "output directory (default: the config's output_dir)");
  sim->add_option("--workers", sim_args.workers,
                  "worker threads for the run loop (output is identical for any "
                  "worker count)")
      ->check(CLI::PositiveNumber);

  VerifyArgs ver_args;
  CLI::App* ver =
      app.add_subcommand("verify", "Run a statistical verification suite");
  ver->add_option("--suite", ver_args.suite, "one of: semicircle, freeness, isometry, trace-ode, feller")
      ->required()
      ->check(CLI::IsMember({"semicircle", "freeness", "isometry", "trace-ode", "feller"}));
  ver->add_option("--dim", ver_args.dim, "matrix dimension (suite default if omitted)")
      ->check(CLI::PositiveNumber);
  ver->add_option("--runs", ver_args.runs, "sample count (suite default if omitted)")
      ->check(CLI::PositiveNumber);
  ver->add_option("--seed", ver_args.seed, "base seed (FREECIR_SEED overrides)");
  ver->add_option("--out", ver_args.out_dir, "directory for verify_<suite>.json");
  ver->add_option("--workers", ver_args.workers, "worker threads for sampling loops")
      ->check(CLI::PositiveNumber);
  ver->add_flag("--mismatch", ver_args.mismatch,
                "isometry suite only: deliberately mismatch sigma between the two "
                "processes to demonstrate the precondition guard");

  DeriveArgs der_args;
  CLI::App* der =
      app.add_subcommand("derive", "Symbolic differential engine (reduce, d-square, compare)");
  der->add_option("--expr", der_args.expr, "inline expression");
  der->add_option("--file", der_args.file, "file containing the expression");
  der->add_option("--mode", der_args.mode, "reduce | d-square | compare")
      ->required()
      ->check(CLI::IsMember({"reduce", "d-square", "compare"}));
  der->add_option("--expr2", der_args.expr2, "second inline expression (compare)");
  der->add_option("--file2", der_args.file2, "file with the second expression (compare)");
  der->add_option("--symbol", der_args.symbol, "process symbol for d-square (default X)");
  der->add_option("--commute", der_args.commute,
                  "declare a commuting pair, e.g. --commute a,U (repeatable)");
  der->add_option("--central", der_args.central,
                  "declare a central (scalar) symbol (repeatable)");
  der->add_option("--inverse", der_args.inverse,
                  "declare an inverse pair, e.g. --inverse V,Vinv (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (sim->parsed()) return cmd_simulate(sim_args);
    if (ver->parsed()) return cmd_verify(ver_args);
    if (der->parsed()) return cmd_derive(der_args);
    std::cerr << "error: no subcommand\n";
    return 2;
  } catch (const freecir::SyntaxError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const freecir::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
