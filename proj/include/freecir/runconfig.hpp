#pragma once

// Experiment plumbing: JSON run configuration with field-level validation and
// a canonical normalized form, plus the on-disk result bundle (trajectory CSV
// and summary JSON, both written atomically via temp-file + rename).

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "freecir/diagnostics.hpp"
#include "freecir/equations.hpp"
#include "freecir/simulate.hpp"

namespace freecir {

using json = nlohmann::ordered_json;

struct RunConfig {
  EquationSpec equation;
  SchemeSpec scheme;
  Eigen::Index dim = 1;  // total N; equation.dim_multiplicity is derived
  int runs = 1;
  std::uint64_t base_seed = 0;
  std::vector<double> checkpoints;
  std::string output_dir = "out";
  bool seed_overridden = false;  // FREECIR_SEED replaced the configured seed
};

namespace detail {

inline const json& require_field(const json& j, const std::string& scope,
                                 const char* key) {
  if (!j.is_object())
    throw ConfigError(scope.empty() ? std::string(key) : scope,
                      "expected an object");
  auto it = j.find(key);
  if (it == j.end())
    throw ConfigError(scope.empty() ? std::string(key) : scope + "." + key,
                      "missing field");
  return *it;
}

inline std::string joined(const std::string& scope, const char* key) {
  return scope.empty() ? std::string(key) : scope + "." + key;
}

inline double number_field(const json& j, const std::string& scope, const char* key) {
  const json& v = require_field(j, scope, key);
  if (!v.is_number()) throw ConfigError(joined(scope, key), "must be a number");
  return v.get<double>();
}

inline std::string string_field(const json& j, const std::string& scope,
                                const char* key) {
  const json& v = require_field(j, scope, key);
  if (!v.is_string()) throw ConfigError(joined(scope, key), "must be a string");
  return v.get<std::string>();
}

inline long integer_field(const json& j, const std::string& scope, const char* key) {
  const json& v = require_field(j, scope, key);
  if (!v.is_number_integer())
    throw ConfigError(joined(scope, key), "must be an integer");
  return v.get<long>();
}

inline std::vector<double> number_array_field(const json& j, const std::string& scope,
                                              const char* key) {
  const json& v = require_field(j, scope, key);
  if (!v.is_array()) throw ConfigError(joined(scope, key), "must be an array");
  std::vector<double> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number())
      throw ConfigError(joined(scope, key) + "[" + std::to_string(i) + "]",
                        "must be a number");
    out.push_back(v[i].get<double>());
  }
  return out;
}

inline std::string format_17g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline RunConfig run_config_from_json(const json& root) {
  RunConfig cfg;
  const json& eq = detail::require_field(root, "", "equation");

  const std::string kind_s = detail::string_field(eq, "equation", "kind");
  try {
    cfg.equation.kind = equation_kind_from_string(kind_s);
  } catch (const Error& e) {
    throw ConfigError("equation.kind", e.what());
  }
  try {
    cfg.equation.a_fn = SpectralFunction::parse(detail::string_field(eq, "equation", "a"));
  } catch (const Error& e) {
    throw ConfigError("equation.a", e.what());
  }
  try {
    cfg.equation.sigma_fn =
        SpectralFunction::parse(detail::string_field(eq, "equation", "sigma"));
  } catch (const Error& e) {
    throw ConfigError("equation.sigma", e.what());
  }
  cfg.equation.b = detail::number_field(eq, "equation", "b");
  if (!(cfg.equation.b > 0.0)) throw ConfigError("equation.b", "must be > 0");
  cfg.equation.x0_spectrum = detail::number_array_field(eq, "equation", "x0_spectrum");
  if (cfg.equation.x0_spectrum.empty())
    throw ConfigError("equation.x0_spectrum", "must be non-empty");
  for (std::size_t i = 0; i < cfg.equation.x0_spectrum.size(); ++i)
    if (!(cfg.equation.x0_spectrum[i] > 0.0))
      throw ConfigError("equation.x0_spectrum[" + std::to_string(i) + "]",
                        "must be > 0");

  const json& sc = detail::require_field(root, "", "scheme");
  try {
    cfg.scheme.scheme = scheme_from_string(detail::string_field(sc, "scheme", "scheme"));
  } catch (const Error& e) {
    throw ConfigError("scheme.scheme", e.what());
  }
  cfg.scheme.dt = detail::number_field(sc, "scheme", "dt");
  if (!(cfg.scheme.dt > 0.0)) throw ConfigError("scheme.dt", "must be > 0");
  cfg.scheme.t_end = detail::number_field(sc, "scheme", "t_end");
  if (!(cfg.scheme.t_end > 0.0)) throw ConfigError("scheme.t_end", "must be > 0");
  if (cfg.scheme.dt > cfg.scheme.t_end)
    throw ConfigError("scheme.dt", "must not exceed t_end");

  const long dim = detail::integer_field(root, "", "dim");
  if (dim < 1 || dim > max_dim)
    throw ConfigError("dim", "must be in [1, " + std::to_string(max_dim) + "]");
  cfg.dim = static_cast<Eigen::Index>(dim);
  const std::size_t levels = cfg.equation.x0_spectrum.size();
  if (kind_is_scalar(cfg.equation.kind)) {
    if (dim != 1) throw ConfigError("dim", "scalar kinds require dim = 1");
    cfg.equation.dim_multiplicity = 1;
  } else {
    if (static_cast<std::size_t>(dim) % levels != 0)
      throw ConfigError("dim", "must be a multiple of the x0_spectrum length " +
                                   std::to_string(levels));
    cfg.equation.dim_multiplicity = static_cast<int>(static_cast<std::size_t>(dim) / levels);
  }

  const long runs = detail::integer_field(root, "", "runs");
  if (runs < 1) throw ConfigError("runs", "must be >= 1");
  cfg.runs = static_cast<int>(runs);

  {
    const json& v = detail::require_field(root, "", "base_seed");
    if (!v.is_number_integer())
      throw ConfigError("base_seed", "must be a nonnegative integer");
    if (!v.is_number_unsigned() && v.get<long long>() < 0)
      throw ConfigError("base_seed", "must be a nonnegative integer");
    cfg.base_seed = v.get<std::uint64_t>();
  }

  cfg.checkpoints = detail::number_array_field(root, "", "checkpoints");
  for (std::size_t i = 0; i < cfg.checkpoints.size(); ++i) {
    const double t = cfg.checkpoints[i];
    const std::string field = "checkpoints[" + std::to_string(i) + "]";
    if (!(t >= 0.0)) throw ConfigError(field, "must be >= 0");
    if (t > cfg.scheme.t_end + 1e-12) throw ConfigError(field, "exceeds t_end");
    try {
      detail::grid_index(t, cfg.scheme.dt, cfg.scheme.steps());
    } catch (const Error& e) {
      throw ConfigError(field, e.what());
    }
  }

  cfg.output_dir = detail::string_field(root, "", "output_dir");
  if (cfg.output_dir.empty()) throw ConfigError("output_dir", "must be non-empty");

  // Full invariant sweep (positivity of a, sigma on the spectrum, dimension
  // caps) with the strict front-end rules.
  try {
    cfg.equation.validate(/*strict_positive_sigma=*/true);
    cfg.scheme.validate();
  } catch (const Error& e) {
    throw ConfigError("equation", e.what());
  }
  return cfg;
}

/// Reads FREECIR_SEED; when set it replaces the configured base seed.
inline void apply_seed_env(RunConfig& cfg) {
  const char* env = std::getenv("FREECIR_SEED");
  if (env == nullptr || *env == '\0') return;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (end == nullptr || *end != '\0')
    throw ConfigError("FREECIR_SEED", "must be a nonnegative integer");
  cfg.base_seed = static_cast<std::uint64_t>(v);
  cfg.seed_overridden = true;
}

inline RunConfig load_run_config(const std::filesystem::path& path,
                                 bool apply_env = true) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), "cannot open config file");
  json root;
  try {
    root = json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string(), std::string("invalid JSON: ") + e.what());
  }
  RunConfig cfg = run_config_from_json(root);
  if (apply_env) apply_seed_env(cfg);
  return cfg;
}

/// Canonical form: fixed key order, all continuous quantities as doubles.
/// Emit -> parse -> emit is byte-stable.
inline json normalized_config_json(const RunConfig& cfg) {
  json eq;
  eq["kind"] = to_string(cfg.equation.kind);
  eq["a"] = cfg.equation.a_fn.to_string();
  eq["sigma"] = cfg.equation.sigma_fn.to_string();
  eq["b"] = cfg.equation.b;
  eq["x0_spectrum"] = cfg.equation.x0_spectrum;
  json sc;
  sc["scheme"] = to_string(cfg.scheme.scheme);
  sc["dt"] = cfg.scheme.dt;
  sc["t_end"] = cfg.scheme.t_end;
  json root;
  root["equation"] = std::move(eq);
  root["scheme"] = std::move(sc);
  root["dim"] = static_cast<long>(cfg.dim);
  root["runs"] = cfg.runs;
  root["base_seed"] = cfg.base_seed;
  root["checkpoints"] = cfg.checkpoints;
  root["output_dir"] = cfg.output_dir;
  return root;
}

inline std::string dump_config(const RunConfig& cfg) {
  return normalized_config_json(cfg).dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Output files

inline void write_file_atomic(const std::filesystem::path& path,
                              const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    os.flush();
    if (!os) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

/// One line per (run, grid point), runs concatenated in index order.
/// 17 significant digits: parsing the text recovers the exact double.
inline std::string trajectory_csv(const std::vector<TrajectoryStats>& stats) {
  std::string out = "run,t,trace,min_eig,max_eig,norm1,norm2,breaches\n";
  char buf[256];
  for (const TrajectoryStats& ts : stats)
    for (const StatRow& row : ts.rows) {
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%ld\n",
                    ts.run, row.t, row.trace, row.min_eig, row.max_eig, row.norm1,
                    row.norm2, row.breaches);
      out += buf;
    }
  return out;
}

struct ResultBundle {
  std::filesystem::path trajectory_csv;
  std::filesystem::path summary_json;
};

namespace detail {

/// The per-row series whose ensemble mean obeys dy/dt = phi(a) - b y:
/// phi(X) for the CIR kinds, phi(V^2) for the square-root kinds.
inline TraceSeries ode_series_for(EquationKind k) {
  return kind_needs_inverse(k) ? TraceSeries::SECOND_MOMENT : TraceSeries::TRACE;
}

inline double ode_alpha_for(const RunConfig& cfg) {
  // phi(a) in the block layout equals the plain mean over spectrum levels.
  double acc = 0.0;
  for (double v : cfg.equation.x0_spectrum) acc += cfg.equation.a_fn.eval(v);
  return acc / static_cast<double>(cfg.equation.x0_spectrum.size());
}

inline double ode_y0_for(const RunConfig& cfg) {
  // phi(X0) for the CIR kinds; phi(V0^2) when rows track the square.
  const bool squared = ode_series_for(cfg.equation.kind) == TraceSeries::SECOND_MOMENT;
  double acc = 0.0;
  for (double v : cfg.equation.x0_spectrum) acc += squared ? v * v : v;
  return acc / static_cast<double>(cfg.equation.x0_spectrum.size());
}

}  // namespace detail

/// Feller report over the coefficient diagonals (block layout has equal
/// multiplicities, so the distinct spectrum levels carry the same phi).
inline FellerReport feller_for(const RunConfig& cfg) {
  const std::size_t levels = cfg.equation.x0_spectrum.size();
  Eigen::VectorXd a_diag(static_cast<Eigen::Index>(levels));
  Eigen::VectorXd s_diag(static_cast<Eigen::Index>(levels));
  for (std::size_t i = 0; i < levels; ++i) {
    a_diag(static_cast<Eigen::Index>(i)) =
        cfg.equation.a_fn.eval(cfg.equation.x0_spectrum[i]);
    s_diag(static_cast<Eigen::Index>(i)) =
        cfg.equation.sigma_fn.eval(cfg.equation.x0_spectrum[i]);
  }
  return feller_check(a_diag, s_diag);
}

inline json summary_json_for(const RunConfig& cfg,
                             const std::vector<TrajectoryStats>& stats) {
  json out;
  out["config"] = normalized_config_json(cfg);
  out["seed_overridden"] = cfg.seed_overridden;

  {
    const FellerReport fr = feller_for(cfg);
    json fj;
    fj["min_eig_2a_minus_sigma2"] = fr.min_eig_2a_minus_sigma2;
    fj["satisfied"] = fr.satisfied;
    fj["margin"] = fr.margin;
    fj["jensen_margin"] = fr.jensen_margin;
    fj["warning"] = !fr.satisfied;
    out["feller"] = std::move(fj);
  }

  const long steps = cfg.scheme.steps();
  long failed = 0;
  json failures = json::array();
  long total_breaches = 0;
  for (const TrajectoryStats& ts : stats) {
    if (ts.failed) {
      ++failed;
      json f;
      f["run"] = ts.run;
      f["time"] = ts.failure_time;
      f["what"] = ts.failure;
      failures.push_back(std::move(f));
    }
    if (!ts.rows.empty()) total_breaches += ts.rows.back().breaches;
  }
  {
    json rj;
    rj["total"] = cfg.runs;
    rj["failed"] = failed;
    rj["failures"] = std::move(failures);
    out["runs"] = std::move(rj);
  }
  out["breaches_total"] = total_breaches;

  // Per-checkpoint ensemble statistics over completed runs.
  json cps = json::array();
  for (double t : cfg.checkpoints) {
    const std::size_t k =
        static_cast<std::size_t>(detail::grid_index(t, cfg.scheme.dt, steps));
    std::vector<double> trace, min_eig, max_eig, norm1, norm2;
    long breaches = 0;
    for (const TrajectoryStats& ts : stats) {
      if (ts.rows.size() <= k) continue;
      const StatRow& row = ts.rows[k];
      trace.push_back(row.trace);
      min_eig.push_back(row.min_eig);
      max_eig.push_back(row.max_eig);
      norm1.push_back(row.norm1);
      norm2.push_back(row.norm2);
      breaches += row.breaches;
    }
    json cj;
    cj["t"] = t;
    cj["runs_reporting"] = static_cast<long>(trace.size());
    if (!trace.empty()) {
      const MeanSE mt = mean_se(trace);
      cj["trace_mean"] = mt.mean;
      cj["trace_se"] = mt.se;
      cj["min_eig_mean"] = mean_se(min_eig).mean;
      cj["min_eig_min"] = *std::min_element(min_eig.begin(), min_eig.end());
      cj["max_eig_mean"] = mean_se(max_eig).mean;
      cj["max_eig_max"] = *std::max_element(max_eig.begin(), max_eig.end());
      cj["norm1_mean"] = mean_se(norm1).mean;
      cj["norm2_mean"] = mean_se(norm2).mean;
      cj["breaches_total"] = breaches;
    }
    cps.push_back(std::move(cj));
  }
  out["checkpoints"] = std::move(cps);

  // Trace-ODE deviations at the checkpoints; skipped (null) when any run
  // failed, since the ensemble grid is then incomplete.
  if (failed == 0 && !cfg.checkpoints.empty()) {
    const TraceSeries series = detail::ode_series_for(cfg.equation.kind);
    const double alpha = detail::ode_alpha_for(cfg);
    const double y0 = detail::ode_y0_for(cfg);
    std::vector<double> grid;
    grid.reserve(static_cast<std::size_t>(steps) + 1);
    for (long k = 0; k <= steps; ++k)
      grid.push_back(static_cast<double>(k) * cfg.scheme.dt);
    const std::vector<double> ref =
        trace_ode_reference(alpha, cfg.equation.b, y0, grid);
    const TraceDeviationReport dev = trace_deviation(stats, ref, series);
    json tj;
    tj["series"] =
        series == TraceSeries::TRACE ? "trace" : "second_moment";
    tj["alpha"] = alpha;
    tj["b"] = cfg.equation.b;
    tj["y0"] = y0;
    json rows = json::array();
    for (double t : cfg.checkpoints) {
      const std::size_t k =
          static_cast<std::size_t>(detail::grid_index(t, cfg.scheme.dt, steps));
      json row;
      row["t"] = t;
      row["reference"] = ref[k];
      row["abs_deviation"] = dev.abs_deviation[k];
      row["std_err"] = dev.std_err[k];
      rows.push_back(std::move(row));
    }
    tj["deviation"] = std::move(rows);
    out["trace_ode"] = std::move(tj);
  } else {
    out["trace_ode"] = nullptr;
  }
  return out;
}

/// Full simulate-to-disk pipeline; returns the process exit code:
/// 0 success, 3 when every run aborted. (Config errors throw ConfigError
/// before any sampling; the front end maps them to exit 2.)
inline int run_simulate_to_dir(const RunConfig& cfg,
                               const std::filesystem::path& out_dir, int workers = 1,
                               std::vector<TrajectoryStats>* stats_out = nullptr) {
  SimulateOptions opts;
  opts.workers = workers;
  const std::vector<TrajectoryStats> stats =
      simulate(cfg.equation, cfg.scheme, SeedPolicy{cfg.base_seed, 0}, cfg.runs, opts);

  std::filesystem::create_directories(out_dir);
  ResultBundle bundle;
  bundle.trajectory_csv = out_dir / "trajectory.csv";
  bundle.summary_json = out_dir / "summary.json";
  write_file_atomic(bundle.trajectory_csv, trajectory_csv(stats));
  write_file_atomic(bundle.summary_json, summary_json_for(cfg, stats).dump(2) + "\n");

  long failed = 0;
  for (const TrajectoryStats& ts : stats)
    if (ts.failed) ++failed;
  if (stats_out != nullptr) *stats_out = stats;
  return failed == static_cast<long>(stats.size()) ? 3 : 0;
}

}  // namespace freecir
