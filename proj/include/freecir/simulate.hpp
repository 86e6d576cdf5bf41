#pragma once

// Monte Carlo driver: runs an equation over a uniform grid and records
// per-grid-point statistics. Runs are independent streams under SeedPolicy
// (counter-based), so the ensemble is reproducible bit-for-bit regardless of
// worker count or scheduling order; results are merged by run index.

#include <atomic>
#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "freecir/brownian.hpp"
#include "freecir/equations.hpp"
#include "freecir/operator.hpp"

namespace freecir {

struct StatRow {
  long step = 0;
  double t = 0.0;
  double trace = 0.0;    // phi(X)
  double min_eig = 0.0;
  double max_eig = 0.0;
  double norm1 = 0.0;    // phi(|X|)
  double norm2 = 0.0;    // sqrt(phi(X^2))
  long breaches = 0;     // cumulative clamped eigenvalues
};

struct TrajectoryStats {
  int run = 0;
  std::vector<StatRow> rows;
  bool failed = false;         // run aborted (e.g. SingularState); rows so far kept
  std::string failure;
  double failure_time = 0.0;
  /// Eigenvalue snapshots at the requested capture times (matrix and
  /// diagonal kinds; scalar kinds record the single value).
  std::vector<std::pair<double, RealVector>> spectra;
};

struct SimulateOptions {
  int workers = 1;
  /// Grid times at which to capture the full spectrum into TrajectoryStats.
  std::vector<double> spectrum_times;
};

namespace detail {

inline StatRow stat_row_scalar(long k, double t, double x, long breaches) {
  StatRow r;
  r.step = k;
  r.t = t;
  r.trace = x;
  r.min_eig = x;
  r.max_eig = x;
  r.norm1 = std::abs(x);
  r.norm2 = std::abs(x);
  r.breaches = breaches;
  return r;
}

inline StatRow stat_row_eigs(long k, double t, const RealVector& ev, long breaches) {
  StatRow r;
  r.step = k;
  r.t = t;
  const double n = static_cast<double>(ev.size());
  r.trace = ev.sum() / n;
  r.min_eig = ev.minCoeff();
  r.max_eig = ev.maxCoeff();
  r.norm1 = ev.cwiseAbs().sum() / n;
  r.norm2 = std::sqrt(ev.squaredNorm() / n);
  r.breaches = breaches;
  return r;
}

inline StatRow stat_row(const ProcessState& st, long k) {
  if (std::holds_alternative<double>(st.x))
    return stat_row_scalar(k, st.t, std::get<double>(st.x), st.breach_count);
  if (std::holds_alternative<Eigen::VectorXd>(st.x))
    return stat_row_eigs(k, st.t, std::get<Eigen::VectorXd>(st.x), st.breach_count);
  const auto& op = std::get<SelfAdjointOperator>(st.x);
  if (op.dim() == 1)
    return stat_row_scalar(k, st.t, op.matrix()(0, 0).real(), st.breach_count);
  RealVector ev = st.decomp ? st.decomp->eigenvalues
                            : spectral_decompose(op).eigenvalues;
  return stat_row_eigs(k, st.t, std::move(ev), st.breach_count);
}

inline RealVector spectrum_of(const ProcessState& st) {
  if (std::holds_alternative<double>(st.x))
    return RealVector::Constant(1, std::get<double>(st.x));
  if (std::holds_alternative<Eigen::VectorXd>(st.x)) {
    RealVector v = std::get<Eigen::VectorXd>(st.x);
    std::sort(v.begin(), v.end());
    return v;
  }
  const auto& op = std::get<SelfAdjointOperator>(st.x);
  if (op.dim() == 1) return RealVector::Constant(1, op.matrix()(0, 0).real());
  return st.decomp ? st.decomp->eigenvalues : spectral_decompose(op).eigenvalues;
}

/// Maps a requested time to a grid index k with t_k = k*dt (1e-9 tolerance).
inline long grid_index(double t, double dt, long steps) {
  const long k = std::lround(t / dt);
  if (k < 0 || k > steps || std::abs(static_cast<double>(k) * dt - t) > 1e-9)
    throw GridMismatch("time " + std::to_string(t) + " is not on the grid (dt = " +
                       std::to_string(dt) + ")");
  return k;
}

inline TrajectoryStats simulate_one(const EquationContext& ctx,
                                    const SchemeSpec& scheme,
                                    const SeedPolicy& policy, int run,
                                    const std::vector<long>& capture_steps) {
  TrajectoryStats ts;
  ts.run = run;
  const long steps = scheme.steps();
  const double dt = scheme.dt;
  // Free (matrix) noise only above dimension 1: at dimension 1 the free
  // kinds delegate to the scalar kernels, and drawing the scalar increment
  // directly makes the collapse to the scalar solver exact by construction.
  const bool matrix_noise = kind_uses_free_noise(ctx.spec.kind) && ctx.n > 1;

  ProcessState state = initial_state(ctx);
  ts.rows.reserve(static_cast<std::size_t>(steps) + 1);
  ts.rows.push_back(stat_row(state, 0));
  auto capture_it = capture_steps.begin();
  if (capture_it != capture_steps.end() && *capture_it == 0) {
    ts.spectra.emplace_back(0.0, spectrum_of(state));
    ++capture_it;
  }

  for (long k = 1; k <= steps; ++k) {
    const StreamCtx stream_ctx = policy.stream(static_cast<std::uint64_t>(run),
                                               static_cast<std::uint64_t>(k - 1));
    try {
      NoiseValue noise;
      if (matrix_noise)
        noise = sample_free_increment(dt, ctx.n, stream_ctx);
      else
        noise = sample_scalar_increment(dt, stream_ctx);
      state = scheme.scheme == Scheme::EULER ? step(ctx, state, dt, noise)
                                             : step_splitting(ctx, state, dt, noise);
      state.t = static_cast<double>(k) * dt;  // exact grid, no accumulation drift
    } catch (const Error& e) {
      ts.failed = true;
      ts.failure = e.what();
      ts.failure_time = static_cast<double>(k) * dt;
      return ts;
    }
    ts.rows.push_back(stat_row(state, k));
    if (capture_it != capture_steps.end() && *capture_it == k) {
      ts.spectra.emplace_back(state.t, spectrum_of(state));
      ++capture_it;
    }
  }
  return ts;
}

}  // namespace detail

inline std::vector<TrajectoryStats> simulate(const EquationSpec& spec,
                                             const SchemeSpec& scheme,
                                             const SeedPolicy& policy, int runs,
                                             const SimulateOptions& options = {}) {
  spec.validate(/*strict_positive_sigma=*/false);
  scheme.validate();
  if (runs < 1) throw Error("runs must be >= 1");
  const EquationContext ctx = make_context(spec);

  std::vector<long> capture_steps;
  capture_steps.reserve(options.spectrum_times.size());
  for (double t : options.spectrum_times)
    capture_steps.push_back(detail::grid_index(t, scheme.dt, scheme.steps()));
  std::sort(capture_steps.begin(), capture_steps.end());
  capture_steps.erase(std::unique(capture_steps.begin(), capture_steps.end()),
                      capture_steps.end());

  std::vector<TrajectoryStats> out(static_cast<std::size_t>(runs));
  const int workers = std::max(1, std::min(options.workers, runs));

  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto work = [&]() {
    try {
      for (int r = next.fetch_add(1); r < runs; r = next.fetch_add(1))
        out[static_cast<std::size_t>(r)] =
            detail::simulate_one(ctx, scheme, policy, r, capture_steps);
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!first_error) first_error = std::current_exception();
    }
  };

  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int i = 0; i < workers; ++i) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

}  // namespace freecir
