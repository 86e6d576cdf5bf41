#pragma once

// Everything the underlying theory makes checkable at finite N: the operator
// Feller condition, closed-form trace-ODE references, the square-root
// process isometries, semicircle moment targets, freeness tests, and pooled
// spectral histograms. All statistical outputs report standard errors; no
// hidden thresholds.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "freecir/brownian.hpp"
#include "freecir/equations.hpp"
#include "freecir/operator.hpp"
#include "freecir/simulate.hpp"

namespace freecir {

// ---------------------------------------------------------------------------
// Feller condition

struct FellerReport {
  double min_eig_2a_minus_sigma2 = 0.0;
  bool satisfied = false;
  double margin = 0.0;         // equals min_eig_2a_minus_sigma2
  /// min eigenvalue of 2a - (phi(sigma) sigma + sigma^2)/2, the weaker
  /// condition the square-root drift positivity argument actually consumes.
  double jensen_margin = 0.0;
};

inline FellerReport feller_check(const SelfAdjointOperator& a,
                                 const SelfAdjointOperator& sigma) {
  if (a.dim() != sigma.dim())
    throw DimensionMismatch("feller_check: a is " + std::to_string(a.dim()) +
                            "-dim, sigma is " + std::to_string(sigma.dim()) +
                            "-dim");
  const Matrix sigma2 = sigma.matrix() * sigma.matrix();
  FellerReport rep;
  {
    SelfAdjointOperator f =
        SelfAdjointOperator::symmetrized(2.0 * a.matrix() - sigma2);
    rep.min_eig_2a_minus_sigma2 = spectral_decompose(f).eigenvalues(0);
  }
  rep.margin = rep.min_eig_2a_minus_sigma2;
  rep.satisfied = rep.margin >= 0.0;
  {
    const double phi_sigma = trace_phi(sigma);
    SelfAdjointOperator j = SelfAdjointOperator::symmetrized(
        2.0 * a.matrix() - 0.5 * (phi_sigma * sigma.matrix() + sigma2));
    rep.jensen_margin = spectral_decompose(j).eigenvalues(0);
  }
  return rep;
}

/// Coefficients diagonal in a common basis: eigenvalues are entrywise.
inline FellerReport feller_check(const Eigen::VectorXd& a_diag,
                                 const Eigen::VectorXd& sigma_diag) {
  if (a_diag.size() != sigma_diag.size())
    throw DimensionMismatch("feller_check: diagonal length mismatch");
  if (a_diag.size() == 0) throw EmptySpectrum();
  FellerReport rep;
  const double phi_sigma = sigma_diag.sum() / static_cast<double>(sigma_diag.size());
  double m = std::numeric_limits<double>::infinity();
  double mj = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < a_diag.size(); ++i) {
    const double s = sigma_diag(i);
    m = std::min(m, 2.0 * a_diag(i) - s * s);
    mj = std::min(mj, 2.0 * a_diag(i) - 0.5 * (phi_sigma * s + s * s));
  }
  rep.min_eig_2a_minus_sigma2 = m;
  rep.margin = m;
  rep.satisfied = m >= 0.0;
  rep.jensen_margin = mj;
  return rep;
}

// ---------------------------------------------------------------------------
// Trace ODE dy/dt = alpha - b y, closed form

inline std::vector<double> trace_ode_reference(double alpha, double b, double y0,
                                               const std::vector<double>& grid) {
  if (!(b > 0.0)) throw Error("b must be > 0");
  std::vector<double> out;
  out.reserve(grid.size());
  const double yinf = alpha / b;
  for (double t : grid) out.push_back(yinf + (y0 - yinf) * std::exp(-b * t));
  return out;
}

struct MeanSE {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSE mean_se(const std::vector<double>& xs) {
  MeanSE r;
  if (xs.empty()) return r;
  const double n = static_cast<double>(xs.size());
  double sum = 0.0;
  for (double x : xs) sum += x;
  r.mean = sum / n;
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.se = std::sqrt(ss / (n - 1.0) / n);
  }
  return r;
}

struct TraceDeviationReport {
  std::vector<double> times;
  std::vector<double> abs_deviation;  // |ensemble mean - reference|
  std::vector<double> std_err;        // standard error of the ensemble mean
};

/// Which per-row series the deviation tracks: phi(X) directly, or
/// phi(X^2) = norm2^2 (the natural series for the square-root kinds).
enum class TraceSeries { TRACE, SECOND_MOMENT };

inline TraceDeviationReport trace_deviation(
    const std::vector<TrajectoryStats>& ensemble,
    const std::vector<double>& reference,
    TraceSeries series = TraceSeries::TRACE) {
  if (ensemble.empty()) throw Error("empty ensemble");
  for (const TrajectoryStats& ts : ensemble) {
    if (ts.failed)
      throw GridMismatch("run " + std::to_string(ts.run) +
                         " aborted at t = " + std::to_string(ts.failure_time) +
                         "; ensemble grid incomplete");
    if (ts.rows.size() != reference.size())
      throw GridMismatch("run " + std::to_string(ts.run) + " has " +
                         std::to_string(ts.rows.size()) + " grid points, reference has " +
                         std::to_string(reference.size()));
  }
  TraceDeviationReport rep;
  const std::size_t n = reference.size();
  rep.times.reserve(n);
  rep.abs_deviation.reserve(n);
  rep.std_err.reserve(n);
  std::vector<double> vals(ensemble.size());
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t r = 0; r < ensemble.size(); ++r) {
      const StatRow& row = ensemble[r].rows[k];
      vals[r] = series == TraceSeries::TRACE ? row.trace : row.norm2 * row.norm2;
    }
    const MeanSE ms = mean_se(vals);
    rep.times.push_back(ensemble.front().rows[k].t);
    rep.abs_deviation.push_back(std::abs(ms.mean - reference[k]));
    rep.std_err.push_back(ms.se);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Square-root process isometries
//
// The report's required content is the second-moment isometry
// phi(V(t)^2) vs E[phi(Vbar(t)^2)]. Two further isometries are checked with
// test projections p via ||p Y p||_1 = phi(Y p) for positive Y:
//   - p a spectral projection of X0 (inside the commutative algebra of V0):
//     the *_p0 arrays;
//   - p the nonnegative-eigenspace projection of an independent GUE sample
//     (the computable stand-in for "p free of V(t)"): the *_pfree arrays.

struct IsometryReport {
  std::vector<double> checkpoints;
  std::vector<double> lhs;      // ensemble mean of phi(V(t)^2)
  std::vector<double> rhs;      // ensemble mean of phi(Vbar(t)^2)
  std::vector<double> abs_gap;  // |lhs - rhs|
  std::vector<double> std_err;  // sqrt(se_lhs^2 + se_rhs^2)
  std::vector<double> lhs_p0, rhs_p0, gap_p0, se_p0;
  std::vector<double> lhs_pfree, rhs_pfree, gap_pfree, se_pfree;
};

namespace detail {

inline void parallel_runs(int runs, int workers, const std::function<void(int)>& fn) {
  workers = std::max(1, std::min(workers, runs));
  if (workers == 1) {
    for (int r = 0; r < runs; ++r) fn(r);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto work = [&]() {
    try {
      for (int r = next.fetch_add(1); r < runs; r = next.fetch_add(1)) fn(r);
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!first_error) first_error = std::current_exception();
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int i = 0; i < workers; ++i) pool.emplace_back(work);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

/// phi(V^2 p) from V's spectral decomposition and the projector's diagonal
/// weights in V's eigenbasis: (1/N) sum_i lambda_i^2 (Q* p Q)_ii.
inline double phi_square_weighted(const SpectralDecomposition& dec,
                                  const Eigen::VectorXd& weights) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < dec.eigenvalues.size(); ++i)
    acc += dec.eigenvalues(i) * dec.eigenvalues(i) * weights(i);
  return acc / static_cast<double>(dec.eigenvalues.size());
}

}  // namespace detail

inline IsometryReport isometry_check(const EquationSpec& spec_V,
                                     const EquationSpec& spec_Vbar,
                                     const SchemeSpec& scheme,
                                     const SeedPolicy& policy, int runs,
                                     const std::vector<double>& checkpoints,
                                     int workers = 1) {
  if (spec_V.kind != EquationKind::SQRT_V_FREE)
    throw SpecMismatch("spec_V must be SQRT_V_FREE, got " + to_string(spec_V.kind));
  if (spec_Vbar.kind != EquationKind::SQRT_VBAR_CLASSICAL)
    throw SpecMismatch("spec_Vbar must be SQRT_VBAR_CLASSICAL, got " +
                       to_string(spec_Vbar.kind));
  if (spec_V.x0_spectrum != spec_Vbar.x0_spectrum)
    throw SpecMismatch("X0 spectra differ");
  if (spec_V.dim_multiplicity != spec_Vbar.dim_multiplicity)
    throw SpecMismatch("dim multiplicities differ");
  if (spec_V.b != spec_Vbar.b) throw SpecMismatch("b differs");
  if (spec_V.a_fn.to_string() != spec_Vbar.a_fn.to_string())
    throw SpecMismatch("a_fn differs");
  if (spec_V.sigma_fn.to_string() != spec_Vbar.sigma_fn.to_string())
    throw SpecMismatch("sigma_fn differs");
  spec_V.validate();
  spec_Vbar.validate();
  scheme.validate();
  if (runs < 1) throw Error("runs must be >= 1");

  const EquationContext ctx_v = make_context(spec_V);
  const EquationContext ctx_vb = make_context(spec_Vbar);
  const Eigen::Index n = ctx_v.n;
  const long steps = scheme.steps();
  const double dt = scheme.dt;

  std::vector<long> cp_steps;
  for (double t : checkpoints) cp_steps.push_back(detail::grid_index(t, dt, steps));
  const std::size_t ncp = cp_steps.size();

  // Test projections. p0: spectral projection of X0 onto eigenvalues at or
  // below phi(X0) (the identity when X0 is a scalar multiple of id).
  // pfree: projection onto the nonnegative eigenspace of one independent
  // GUE sample drawn from a reserved stream lane.
  Eigen::VectorXd p0_mask(n);
  {
    const double threshold = ctx_v.x0_diag.sum() / static_cast<double>(n);
    for (Eigen::Index i = 0; i < n; ++i)
      p0_mask(i) = ctx_v.x0_diag(i) <= threshold + 1e-15 ? 1.0 : 0.0;
  }
  Matrix pfree;
  Eigen::VectorXd pfree_diag(n);
  {
    constexpr std::uint64_t kProjectorLane = std::uint64_t{1} << 40;
    SelfAdjointOperator g =
        sample_free_increment(1.0, n, policy.stream(kProjectorLane, 0));
    const SpectralDecomposition gd = spectral_decompose(g);
    Eigen::VectorXd ind(n);
    for (Eigen::Index i = 0; i < n; ++i) ind(i) = gd.eigenvalues(i) >= 0.0 ? 1.0 : 0.0;
    pfree = gd.eigenvectors * ind.asDiagonal() * gd.eigenvectors.adjoint();
    for (Eigen::Index i = 0; i < n; ++i) pfree_diag(i) = pfree(i, i).real();
  }

  // Per-run, per-checkpoint samples: [checkpoint][run].
  auto table = [&]() { return std::vector<std::vector<double>>(ncp, std::vector<double>(runs, 0.0)); };
  auto v_full = table(), v_p0 = table(), v_pf = table();
  auto vb_full = table(), vb_p0 = table(), vb_pf = table();

  // V side: free noise, full matrix states.
  detail::parallel_runs(runs, workers, [&](int run) {
    ProcessState st = initial_state(ctx_v);
    auto record = [&](std::size_t cp) {
      SpectralDecomposition local;
      const SpectralDecomposition* dec = st.decomp ? &*st.decomp : nullptr;
      if (!dec) {
        local = spectral_decompose(std::get<SelfAdjointOperator>(st.x));
        dec = &local;
      }
      Eigen::VectorXd ev2 = dec->eigenvalues.cwiseAbs2();
      v_full[cp][run] = ev2.sum() / static_cast<double>(n);
      // weights of p in V's eigenbasis
      Eigen::VectorXd w0(n), wf(n);
      {
        const Matrix& q = dec->eigenvectors;
        for (Eigen::Index i = 0; i < n; ++i) {
          double acc = 0.0;
          for (Eigen::Index k = 0; k < n; ++k)
            acc += p0_mask(k) * std::norm(q(k, i));
          w0(i) = acc;
        }
        const Matrix m = q.adjoint() * (pfree * q);
        for (Eigen::Index i = 0; i < n; ++i) wf(i) = m(i, i).real();
      }
      v_p0[cp][run] = detail::phi_square_weighted(*dec, w0);
      v_pf[cp][run] = detail::phi_square_weighted(*dec, wf);
    };
    std::size_t cp = 0;
    if (cp < ncp && cp_steps[cp] == 0) record(cp++);
    for (long k = 1; k <= steps && cp < ncp; ++k) {
      const NoiseValue noise = sample_free_increment(
          dt, n, policy.stream(static_cast<std::uint64_t>(run),
                               static_cast<std::uint64_t>(k - 1)));
      st = scheme.scheme == Scheme::EULER ? step(ctx_v, st, dt, noise)
                                          : step_splitting(ctx_v, st, dt, noise);
      st.t = static_cast<double>(k) * dt;
      while (cp < ncp && cp_steps[cp] == k) record(cp++);
    }
  });

  // Vbar side: one shared scalar Brownian path per run, diagonal states.
  // Streams are offset to a reserved lane so the two sides are independent.
  SeedPolicy vb_policy = policy;
  vb_policy.run_offset += std::uint64_t{1} << 32;
  detail::parallel_runs(runs, workers, [&](int run) {
    ProcessState st = initial_state(ctx_vb);
    auto record = [&](std::size_t cp) {
      const auto& v = std::get<Eigen::VectorXd>(st.x);
      double full = 0.0, w0 = 0.0, wf = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double sq = v(i) * v(i);
        full += sq;
        w0 += sq * p0_mask(i);
        wf += sq * pfree_diag(i);
      }
      vb_full[cp][run] = full / static_cast<double>(n);
      vb_p0[cp][run] = w0 / static_cast<double>(n);
      vb_pf[cp][run] = wf / static_cast<double>(n);
    };
    std::size_t cp = 0;
    if (cp < ncp && cp_steps[cp] == 0) record(cp++);
    for (long k = 1; k <= steps && cp < ncp; ++k) {
      const NoiseValue noise = sample_scalar_increment(
          dt, vb_policy.stream(static_cast<std::uint64_t>(run),
                               static_cast<std::uint64_t>(k - 1)));
      st = scheme.scheme == Scheme::EULER ? step(ctx_vb, st, dt, noise)
                                          : step_splitting(ctx_vb, st, dt, noise);
      st.t = static_cast<double>(k) * dt;
      while (cp < ncp && cp_steps[cp] == k) record(cp++);
    }
  });

  IsometryReport rep;
  rep.checkpoints = checkpoints;
  auto reduce = [&](const std::vector<std::vector<double>>& lhs_t,
                    const std::vector<std::vector<double>>& rhs_t,
                    std::vector<double>& lhs, std::vector<double>& rhs,
                    std::vector<double>& gap, std::vector<double>& se) {
    for (std::size_t cp = 0; cp < ncp; ++cp) {
      const MeanSE l = mean_se(lhs_t[cp]);
      const MeanSE r = mean_se(rhs_t[cp]);
      lhs.push_back(l.mean);
      rhs.push_back(r.mean);
      gap.push_back(std::abs(l.mean - r.mean));
      se.push_back(std::sqrt(l.se * l.se + r.se * r.se));
    }
  };
  reduce(v_full, vb_full, rep.lhs, rep.rhs, rep.abs_gap, rep.std_err);
  reduce(v_p0, vb_p0, rep.lhs_p0, rep.rhs_p0, rep.gap_p0, rep.se_p0);
  reduce(v_pf, vb_pf, rep.lhs_pfree, rep.rhs_pfree, rep.gap_pfree, rep.se_pfree);
  return rep;
}

// ---------------------------------------------------------------------------
// Semicircle moments

/// Catalan number C(k) = binom(2k, k)/(k+1), exact in double for k <= 20ish.
inline double catalan(int k) {
  double c = 1.0;
  for (int i = 0; i < k; ++i)
    c = c * 2.0 * (2.0 * i + 1.0) / (i + 2.0);
  return c;
}

struct MomentReport {
  int order = 0;
  double estimate = 0.0;
  double target = 0.0;
  double std_err = 0.0;
};

inline std::vector<MomentReport> semicircle_moments(
    const std::vector<FreeBrownianPath>& paths, double t, int max_order) {
  if (paths.empty()) throw Error("empty ensemble");
  if (max_order < 1) throw Error("max_order must be >= 1");
  // locate t on the shared grid
  const std::vector<double>& grid = paths.front().grid;
  std::size_t idx = grid.size();
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (std::abs(grid[i] - t) <= 1e-9) {
      idx = i;
      break;
    }
  if (idx == grid.size())
    throw GridMismatch("time " + std::to_string(t) + " not on the path grid");

  std::vector<std::vector<double>> samples(static_cast<std::size_t>(max_order));
  for (const FreeBrownianPath& p : paths) {
    if (p.grid != grid) throw GridMismatch("paths share no common grid");
    const SelfAdjointOperator w = p.value_at(idx);
    const RealVector ev = spectral_decompose(w).eigenvalues;
    const double n = static_cast<double>(ev.size());
    RealVector pw = RealVector::Ones(ev.size());
    for (int m = 1; m <= max_order; ++m) {
      pw = pw.cwiseProduct(ev);
      samples[static_cast<std::size_t>(m - 1)].push_back(pw.sum() / n);
    }
  }
  std::vector<MomentReport> out;
  for (int m = 1; m <= max_order; ++m) {
    MomentReport r;
    r.order = m;
    const MeanSE ms = mean_se(samples[static_cast<std::size_t>(m - 1)]);
    r.estimate = ms.mean;
    r.std_err = ms.se;
    r.target = (m % 2 == 0) ? catalan(m / 2) * std::pow(t, m / 2) : 0.0;
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Freeness of a deterministic operator against the driver

struct FreenessReport {
  int order_a = 1;
  int order_w = 1;
  double len2_mean = 0.0, len2_se = 0.0;  // phi(Ao Wo)
  double len4_mean = 0.0, len4_se = 0.0;  // phi(Ao Wo Ao Wo)
};

/// Centered alternating moments of a deterministic A = f(X0) against
/// independent driver samples; freeness predicts 0.
inline FreenessReport freeness_test(const SelfAdjointOperator& a,
                                    const std::vector<SelfAdjointOperator>& w_samples,
                                    int order_a = 1, int order_w = 1) {
  if (w_samples.empty()) throw Error("empty ensemble");
  if (order_a < 1 || order_w < 1) throw Error("orders must be >= 1");
  const Eigen::Index n = a.dim();
  Matrix am = Matrix::Identity(n, n);
  for (int i = 0; i < order_a; ++i) am = (am * a.matrix()).eval();
  const double phi_am = am.trace().real() / static_cast<double>(n);
  const Matrix a0 = am - phi_am * Matrix::Identity(n, n);

  std::vector<double> len2, len4;
  len2.reserve(w_samples.size());
  len4.reserve(w_samples.size());
  for (const SelfAdjointOperator& w : w_samples) {
    if (w.dim() != n) throw DimensionMismatch("freeness_test: sample dim mismatch");
    Matrix wm = Matrix::Identity(n, n);
    for (int i = 0; i < order_w; ++i) wm = (wm * w.matrix()).eval();
    const double phi_wm = wm.trace().real() / static_cast<double>(n);
    const Matrix w0 = wm - phi_wm * Matrix::Identity(n, n);
    const Matrix aw = a0 * w0;
    len2.push_back(aw.trace().real() / static_cast<double>(n));
    len4.push_back((aw * aw).trace().real() / static_cast<double>(n));
  }
  FreenessReport rep;
  rep.order_a = order_a;
  rep.order_w = order_w;
  const MeanSE m2 = mean_se(len2);
  rep.len2_mean = m2.mean;
  rep.len2_se = m2.se;
  const MeanSE m4 = mean_se(len4);
  rep.len4_mean = m4.mean;
  rep.len4_se = m4.se;
  return rep;
}

// ---------------------------------------------------------------------------
// Pooled empirical spectral distribution

struct SpectralHistogram {
  std::vector<double> bin_edges;  // bins + 1 edges
  std::vector<long> counts;       // per bin; sums to n_samples * N
  long n_samples = 0;
  double min_eig = 0.0;
  double max_eig = 0.0;
};

inline SpectralHistogram esd_histogram(const std::vector<RealVector>& spectra,
                                       int bins) {
  if (spectra.empty()) throw Error("empty ensemble");
  if (bins < 1) throw Error("bins must be >= 1");
  const Eigen::Index n = spectra.front().size();
  for (const RealVector& s : spectra)
    if (s.size() != n) throw DimensionMismatch("esd_histogram: spectrum length mismatch");
  SpectralHistogram h;
  h.n_samples = static_cast<long>(spectra.size());
  h.min_eig = spectra.front().minCoeff();
  h.max_eig = spectra.front().maxCoeff();
  for (const RealVector& s : spectra) {
    h.min_eig = std::min(h.min_eig, s.minCoeff());
    h.max_eig = std::max(h.max_eig, s.maxCoeff());
  }
  double lo = h.min_eig, hi = h.max_eig;
  if (hi - lo < 1e-12) {  // degenerate spread: widen symmetrically
    lo -= 0.5;
    hi += 0.5;
  }
  h.bin_edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int i = 0; i <= bins; ++i)
    h.bin_edges[static_cast<std::size_t>(i)] =
        lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (const RealVector& s : spectra)
    for (Eigen::Index i = 0; i < n; ++i) {
      int idx = static_cast<int>(std::floor((s(i) - lo) / (hi - lo) * bins));
      idx = std::clamp(idx, 0, bins - 1);
      ++h.counts[static_cast<std::size_t>(idx)];
    }
  return h;
}

inline SpectralHistogram esd_histogram(const std::vector<SelfAdjointOperator>& ops,
                                       int bins) {
  std::vector<RealVector> spectra;
  spectra.reserve(ops.size());
  for (const SelfAdjointOperator& op : ops)
    spectra.push_back(spectral_decompose(op).eigenvalues);
  return esd_histogram(spectra, bins);
}

}  // namespace freecir
