#pragma once

// Equation catalog and one-step integrators.
//
// Catalog (a, sigma are positive elements of the commutative algebra
// generated by X0 and the identity, given as spectral functions of X0;
// b > 0 is scalar; W is free Brownian motion, B classical):
//
//   FREE_CIR_NONCLASSICAL  dX = (a - bX)dt + (sigma/2) sqrtX dW + dW sqrtX (sigma/2)
//   FREE_CIR_CLASSICAL     dX = (a - bX)dt + X^{1/4} sigma^{1/2} dW sigma^{1/2} X^{1/4}
//   FREE_SDE_ANALOGUE      dX = (a - bX)dt + sigma^{1/2} X^{1/4} dW X^{1/4} sigma^{1/2}
//   SQRT_V_FREE            dV = (G (1/4)V^-1 + (1/4)V^-1 G - (b/2)V)dt
//                               + (sigma/4) dW + dW (sigma/4),
//                          G = a - (phi(sigma) sigma + sigma^2)/8
//   SQRT_VBAR_CLASSICAL    dV = ((1/2) G V^-1 - (b/2)V)dt + c dB,
//                          c = (1/2) sqrt(phi(sigma^2)/2 + phi(sigma)^2/2);
//                          V stays in the commutative algebra of V0, so it is
//                          integrated as coupled scalar SDEs on the eigenvalues
//                          sharing one Brownian path
//   SCALAR_CIR             dx = (a - bx)dt + sigma sqrt(x) dB
//   SCALAR_SQRT            du = ((1/2)(a - sigma^2/4)/u - (b/2)u)dt + (sigma/2) dB
//
// At dimension 1 every free kind reduces algebraically to its scalar
// counterpart (all factors commute), and the integrators delegate to the
// scalar kernels so the reduction is exact to the last bit.
//
// Positivity is handled by full truncation: after each step, eigenvalues
// below zero are clamped to zero and counted in breach_count, never hidden.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "freecir/brownian.hpp"
#include "freecir/operator.hpp"

namespace freecir {

enum class EquationKind {
  FREE_CIR_NONCLASSICAL,
  FREE_CIR_CLASSICAL,
  SQRT_V_FREE,
  SQRT_VBAR_CLASSICAL,
  FREE_SDE_ANALOGUE,
  SCALAR_CIR,
  SCALAR_SQRT,
};

inline bool kind_is_scalar(EquationKind k) {
  return k == EquationKind::SCALAR_CIR || k == EquationKind::SCALAR_SQRT;
}
inline bool kind_is_diagonal(EquationKind k) {
  return k == EquationKind::SQRT_VBAR_CLASSICAL;
}
inline bool kind_is_matrix(EquationKind k) {
  return !kind_is_scalar(k) && !kind_is_diagonal(k);
}
/// Kinds driven by free (matrix) Brownian motion; the rest use a scalar path.
inline bool kind_uses_free_noise(EquationKind k) {
  return kind_is_matrix(k);
}
/// Kinds whose drift contains the inverse of the state.
inline bool kind_needs_inverse(EquationKind k) {
  return k == EquationKind::SQRT_V_FREE ||
         k == EquationKind::SQRT_VBAR_CLASSICAL ||
         k == EquationKind::SCALAR_SQRT;
}

inline std::string to_string(EquationKind k) {
  switch (k) {
    case EquationKind::FREE_CIR_NONCLASSICAL: return "FREE_CIR_NONCLASSICAL";
    case EquationKind::FREE_CIR_CLASSICAL: return "FREE_CIR_CLASSICAL";
    case EquationKind::SQRT_V_FREE: return "SQRT_V_FREE";
    case EquationKind::SQRT_VBAR_CLASSICAL: return "SQRT_VBAR_CLASSICAL";
    case EquationKind::FREE_SDE_ANALOGUE: return "FREE_SDE_ANALOGUE";
    case EquationKind::SCALAR_CIR: return "SCALAR_CIR";
    case EquationKind::SCALAR_SQRT: return "SCALAR_SQRT";
  }
  throw Error("unreachable equation kind");
}

inline EquationKind equation_kind_from_string(const std::string& s) {
  if (s == "FREE_CIR_NONCLASSICAL") return EquationKind::FREE_CIR_NONCLASSICAL;
  if (s == "FREE_CIR_CLASSICAL") return EquationKind::FREE_CIR_CLASSICAL;
  if (s == "SQRT_V_FREE") return EquationKind::SQRT_V_FREE;
  if (s == "SQRT_VBAR_CLASSICAL") return EquationKind::SQRT_VBAR_CLASSICAL;
  if (s == "FREE_SDE_ANALOGUE") return EquationKind::FREE_SDE_ANALOGUE;
  if (s == "SCALAR_CIR") return EquationKind::SCALAR_CIR;
  if (s == "SCALAR_SQRT") return EquationKind::SCALAR_SQRT;
  throw Error("unknown equation kind '" + s + "'");
}

enum class Scheme { EULER, SPLITTING };

inline std::string to_string(Scheme s) {
  return s == Scheme::EULER ? "EULER" : "SPLITTING";
}
inline Scheme scheme_from_string(const std::string& s) {
  if (s == "EULER") return Scheme::EULER;
  if (s == "SPLITTING") return Scheme::SPLITTING;
  throw Error("unknown scheme '" + s + "'");
}

struct EquationSpec {
  EquationKind kind = EquationKind::SCALAR_CIR;
  SpectralFunction a_fn = SpectralFunction::constant(1.0);
  SpectralFunction sigma_fn = SpectralFunction::constant(1.0);
  double b = 1.0;
  std::vector<double> x0_spectrum = {1.0};
  int dim_multiplicity = 1;

  Eigen::Index dim() const {
    if (kind_is_scalar(kind)) return 1;
    return static_cast<Eigen::Index>(x0_spectrum.size()) * dim_multiplicity;
  }

  /// Enforces the type invariants. `strict_positive_sigma` is relaxed for
  /// degenerate sigma = 0 diagnostics (noise-free reference runs); the
  /// config front end always validates strictly.
  void validate(bool strict_positive_sigma = true) const {
    if (!(b > 0.0)) throw Error("b must be > 0");
    if (x0_spectrum.empty()) throw EmptySpectrum();
    if (dim_multiplicity < 1) throw Error("dim_multiplicity must be >= 1");
    if (kind_is_scalar(kind) && x0_spectrum.size() != 1)
      throw Error("scalar kinds take a single-point X0 spectrum");
    if (dim() > max_dim)
      throw DimensionMismatch("dimension " + std::to_string(dim()) +
                              " exceeds " + std::to_string(max_dim));
    for (double v : x0_spectrum) {
      if (!(v > 0.0)) throw Error("X0 spectrum values must be > 0");
      const double av = a_fn.eval(v);
      const double sv = sigma_fn.eval(v);
      if (!(av > 0.0)) throw Error("a_fn must be strictly positive on the X0 spectrum");
      if (strict_positive_sigma && !(sv > 0.0))
        throw Error("sigma_fn must be strictly positive on the X0 spectrum");
      if (!strict_positive_sigma && sv < 0.0)
        throw Error("sigma_fn must be nonnegative on the X0 spectrum");
    }
  }
};

struct SchemeSpec {
  Scheme scheme = Scheme::EULER;
  double dt = 1e-3;
  double t_end = 1.0;

  void validate() const {
    if (!(dt > 0.0)) throw Error("dt must be > 0");
    if (!(t_end > 0.0)) throw Error("T_end must be > 0");
    if (dt > t_end) throw Error("dt must not exceed T_end");
  }
  long steps() const { return std::lround(t_end / dt); }
};

// ---------------------------------------------------------------------------
// Evaluation context: coefficients expanded once per spec.
//
// X0 is diagonal by construction and a = a_fn(X0), sigma = sigma_fn(X0) stay
// diagonal in the same basis, so both are carried as vectors of eigenvalues
// in the block layout of make_operator_from_spectrum.

struct EquationContext {
  EquationSpec spec;
  Eigen::Index n = 1;
  Eigen::VectorXd x0_diag, a_diag, sigma_diag;
  Eigen::VectorXd sqrt_sigma_diag;  // entrywise sqrt, used by the sandwich kinds
  Eigen::VectorXd g_diag;           // a - (phi(sigma) sigma + sigma^2)/8
  double phi_sigma = 0.0;           // phi(sigma)
  double phi_sigma2 = 0.0;          // phi(sigma^2)
  double vbar_diffusion = 0.0;      // (1/2) sqrt(phi(sigma^2)/2 + phi(sigma)^2/2)
  double b = 1.0;

  double a_scalar() const { return a_diag(0); }
  double sigma_scalar() const { return sigma_diag(0); }
};

inline EquationContext make_context(const EquationSpec& spec) {
  EquationContext ctx;
  ctx.spec = spec;
  ctx.b = spec.b;
  ctx.n = spec.dim();
  ctx.x0_diag.resize(ctx.n);
  Eigen::Index k = 0;
  for (double v : spec.x0_spectrum)
    for (int r = 0; r < (kind_is_scalar(spec.kind) ? 1 : spec.dim_multiplicity); ++r)
      ctx.x0_diag(k++) = v;
  ctx.a_diag.resize(ctx.n);
  ctx.sigma_diag.resize(ctx.n);
  for (Eigen::Index i = 0; i < ctx.n; ++i) {
    ctx.a_diag(i) = spec.a_fn.eval(ctx.x0_diag(i));
    ctx.sigma_diag(i) = spec.sigma_fn.eval(ctx.x0_diag(i));
  }
  ctx.phi_sigma = ctx.sigma_diag.sum() / static_cast<double>(ctx.n);
  ctx.phi_sigma2 = ctx.sigma_diag.squaredNorm() / static_cast<double>(ctx.n);
  ctx.sqrt_sigma_diag = ctx.sigma_diag.cwiseSqrt();
  ctx.g_diag.resize(ctx.n);
  for (Eigen::Index i = 0; i < ctx.n; ++i)
    ctx.g_diag(i) = ctx.a_diag(i) - 0.125 * (ctx.phi_sigma * ctx.sigma_diag(i) +
                                             ctx.sigma_diag(i) * ctx.sigma_diag(i));
  ctx.vbar_diffusion =
      0.5 * std::sqrt(0.5 * ctx.phi_sigma2 + 0.5 * ctx.phi_sigma * ctx.phi_sigma);
  return ctx;
}

/// State payload: scalar kinds carry a double, the commutative square-root
/// kind carries its eigenvalue vector, free kinds carry the full operator.
using StateValue = std::variant<double, Eigen::VectorXd, SelfAdjointOperator>;
/// Noise payload: scalar Brownian increment or Hermitian free increment.
using NoiseValue = std::variant<double, SelfAdjointOperator>;

struct ProcessState {
  double t = 0.0;
  StateValue x = 0.0;
  long breach_count = 0;  // cumulative number of clamped eigenvalues
  /// Cache of the spectral decomposition of the current matrix state;
  /// maintained by the steppers so each step costs one eigendecomposition.
  std::optional<SpectralDecomposition> decomp;
};

namespace detail {

// --- scalar kernels -------------------------------------------------------
// Shared between the scalar kinds and the dimension-1 delegation of the free
// kinds. Keeping one code path is what makes the dimension-1 collapse exact.

/// Scalar kind a free kind reduces to when every factor commutes.
inline EquationKind scalar_counterpart(EquationKind k) {
  switch (k) {
    case EquationKind::FREE_CIR_NONCLASSICAL:
    case EquationKind::FREE_CIR_CLASSICAL:
    case EquationKind::FREE_SDE_ANALOGUE:
    case EquationKind::SCALAR_CIR:
      return EquationKind::SCALAR_CIR;
    case EquationKind::SQRT_V_FREE:
    case EquationKind::SCALAR_SQRT:
      return EquationKind::SCALAR_SQRT;
    case EquationKind::SQRT_VBAR_CLASSICAL:
      return EquationKind::SQRT_VBAR_CLASSICAL;
  }
  throw Error("unreachable equation kind");
}

inline double scalar_drift(EquationKind k, const EquationContext& ctx, double x,
                           double t) {
  const double a = ctx.a_scalar();
  const double sigma = ctx.sigma_scalar();
  switch (scalar_counterpart(k)) {
    case EquationKind::SCALAR_CIR:
      return a - ctx.b * x;
    case EquationKind::SCALAR_SQRT:
      if (std::abs(x) < eps_inv) throw SingularState(x, t);
      return 0.5 * (a - 0.25 * (sigma * sigma)) / x - 0.5 * ctx.b * x;
    default:
      throw Error("no scalar kernel for kind " + to_string(k));
  }
}

inline double scalar_diffusion(EquationKind k, const EquationContext& ctx,
                               double x, double w) {
  const double sigma = ctx.sigma_scalar();
  switch (scalar_counterpart(k)) {
    case EquationKind::SCALAR_CIR:
      return sigma * std::sqrt(x < 0.0 ? 0.0 : x) * w;
    case EquationKind::SCALAR_SQRT:
      return 0.5 * sigma * w;
    default:
      throw Error("no scalar kernel for kind " + to_string(k));
  }
}

inline double clamp_scalar(double x, long& breaches) {
  if (x < 0.0) {
    ++breaches;
    return 0.0;
  }
  return x;
}

// --- diagonal kernels (SQRT_VBAR_CLASSICAL) -------------------------------

inline Eigen::VectorXd diagonal_drift(const EquationContext& ctx,
                                      const Eigen::VectorXd& v, double t) {
  Eigen::VectorXd out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::abs(v(i)) < eps_inv) throw SingularState(v(i), t);
    out(i) = 0.5 * ctx.g_diag(i) / v(i) - 0.5 * ctx.b * v(i);
  }
  return out;
}

// --- matrix kernels --------------------------------------------------------

inline const SpectralDecomposition& ensure_decomp(const SelfAdjointOperator& x,
                                                  std::optional<SpectralDecomposition>& cache) {
  if (!cache) cache = spectral_decompose(x);
  return *cache;
}

/// Q f(lambda) Q* from a decomposition; `f` maps an eigenvalue to a real.
template <typename F>
Matrix rebuild(const SpectralDecomposition& d, F&& f) {
  Eigen::VectorXd mapped(d.eigenvalues.size());
  for (Eigen::Index i = 0; i < mapped.size(); ++i) mapped(i) = f(d.eigenvalues(i));
  return d.eigenvectors * mapped.asDiagonal() * d.eigenvectors.adjoint();
}

inline double root_clip(double lambda) {
  if (lambda >= 0.0) return lambda;
  if (lambda >= -tol_clip) return 0.0;
  throw NegativeSpectrum(lambda, tol_clip);
}

inline Matrix matrix_drift(const EquationContext& ctx, const SelfAdjointOperator& x,
                           std::optional<SpectralDecomposition>& cache, double t) {
  const auto cplx = [](const Eigen::VectorXd& v) {
    return v.cast<std::complex<double>>().eval();
  };
  switch (ctx.spec.kind) {
    case EquationKind::FREE_CIR_NONCLASSICAL:
    case EquationKind::FREE_CIR_CLASSICAL:
    case EquationKind::FREE_SDE_ANALOGUE: {
      Matrix d = -ctx.b * x.matrix();
      d.diagonal() += cplx(ctx.a_diag);
      return d;
    }
    case EquationKind::SQRT_V_FREE: {
      const SpectralDecomposition& dec = ensure_decomp(x, cache);
      for (Eigen::Index i = 0; i < dec.eigenvalues.size(); ++i)
        if (std::abs(dec.eigenvalues(i)) < eps_inv)
          throw SingularState(dec.eigenvalues(i), t);
      Matrix vinv = rebuild(dec, [](double l) { return 1.0 / l; });
      Matrix h = 0.25 * (cplx(ctx.g_diag).asDiagonal() * vinv);
      // G (1/4)V^-1 + (1/4)V^-1 G - (b/2)V; the adjoint pairing keeps it
      // exactly Hermitian.
      return (h + h.adjoint() - (0.5 * ctx.b) * x.matrix()).eval();
    }
    default:
      throw Error("matrix drift undefined for kind " + to_string(ctx.spec.kind));
  }
}

inline Matrix matrix_diffusion(const EquationContext& ctx, const SelfAdjointOperator& x,
                               const SelfAdjointOperator& dw,
                               std::optional<SpectralDecomposition>& cache) {
  const auto cplx = [](const Eigen::VectorXd& v) {
    return v.cast<std::complex<double>>().eval();
  };
  switch (ctx.spec.kind) {
    case EquationKind::FREE_CIR_NONCLASSICAL: {
      const SpectralDecomposition& dec = ensure_decomp(x, cache);
      Matrix sqrtx = rebuild(dec, [](double l) { return std::sqrt(root_clip(l)); });
      Matrix s = 0.5 * (cplx(ctx.sigma_diag).asDiagonal() * (sqrtx * dw.matrix()));
      return (s + s.adjoint()).eval();  // (sigma/2) sqrtX dW + dW sqrtX (sigma/2)
    }
    case EquationKind::FREE_CIR_CLASSICAL: {
      const SpectralDecomposition& dec = ensure_decomp(x, cache);
      Matrix r4 = rebuild(dec, [](double l) { return std::sqrt(std::sqrt(root_clip(l))); });
      Matrix b = r4 * cplx(ctx.sqrt_sigma_diag).asDiagonal();  // X^{1/4} sigma^{1/2}
      Matrix m = (b * dw.matrix()) * b.adjoint();
      return (0.5 * (m + m.adjoint())).eval();
    }
    case EquationKind::FREE_SDE_ANALOGUE: {
      const SpectralDecomposition& dec = ensure_decomp(x, cache);
      Matrix r4 = rebuild(dec, [](double l) { return std::sqrt(std::sqrt(root_clip(l))); });
      Matrix c = cplx(ctx.sqrt_sigma_diag).asDiagonal() * r4;  // sigma^{1/2} X^{1/4}
      Matrix m = (c * dw.matrix()) * c.adjoint();
      return (0.5 * (m + m.adjoint())).eval();
    }
    case EquationKind::SQRT_V_FREE: {
      Matrix s = 0.25 * (cplx(ctx.sigma_diag).asDiagonal() * dw.matrix());
      return (s + s.adjoint()).eval();  // (sigma/4) dW + dW (sigma/4)
    }
    default:
      throw Error("matrix diffusion undefined for kind " + to_string(ctx.spec.kind));
  }
}

/// Clamps negative eigenvalues of the freshly decomposed state to zero.
/// Returns the number of clamped eigenvalues; rebuilds the matrix only when
/// something was clamped.
inline long clamp_spectrum(Matrix& m, SpectralDecomposition& dec) {
  long clamped = 0;
  for (Eigen::Index i = 0; i < dec.eigenvalues.size(); ++i)
    if (dec.eigenvalues(i) < 0.0) {
      dec.eigenvalues(i) = 0.0;
      ++clamped;
    }
  if (clamped > 0) {
    Matrix r = rebuild(dec, [](double l) { return l; });
    m = 0.5 * (r + r.adjoint());
  }
  return clamped;
}

}  // namespace detail

/// Initial state X(0) = X0 (diagonal, block layout).
inline ProcessState initial_state(const EquationContext& ctx) {
  ProcessState st;
  st.t = 0.0;
  if (kind_is_scalar(ctx.spec.kind)) {
    st.x = ctx.x0_diag(0);
  } else if (kind_is_diagonal(ctx.spec.kind)) {
    st.x = ctx.x0_diag;
  } else if (ctx.n == 1) {
    st.x = SelfAdjointOperator(Matrix::Constant(1, 1, ctx.x0_diag(0)));
  } else {
    SelfAdjointOperator x0 =
        make_operator_from_spectrum(ctx.spec.x0_spectrum, ctx.spec.dim_multiplicity);
    st.decomp = spectral_decompose(x0);
    st.x = std::move(x0);
  }
  return st;
}

/// Per-unit-time drift of the state. Hermitian for matrix kinds by
/// construction.
inline StateValue drift(const EquationContext& ctx, const StateValue& state,
                        double t = 0.0) {
  if (std::holds_alternative<double>(state))
    return detail::scalar_drift(ctx.spec.kind, ctx, std::get<double>(state), t);
  if (std::holds_alternative<Eigen::VectorXd>(state))
    return detail::diagonal_drift(ctx, std::get<Eigen::VectorXd>(state), t);
  const auto& x = std::get<SelfAdjointOperator>(state);
  if (x.dim() == 1)
    return SelfAdjointOperator(Matrix::Constant(
        1, 1, detail::scalar_drift(ctx.spec.kind, ctx, x.matrix()(0, 0).real(), t)));
  std::optional<SpectralDecomposition> cache;
  return SelfAdjointOperator(detail::matrix_drift(ctx, x, cache, t));
}

inline StateValue drift(const EquationSpec& spec, const StateValue& state) {
  return drift(make_context(spec), state);
}

/// Diffusion increment for a given noise increment.
inline StateValue diffusion_apply(const EquationContext& ctx, const StateValue& state,
                                  const NoiseValue& noise) {
  if (std::holds_alternative<double>(state)) {
    return detail::scalar_diffusion(ctx.spec.kind, ctx, std::get<double>(state),
                                    std::get<double>(noise));
  }
  if (std::holds_alternative<Eigen::VectorXd>(state)) {
    const auto& v = std::get<Eigen::VectorXd>(state);
    return Eigen::VectorXd(
        Eigen::VectorXd::Constant(v.size(), ctx.vbar_diffusion * std::get<double>(noise)));
  }
  const auto& x = std::get<SelfAdjointOperator>(state);
  if (x.dim() == 1) {
    const double w = std::holds_alternative<double>(noise)
                         ? std::get<double>(noise)
                         : std::get<SelfAdjointOperator>(noise).matrix()(0, 0).real();
    return SelfAdjointOperator(Matrix::Constant(
        1, 1,
        detail::scalar_diffusion(ctx.spec.kind, ctx, x.matrix()(0, 0).real(), w)));
  }
  std::optional<SpectralDecomposition> cache;
  return SelfAdjointOperator(detail::matrix_diffusion(
      ctx, x, std::get<SelfAdjointOperator>(noise), cache));
}

inline StateValue diffusion_apply(const EquationSpec& spec, const StateValue& state,
                                  const NoiseValue& noise) {
  return diffusion_apply(make_context(spec), state, noise);
}

// ---------------------------------------------------------------------------
// One-step integrators

namespace detail {

/// Euler update of the 1x1 / scalar state; one fixed expression so every
/// caller produces identical bits.
inline double scalar_euler_update(EquationKind k, const EquationContext& ctx,
                                  double x, double t, double dt, double w,
                                  long& breaches) {
  const double d = scalar_drift(k, ctx, x, t);
  const double f = scalar_diffusion(k, ctx, x, w);
  return clamp_scalar(x + d * dt + f, breaches);
}

/// Classical RK4 for the deterministic drift flow, 4 substeps of dt/4.
template <typename State, typename Drift, typename Combine>
State rk4_flow(State x, double t, double dt, Drift&& drift_at, Combine&& axpy) {
  const double h = dt / 4.0;
  for (int s = 0; s < 4; ++s) {
    const double ts = t + s * h;
    State k1 = drift_at(x, ts);
    State k2 = drift_at(axpy(x, 0.5 * h, k1), ts + 0.5 * h);
    State k3 = drift_at(axpy(x, 0.5 * h, k2), ts + 0.5 * h);
    State k4 = drift_at(axpy(x, h, k3), ts + h);
    State incr = axpy(k1, 1.0, k4);          // k1 + k4
    incr = axpy(incr, 2.0, k2);              // + 2 k2
    incr = axpy(incr, 2.0, k3);              // + 2 k3
    x = axpy(x, h / 6.0, incr);
  }
  return x;
}

}  // namespace detail

/// Explicit Euler step with full-truncation clamping.
inline ProcessState step(const EquationContext& ctx, const ProcessState& state,
                         double dt, const NoiseValue& noise) {
  if (!(dt > 0.0)) throw Error("dt must be > 0");
  ProcessState next;
  next.t = state.t + dt;
  next.breach_count = state.breach_count;

  if (std::holds_alternative<double>(state.x)) {
    next.x = detail::scalar_euler_update(ctx.spec.kind, ctx,
                                             std::get<double>(state.x), state.t,
                                             dt, std::get<double>(noise),
                                             next.breach_count);
    return next;
  }

  if (std::holds_alternative<Eigen::VectorXd>(state.x)) {
    const auto& v = std::get<Eigen::VectorXd>(state.x);
    Eigen::VectorXd d = detail::diagonal_drift(ctx, v, state.t);
    const double f = ctx.vbar_diffusion * std::get<double>(noise);
    Eigen::VectorXd out(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i)
      out(i) = detail::clamp_scalar(v(i) + d(i) * dt + f, next.breach_count);
    next.x = std::move(out);
    return next;
  }

  const auto& x = std::get<SelfAdjointOperator>(state.x);
  if (x.dim() == 1) {
    const double w = std::holds_alternative<double>(noise)
                         ? std::get<double>(noise)
                         : std::get<SelfAdjointOperator>(noise).matrix()(0, 0).real();
    const double y = detail::scalar_euler_update(ctx.spec.kind, ctx,
                                                 x.matrix()(0, 0).real(), state.t,
                                                 dt, w, next.breach_count);
    next.x = SelfAdjointOperator(Matrix::Constant(1, 1, y));
    next.decomp = SpectralDecomposition{Eigen::VectorXd::Constant(1, y),
                                        Matrix::Identity(1, 1)};
    return next;
  }

  std::optional<SpectralDecomposition> cache = state.decomp;
  Matrix d = detail::matrix_drift(ctx, x, cache, state.t);
  Matrix f = detail::matrix_diffusion(ctx, x, std::get<SelfAdjointOperator>(noise), cache);
  Matrix y = x.matrix() + dt * d + f;
  SpectralDecomposition dec =
      spectral_decompose(SelfAdjointOperator(y));
  next.breach_count += detail::clamp_spectrum(y, dec);
  next.x = SelfAdjointOperator(std::move(y));
  next.decomp = std::move(dec);
  return next;
}

inline ProcessState step(const EquationSpec& spec, const ProcessState& state,
                         double dt, const NoiseValue& noise) {
  return step(make_context(spec), state, dt, noise);
}

/// Splitting step: deterministic drift flow over dt (RK4, 4 substeps), then
/// the diffusion increment evaluated at the flowed state, then clamping.
inline ProcessState step_splitting(const EquationContext& ctx,
                                   const ProcessState& state, double dt,
                                   const NoiseValue& noise) {
  if (!(dt > 0.0)) throw Error("dt must be > 0");
  ProcessState next;
  next.t = state.t + dt;
  next.breach_count = state.breach_count;

  if (std::holds_alternative<double>(state.x)) {
    const EquationKind k = ctx.spec.kind;
    double xf = detail::rk4_flow(
        std::get<double>(state.x), state.t, dt,
        [&](double v, double ts) { return detail::scalar_drift(k, ctx, v, ts); },
        [](double v, double c, double g) { return v + c * g; });
    const double f = detail::scalar_diffusion(k, ctx, xf, std::get<double>(noise));
    next.x = detail::clamp_scalar(xf + f, next.breach_count);
    return next;
  }

  if (std::holds_alternative<Eigen::VectorXd>(state.x)) {
    Eigen::VectorXd vf = detail::rk4_flow(
        std::get<Eigen::VectorXd>(state.x), state.t, dt,
        [&](const Eigen::VectorXd& v, double ts) {
          return detail::diagonal_drift(ctx, v, ts);
        },
        [](const Eigen::VectorXd& v, double c, const Eigen::VectorXd& g) {
          return (v + c * g).eval();
        });
    const double f = ctx.vbar_diffusion * std::get<double>(noise);
    Eigen::VectorXd out(vf.size());
    for (Eigen::Index i = 0; i < vf.size(); ++i)
      out(i) = detail::clamp_scalar(vf(i) + f, next.breach_count);
    next.x = std::move(out);
    return next;
  }

  const auto& x = std::get<SelfAdjointOperator>(state.x);
  if (x.dim() == 1) {
    const EquationKind k = ctx.spec.kind;
    double xf = detail::rk4_flow(
        x.matrix()(0, 0).real(), state.t, dt,
        [&](double v, double ts) { return detail::scalar_drift(k, ctx, v, ts); },
        [](double v, double c, double g) { return v + c * g; });
    const double w = std::holds_alternative<double>(noise)
                         ? std::get<double>(noise)
                         : std::get<SelfAdjointOperator>(noise).matrix()(0, 0).real();
    const double f = detail::scalar_diffusion(k, ctx, xf, w);
    const double y = detail::clamp_scalar(xf + f, next.breach_count);
    next.x = SelfAdjointOperator(Matrix::Constant(1, 1, y));
    next.decomp = SpectralDecomposition{Eigen::VectorXd::Constant(1, y),
                                        Matrix::Identity(1, 1)};
    return next;
  }

  Matrix mf = detail::rk4_flow(
      x.matrix(), state.t, dt,
      [&](const Matrix& m, double ts) {
        std::optional<SpectralDecomposition> cache;
        return detail::matrix_drift(ctx, SelfAdjointOperator::symmetrized(m), cache, ts);
      },
      [](const Matrix& m, double c, const Matrix& g) { return (m + c * g).eval(); });
  std::optional<SpectralDecomposition> cache;
  SelfAdjointOperator flowed = SelfAdjointOperator::symmetrized(mf);
  Matrix f = detail::matrix_diffusion(ctx, flowed,
                                      std::get<SelfAdjointOperator>(noise), cache);
  Matrix y = flowed.matrix() + f;
  SpectralDecomposition dec = spectral_decompose(SelfAdjointOperator(y));
  next.breach_count += detail::clamp_spectrum(y, dec);
  next.x = SelfAdjointOperator(std::move(y));
  next.decomp = std::move(dec);
  return next;
}

inline ProcessState step_splitting(const EquationSpec& spec, const ProcessState& state,
                                   double dt, const NoiseValue& noise) {
  return step_splitting(make_context(spec), state, dt, noise);
}

}  // namespace freecir
