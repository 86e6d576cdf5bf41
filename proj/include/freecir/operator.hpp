#pragma once

// Finite-dimensional stand-in for a tracial noncommutative probability space.
//
// Self-adjoint elements of the algebra are modeled by N x N complex Hermitian
// matrices and the faithful tracial state by the normalized trace
//
//     phi(X) = tr(X) / N.
//
// Functional calculus f(X) = Q f(Lambda) Q* goes through the dense spectral
// decomposition. Eigenvalues that undershoot zero by at most `tol_clip` are
// treated as zero before roots are taken; anything lower is a hard error, as
// is inverting spectrum inside the `eps_inv` window.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <limits>
#include <string>
#include <vector>

#include "freecir/errors.hpp"

namespace freecir {

inline constexpr double tol_herm = 1e-12;  // entrywise Hermitian deviation bound
inline constexpr double tol_clip = 1e-12;  // eigenvalue clip window below zero
inline constexpr double eps_inv = 1e-10;   // invertibility floor on |eigenvalue|
inline constexpr int max_dim = 1024;       // dense-path dimension cap

using Matrix = Eigen::MatrixXcd;
using RealVector = Eigen::VectorXd;

/// Hermitian matrix with the invariant checked at construction.
class SelfAdjointOperator {
 public:
  /// Validates squareness, 1 <= N <= max_dim, and the Hermitian tolerance.
  explicit SelfAdjointOperator(Matrix m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols())
      throw DimensionMismatch("operator must be square, got " +
                           std::to_string(m_.rows()) + " x " +
                           std::to_string(m_.cols()));
    if (m_.rows() < 1 || m_.rows() > max_dim)
      throw DimensionMismatch("dimension " + std::to_string(m_.rows()) +
                           " outside [1, " + std::to_string(max_dim) + "]");
    double dev = 0.0;
    for (Eigen::Index j = 0; j < m_.cols(); ++j)
      for (Eigen::Index i = 0; i <= j; ++i)
        dev = std::max(dev, std::abs(m_(i, j) - std::conj(m_(j, i))));
    if (dev > tol_herm) throw NonHermitianInput(dev, tol_herm);
  }

  /// 0.5 * (M + M*): exact Hermitization for products that are Hermitian up
  /// to rounding. The averaging is a no-op on already-Hermitian input.
  static SelfAdjointOperator symmetrized(const Matrix& m) {
    return SelfAdjointOperator(0.5 * (m + m.adjoint()).eval());
  }

  static SelfAdjointOperator identity(Eigen::Index n) {
    return SelfAdjointOperator(Matrix::Identity(n, n));
  }

  static SelfAdjointOperator zero(Eigen::Index n) {
    return SelfAdjointOperator(Matrix::Zero(n, n));
  }

  Eigen::Index dim() const { return m_.rows(); }
  const Matrix& matrix() const { return m_; }

  friend SelfAdjointOperator operator+(const SelfAdjointOperator& a,
                                       const SelfAdjointOperator& b) {
    require_same_dim(a, b);
    return SelfAdjointOperator(a.m_ + b.m_);
  }
  friend SelfAdjointOperator operator-(const SelfAdjointOperator& a,
                                       const SelfAdjointOperator& b) {
    require_same_dim(a, b);
    return SelfAdjointOperator(a.m_ - b.m_);
  }
  friend SelfAdjointOperator operator*(double s, const SelfAdjointOperator& a) {
    return SelfAdjointOperator(s * a.m_);
  }

 private:
  static void require_same_dim(const SelfAdjointOperator& a,
                               const SelfAdjointOperator& b) {
    if (a.dim() != b.dim())
      throw DimensionMismatch("operand dimensions differ: " +
                           std::to_string(a.dim()) + " vs " +
                           std::to_string(b.dim()));
  }
  Matrix m_;
};

/// Eigenvalues ascending; columns of `eigenvectors` are the matching
/// orthonormal eigenvectors.
struct SpectralDecomposition {
  RealVector eigenvalues;
  Matrix eigenvectors;
};

inline SpectralDecomposition spectral_decompose(const SelfAdjointOperator& x) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(x.matrix());
  if (solver.info() != Eigen::Success)
    throw Error("eigensolver failed to converge on a " +
                std::to_string(x.dim()) + "-dim operator");
  return {solver.eigenvalues(), solver.eigenvectors()};
}

// ---------------------------------------------------------------------------
// Spectral functions

enum class SpectralFunctionKind {
  Sqrt,          // lambda^(1/2), spectrum >= -tol_clip
  FourthRoot,    // lambda^(1/4), spectrum >= -tol_clip
  Inverse,       // 1/lambda, |spectrum| >= eps_inv
  PositivePart,  // max(lambda, 0)
  Affine,        // alpha * lambda + beta
  Power,         // lambda^k, integer k >= 1
};

/// A named scalar function applied through functional calculus. Also used to
/// describe equation coefficients as functions of the initial operator.
struct SpectralFunction {
  SpectralFunctionKind kind = SpectralFunctionKind::Affine;
  double alpha = 0.0;  // Affine only
  double beta = 0.0;   // Affine only
  int exponent = 1;    // Power only

  static SpectralFunction sqrt() { return {SpectralFunctionKind::Sqrt}; }
  static SpectralFunction fourth_root() { return {SpectralFunctionKind::FourthRoot}; }
  static SpectralFunction inverse() { return {SpectralFunctionKind::Inverse}; }
  static SpectralFunction positive_part() { return {SpectralFunctionKind::PositivePart}; }
  static SpectralFunction affine(double alpha, double beta) {
    return {SpectralFunctionKind::Affine, alpha, beta};
  }
  static SpectralFunction power(int k) {
    if (k < 1) throw Error("power exponent must be a positive integer");
    SpectralFunction f;
    f.kind = SpectralFunctionKind::Power;
    f.exponent = k;
    return f;
  }
  /// Constant multiple of the identity, independent of the input operator.
  static SpectralFunction constant(double c) { return affine(0.0, c); }

  /// Pointwise evaluation with the same domain checks as the operator path.
  double eval(double lambda) const {
    switch (kind) {
      case SpectralFunctionKind::Sqrt:
        return std::sqrt(clip_for_root(lambda));
      case SpectralFunctionKind::FourthRoot:
        return std::sqrt(std::sqrt(clip_for_root(lambda)));
      case SpectralFunctionKind::Inverse:
        if (std::abs(lambda) < eps_inv) throw SingularOperator(lambda, eps_inv);
        return 1.0 / lambda;
      case SpectralFunctionKind::PositivePart:
        return lambda > 0.0 ? lambda : 0.0;
      case SpectralFunctionKind::Affine:
        return alpha * lambda + beta;
      case SpectralFunctionKind::Power: {
        double acc = lambda;  // integer power by repeated product: libm-free
        for (int i = 1; i < exponent; ++i) acc *= lambda;
        return acc;
      }
    }
    throw Error("unreachable spectral function kind");
  }

  std::string to_string() const {
    switch (kind) {
      case SpectralFunctionKind::Sqrt: return "sqrt";
      case SpectralFunctionKind::FourthRoot: return "fourth_root";
      case SpectralFunctionKind::Inverse: return "inverse";
      case SpectralFunctionKind::PositivePart: return "positive_part";
      case SpectralFunctionKind::Affine:
        return "affine(" + format_param(alpha) + "," + format_param(beta) + ")";
      case SpectralFunctionKind::Power:
        return "power(" + std::to_string(exponent) + ")";
    }
    throw Error("unreachable spectral function kind");
  }

  /// Parses "sqrt", "fourth_root", "inverse", "positive_part",
  /// "affine(a,b)", "power(k)", and the sugar "constant(c)" (an alias for
  /// affine(0,c)). Whitespace around tokens is accepted.
  static SpectralFunction parse(const std::string& text);

 private:
  static double clip_for_root(double lambda) {
    if (lambda >= 0.0) return lambda;
    if (lambda >= -tol_clip) return 0.0;
    throw NegativeSpectrum(lambda, tol_clip);
  }
  static std::string format_param(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  }
};

namespace detail {

inline std::string strip(const std::string& s) {
  auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline SpectralFunction SpectralFunction::parse(const std::string& text) {
  const std::string s = detail::strip(text);
  if (s == "sqrt") return sqrt();
  if (s == "fourth_root") return fourth_root();
  if (s == "inverse") return inverse();
  if (s == "positive_part") return positive_part();
  auto open = s.find('(');
  if (open != std::string::npos && s.back() == ')') {
    const std::string name = detail::strip(s.substr(0, open));
    const std::string args = s.substr(open + 1, s.size() - open - 2);
    auto comma = args.find(',');
    try {
      if (name == "affine" && comma != std::string::npos) {
        double a = std::stod(detail::strip(args.substr(0, comma)));
        double b = std::stod(detail::strip(args.substr(comma + 1)));
        return affine(a, b);
      }
      if (name == "constant" && comma == std::string::npos) {
        return constant(std::stod(detail::strip(args)));
      }
      if (name == "power" && comma == std::string::npos) {
        size_t used = 0;
        const std::string karg = detail::strip(args);
        int k = std::stoi(karg, &used);
        if (used != karg.size()) throw Error("trailing characters");
        return power(k);
      }
    } catch (const std::exception&) {
      throw Error("unparsable spectral function '" + text + "'");
    }
  }
  throw Error("unknown spectral function '" + text + "'");
}

/// f(X) by functional calculus on the dense spectral decomposition.
inline SelfAdjointOperator apply_spectral_function(const SelfAdjointOperator& x,
                                                   const SpectralFunction& f) {
  SpectralDecomposition d = spectral_decompose(x);
  RealVector mapped(d.eigenvalues.size());
  for (Eigen::Index i = 0; i < d.eigenvalues.size(); ++i)
    mapped(i) = f.eval(d.eigenvalues(i));
  Matrix rebuilt = d.eigenvectors * mapped.asDiagonal() * d.eigenvectors.adjoint();
  return SelfAdjointOperator::symmetrized(rebuilt);
}

/// Normalized trace phi(X) = tr(X)/N. Real by the Hermitian invariant.
inline double trace_phi(const SelfAdjointOperator& x) {
  return x.matrix().trace().real() / static_cast<double>(x.dim());
}

/// Normalized Schatten norm phi(|X|^p)^(1/p) for p in {1, 2}; spectral radius
/// for p = infinity.
inline double p_norm(const SelfAdjointOperator& x, double p) {
  SpectralDecomposition d = spectral_decompose(x);
  const auto& lam = d.eigenvalues;
  const double n = static_cast<double>(lam.size());
  if (p == 1.0) return lam.cwiseAbs().sum() / n;
  if (p == 2.0) return std::sqrt(lam.squaredNorm() / n);
  if (p == std::numeric_limits<double>::infinity())
    return lam.cwiseAbs().maxCoeff();
  throw Error("p_norm supports p = 1, 2, or infinity");
}

/// Diagonal operator with each spectrum value repeated `multiplicity` times,
/// laid out in blocks. N = values.size() * multiplicity.
inline SelfAdjointOperator make_operator_from_spectrum(
    const std::vector<double>& values, int multiplicity) {
  if (values.empty()) throw EmptySpectrum();
  if (multiplicity < 1)
    throw DimensionMismatch("multiplicity must be >= 1, got " +
                         std::to_string(multiplicity));
  const auto n = static_cast<Eigen::Index>(values.size()) * multiplicity;
  if (n > max_dim)
    throw DimensionMismatch("spectrum * multiplicity = " + std::to_string(n) +
                         " exceeds max dimension " + std::to_string(max_dim));
  Matrix m = Matrix::Zero(n, n);
  Eigen::Index k = 0;
  for (double v : values)
    for (int r = 0; r < multiplicity; ++r) m(k, k) = v, ++k;
  return SelfAdjointOperator(std::move(m));
}

}  // namespace freecir
