// Operator layer: Hermitian invariant, spectral decomposition, functional
// calculus, normalized trace, and trace p-norms.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <random>

#include "freecir/operator.hpp"

using namespace freecir;
using Catch::Approx;

namespace {

SelfAdjointOperator diag_op(std::initializer_list<double> vals) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(vals.size()));
  Eigen::Index i = 0;
  for (double x : vals) v(i++) = x;
  Matrix m = Matrix::Zero(v.size(), v.size());
  m.diagonal() = v.cast<std::complex<double>>();
  return SelfAdjointOperator(std::move(m));
}

SelfAdjointOperator random_hermitian(int n, std::mt19937& gen, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Matrix m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = std::complex<double>(nd(gen), nd(gen));
  return SelfAdjointOperator(0.5 * (m + m.adjoint()).eval());
}

}  // namespace

TEST_CASE("construction enforces the Hermitian invariant", "[operator]") {
  Matrix good(2, 2);
  good << std::complex<double>(1, 0), std::complex<double>(0.5, 0.25),
      std::complex<double>(0.5, -0.25), std::complex<double>(2, 0);
  REQUIRE_NOTHROW(SelfAdjointOperator(good));

  Matrix bad = good;
  bad(0, 1) = std::complex<double>(0.5, 0.25 + 1e-6);
  REQUIRE_THROWS_AS(SelfAdjointOperator(bad), NonHermitianInput);

  Matrix rect(2, 3);
  rect.setZero();
  REQUIRE_THROWS_AS(SelfAdjointOperator(rect), DimensionMismatch);

  // deviation within tol_herm is accepted
  Matrix nearly = good;
  nearly(0, 1) += std::complex<double>(0, 1e-13);
  REQUIRE_NOTHROW(SelfAdjointOperator(nearly));
}

TEST_CASE("dimension caps", "[operator]") {
  REQUIRE_NOTHROW(SelfAdjointOperator::identity(max_dim));
  REQUIRE_THROWS_AS(SelfAdjointOperator(Matrix::Identity(max_dim + 1, max_dim + 1)),
                    DimensionMismatch);
  REQUIRE_THROWS_AS(make_operator_from_spectrum({1.0, 2.0}, max_dim),
                    DimensionMismatch);
  REQUIRE_THROWS_AS(make_operator_from_spectrum({}, 1), EmptySpectrum);
}

TEST_CASE("spectral decomposition reconstructs and is orthonormal", "[operator]") {
  std::mt19937 gen(42);
  const SelfAdjointOperator x = random_hermitian(12, gen);
  const SpectralDecomposition d = spectral_decompose(x);

  // eigenvalues ascending
  for (Eigen::Index i = 1; i < d.eigenvalues.size(); ++i)
    REQUIRE(d.eigenvalues(i) >= d.eigenvalues(i - 1));

  // Q Lambda Q* == X
  const Matrix rebuilt =
      d.eigenvectors *
      d.eigenvalues.cast<std::complex<double>>().asDiagonal() *
      d.eigenvectors.adjoint();
  REQUIRE((rebuilt - x.matrix()).cwiseAbs().maxCoeff() < 1e-12);

  // Q unitary
  const Matrix qq = d.eigenvectors.adjoint() * d.eigenvectors;
  REQUIRE((qq - Matrix::Identity(12, 12)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("functional calculus on a known diagonal", "[operator]") {
  const SelfAdjointOperator x = diag_op({4.0, 9.0});
  const SelfAdjointOperator r = apply_spectral_function(x, SpectralFunction::sqrt());
  const RealVector ev = spectral_decompose(r).eigenvalues;
  REQUIRE(ev(0) == Approx(2.0).margin(1e-12));
  REQUIRE(ev(1) == Approx(3.0).margin(1e-12));

  const SelfAdjointOperator f =
      apply_spectral_function(x, SpectralFunction::fourth_root());
  REQUIRE(trace_phi(f) == Approx((std::sqrt(2.0) + std::sqrt(3.0)) / 2).margin(1e-12));

  const SelfAdjointOperator inv =
      apply_spectral_function(x, SpectralFunction::inverse());
  REQUIRE(trace_phi(inv) == Approx((0.25 + 1.0 / 9.0) / 2).margin(1e-12));
}

TEST_CASE("roots clamp the clip window and reject below it", "[operator]") {
  // eigenvalue in [-tol_clip, 0) is treated as zero
  const SelfAdjointOperator borderline = diag_op({-0.5 * tol_clip, 1.0});
  const SelfAdjointOperator r =
      apply_spectral_function(borderline, SpectralFunction::sqrt());
  REQUIRE(spectral_decompose(r).eigenvalues(0) == Approx(0.0).margin(1e-12));

  const SelfAdjointOperator below = diag_op({-2 * tol_clip, 1.0});
  REQUIRE_THROWS_AS(apply_spectral_function(below, SpectralFunction::sqrt()),
                    NegativeSpectrum);
  REQUIRE_THROWS_AS(apply_spectral_function(below, SpectralFunction::fourth_root()),
                    NegativeSpectrum);
}

TEST_CASE("inverse rejects spectrum inside the invertibility floor", "[operator]") {
  const SelfAdjointOperator near_zero = diag_op({0.5 * eps_inv, 1.0});
  REQUIRE_THROWS_AS(apply_spectral_function(near_zero, SpectralFunction::inverse()),
                    SingularOperator);
  const SelfAdjointOperator ok = diag_op({2 * eps_inv, 1.0});
  REQUIRE_NOTHROW(apply_spectral_function(ok, SpectralFunction::inverse()));
}

TEST_CASE("positive part, affine, power behave pointwise", "[operator]") {
  const SelfAdjointOperator x = diag_op({-3.0, 4.0});
  const SelfAdjointOperator pos =
      apply_spectral_function(x, SpectralFunction::positive_part());
  REQUIRE(trace_phi(pos) == Approx(2.0).margin(1e-12));

  const SelfAdjointOperator aff =
      apply_spectral_function(x, SpectralFunction::affine(2.0, 1.0));
  REQUIRE(trace_phi(aff) == Approx((2 * -3 + 1 + 2 * 4 + 1) / 2.0).margin(1e-12));

  const SelfAdjointOperator cub =
      apply_spectral_function(x, SpectralFunction::power(3));
  REQUIRE(trace_phi(cub) == Approx((-27.0 + 64.0) / 2).margin(1e-11));
  REQUIRE_THROWS_AS(SpectralFunction::power(0), Error);
}

TEST_CASE("spectral function text form round-trips", "[operator]") {
  for (const char* text : {"sqrt", "fourth_root", "inverse", "positive_part",
                           "affine(0.5,0.25)", "power(3)"}) {
    const SpectralFunction f = SpectralFunction::parse(text);
    const SpectralFunction g = SpectralFunction::parse(f.to_string());
    REQUIRE(f.to_string() == g.to_string());
  }
  // sugar: constant(c) == affine(0, c)
  const SpectralFunction c = SpectralFunction::parse("constant(2.5)");
  REQUIRE(c.to_string() == SpectralFunction::affine(0.0, 2.5).to_string());
  REQUIRE(c.eval(123.0) == 2.5);

  REQUIRE_THROWS_AS(SpectralFunction::parse("exp"), Error);
  REQUIRE_THROWS_AS(SpectralFunction::parse("affine(1)"), Error);
  REQUIRE_THROWS_AS(SpectralFunction::parse("power(1.5)"), Error);
}

TEST_CASE("pointwise eval agrees with the operator path", "[operator]") {
  std::mt19937 gen(7);
  const SelfAdjointOperator x = random_hermitian(8, gen);
  const RealVector ev = spectral_decompose(x).eigenvalues;
  for (const SpectralFunction& f :
       {SpectralFunction::positive_part(), SpectralFunction::affine(0.7, -0.2),
        SpectralFunction::power(2)}) {
    const SelfAdjointOperator fx = apply_spectral_function(x, f);
    const RealVector fev = spectral_decompose(fx).eigenvalues;
    RealVector expect(ev.size());
    for (Eigen::Index i = 0; i < ev.size(); ++i) expect(i) = f.eval(ev(i));
    std::sort(expect.data(), expect.data() + expect.size());
    REQUIRE((fev - expect).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("normalized trace is tracial and unital", "[operator]") {
  std::mt19937 gen(11);
  REQUIRE(trace_phi(SelfAdjointOperator::identity(16)) == 1.0);
  for (int rep = 0; rep < 20; ++rep) {
    const SelfAdjointOperator a = random_hermitian(10, gen);
    const SelfAdjointOperator b = random_hermitian(10, gen);
    const double ab = (a.matrix() * b.matrix()).trace().real() / 10.0;
    const double ba = (b.matrix() * a.matrix()).trace().real() / 10.0;
    REQUIRE(std::abs(ab - ba) < 1e-12);
  }
}

TEST_CASE("trace norms: known values and consistency", "[operator]") {
  const SelfAdjointOperator x = diag_op({-3.0, 4.0});
  REQUIRE(p_norm(x, 1.0) == Approx(3.5).margin(1e-12));
  REQUIRE(p_norm(x, 2.0) == Approx(std::sqrt(12.5)).margin(1e-12));
  REQUIRE(p_norm(x, std::numeric_limits<double>::infinity()) ==
          Approx(4.0).margin(1e-12));
  REQUIRE_THROWS_AS(p_norm(x, 3.0), Error);

  std::mt19937 gen(13);
  for (int rep = 0; rep < 20; ++rep) {
    const SelfAdjointOperator a = random_hermitian(9, gen);
    // ||X||_2^2 == phi(X^2)
    const double n2 = p_norm(a, 2.0);
    const double phi2 = (a.matrix() * a.matrix()).trace().real() / 9.0;
    REQUIRE(n2 * n2 == Approx(phi2).margin(1e-10));
    // norm monotonicity ||X||_1 <= ||X||_2 <= ||X||_inf
    REQUIRE(p_norm(a, 1.0) <= n2 + 1e-12);
    REQUIRE(n2 <= p_norm(a, std::numeric_limits<double>::infinity()) + 1e-12);
  }
}

TEST_CASE("block-layout diagonal construction", "[operator]") {
  const SelfAdjointOperator x = make_operator_from_spectrum({0.5, 2.0}, 3);
  REQUIRE(x.dim() == 6);
  REQUIRE(x.matrix()(0, 0).real() == 0.5);
  REQUIRE(x.matrix()(2, 2).real() == 0.5);
  REQUIRE(x.matrix()(3, 3).real() == 2.0);
  REQUIRE(trace_phi(x) == Approx(1.25).margin(1e-15));
}
