#pragma once

// Exception taxonomy for the whole library. Every throw carries enough data
// to be reported without re-deriving it at the catch site (offending
// eigenvalue, config field path, parse position).

#include <stdexcept>
#include <string>

namespace freecir {

/// Root of all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Input matrix violates the entrywise Hermitian tolerance.
class NonHermitianInput : public Error {
 public:
  NonHermitianInput(double deviation, double tol)
      : Error("non-Hermitian input: max |A(i,j) - conj(A(j,i))| = " +
              std::to_string(deviation) + " exceeds " + std::to_string(tol)),
        deviation(deviation) {}
  double deviation;
};

/// Inverse requested while some |eigenvalue| sits below the invertibility floor.
class SingularOperator : public Error {
 public:
  SingularOperator(double eigenvalue, double floor)
      : Error("singular operator: |eigenvalue " + std::to_string(eigenvalue) +
              "| below invertibility floor " + std::to_string(floor)),
        eigenvalue(eigenvalue) {}
  double eigenvalue;
};

/// Root requested on spectrum extending below the clip window.
class NegativeSpectrum : public Error {
 public:
  NegativeSpectrum(double eigenvalue, double clip)
      : Error("negative spectrum: eigenvalue " + std::to_string(eigenvalue) +
              " below clip window -" + std::to_string(clip)),
        eigenvalue(eigenvalue) {}
  double eigenvalue;
};

/// Operator construction from an empty spectrum list.
class EmptySpectrum : public Error {
 public:
  EmptySpectrum() : Error("empty spectrum: at least one eigenvalue required") {}
};

/// Dimension outside [1, max_dim], non-square input, or mismatched operands.
class DimensionMismatch : public Error {
 public:
  explicit DimensionMismatch(const std::string& what) : Error(what) {}
};

/// Time grids of two trajectory ensembles do not agree.
class GridMismatch : public Error {
 public:
  explicit GridMismatch(const std::string& what) : Error(what) {}
};

/// Paired equation specs disagree where they are required to match.
class SpecMismatch : public Error {
 public:
  explicit SpecMismatch(const std::string& what) : Error(what) {}
};

/// A simulated state left the domain of its own drift (inverse touched the floor).
class SingularState : public Error {
 public:
  SingularState(double eigenvalue, double t)
      : Error("singular state: eigenvalue " + std::to_string(eigenvalue) +
              " hit the invertibility floor at t = " + std::to_string(t)),
        eigenvalue(eigenvalue), t(t) {}
  double eigenvalue;
  double t;
};

/// Config file rejected; `path` names the offending field (dotted).
class ConfigError : public Error {
 public:
  ConfigError(std::string path_, const std::string& what)
      : Error("config field '" + path_ + "': " + what), path(std::move(path_)) {}
  std::string path;
};

/// Rewriter input rejected; `position` is a 0-based character offset.
class SyntaxError : public Error {
 public:
  SyntaxError(std::size_t position, const std::string& what)
      : Error("syntax error at offset " + std::to_string(position) + ": " + what),
        position(position) {}
  std::size_t position;
};

/// Differential of nonzero degree used where a scalar is required (e.g. phi(dW)).
class GradingError : public Error {
 public:
  explicit GradingError(const std::string& what) : Error(what) {}
};

/// Symbolic differential requested for a polynomial outside degree <= 2.
class UnsupportedPolynomial : public Error {
 public:
  explicit UnsupportedPolynomial(const std::string& what) : Error(what) {}
};

}  // namespace freecir
