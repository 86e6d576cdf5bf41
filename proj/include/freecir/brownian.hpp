#pragma once

// Free and classical Brownian increments under a deterministic, parallel-safe
// seeding policy.
//
// Free Brownian motion is approximated by GUE increments: diagonal entries
// ~ N(0, dt/N), off-diagonal real/imaginary parts each ~ N(0, dt/(2N)),
// mirrored conjugately. Under the normalized trace this gives
// E[phi(dW^2)] = dt, the free-BM variance normalization.
//
// Randomness is counter-based (Philox4x32-10): every Gaussian is a pure
// function of (base_seed; run, step, entry, draw), so samples are
// bit-identical no matter how runs are scheduled across threads. Scalar
// Brownian draws use the stream slot of matrix entry 0, which makes the
// one-dimensional free increment and the scalar increment literally the same
// number under matched seeds.

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "freecir/operator.hpp"

namespace freecir {

namespace rng {

// Philox4x32-10 block cipher (Salmon et al., SC'11 "Parallel random numbers:
// as easy as 1, 2, 3"), the standard counter-based generator.
struct Philox4x32 {
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr,
                                            std::uint32_t k0, std::uint32_t k1) {
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ k0,
             static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ k1,
             static_cast<std::uint32_t>(p0)};
      k0 += kWeyl0;
      k1 += kWeyl1;
    }
    return ctr;
  }
};

// 53-bit uniform in [0, 1) from two 32-bit words.
inline double to_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = (std::uint64_t{hi} << 32) | lo;
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

}  // namespace rng

/// A fully-derived stream: one Philox key/counter prefix per (run, step).
struct StreamCtx {
  std::uint64_t base_seed = 0;
  std::uint64_t run = 0;
  std::uint64_t step = 0;
};

/// Seeding policy for an ensemble. `run_offset` partitions the run-index
/// space so paired experiments (e.g. the two sides of an isometry check)
/// draw from disjoint streams under one base seed.
struct SeedPolicy {
  std::uint64_t base_seed = 0;
  std::uint64_t run_offset = 0;

  StreamCtx stream(std::uint64_t run_index, std::uint64_t step_index) const {
    return {base_seed, run_offset + run_index, step_index};
  }
};

struct GaussianPair {
  double z0;
  double z1;
};

/// Two independent standard normals, a pure function of the stream indices.
inline GaussianPair gaussian_pair(const StreamCtx& ctx, std::uint64_t entry,
                                  std::uint32_t draw) {
  const auto words = rng::Philox4x32::block(
      {draw, static_cast<std::uint32_t>(entry),
       static_cast<std::uint32_t>(ctx.step), static_cast<std::uint32_t>(ctx.run)},
      static_cast<std::uint32_t>(ctx.base_seed),
      static_cast<std::uint32_t>(ctx.base_seed >> 32));
  const double u1 = rng::to_unit(words[0], words[1]);
  const double u2 = rng::to_unit(words[2], words[3]);
  // Box-Muller; 1 - u1 lies in (0, 1] so the log is finite.
  const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
  const double theta = 2.0 * M_PI * u2;
  return {r * std::cos(theta), r * std::sin(theta)};
}

/// GUE-scaled Hermitian increment over a step of length dt. Hermiticity is
/// exact by construction (mirrored conjugate entries), not a tolerance.
inline SelfAdjointOperator sample_free_increment(double dt, Eigen::Index dim,
                                                 const StreamCtx& ctx) {
  if (dt <= 0.0) throw Error("increment length dt must be positive");
  if (dim < 1) throw DimensionMismatch("increment dimension must be >= 1");
  const double sd_diag = std::sqrt(dt / static_cast<double>(dim));
  const double sd_off = std::sqrt(dt / (2.0 * static_cast<double>(dim)));
  Matrix m(dim, dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    for (Eigen::Index j = i; j < dim; ++j) {
      const auto entry = static_cast<std::uint64_t>(i) *
                             static_cast<std::uint64_t>(dim) +
                         static_cast<std::uint64_t>(j);
      const GaussianPair g = gaussian_pair(ctx, entry, 0);
      if (i == j) {
        m(i, i) = g.z0 * sd_diag;
      } else {
        const std::complex<double> z(g.z0 * sd_off, g.z1 * sd_off);
        m(i, j) = z;
        m(j, i) = std::conj(z);
      }
    }
  }
  return SelfAdjointOperator(std::move(m));
}

/// Classical Brownian increment ~ N(0, dt). Shares the entry-0 stream slot of
/// sample_free_increment, so it equals the dim-1 free increment bit-for-bit.
inline double sample_scalar_increment(double dt, const StreamCtx& ctx) {
  if (dt <= 0.0) throw Error("increment length dt must be positive");
  return gaussian_pair(ctx, 0, 0).z0 * std::sqrt(dt);
}

namespace detail {

inline void check_grid(const std::vector<double>& grid) {
  if (grid.empty() || grid.front() != 0.0)
    throw Error("time grid must start at 0");
  for (std::size_t k = 1; k < grid.size(); ++k)
    if (grid[k] <= grid[k - 1]) throw Error("time grid must be strictly increasing");
}

}  // namespace detail

/// Time grid plus per-interval Hermitian increments; the path itself starts
/// at the zero operator.
struct FreeBrownianPath {
  std::vector<double> grid;
  std::vector<SelfAdjointOperator> increments;
  Eigen::Index dim = 0;

  /// Cumulative value W(grid[k]) = sum of the first k increments.
  SelfAdjointOperator value_at(std::size_t k) const {
    if (k > increments.size()) throw Error("path index out of range");
    Matrix acc = Matrix::Zero(dim, dim);
    for (std::size_t i = 0; i < k; ++i) acc += increments[i].matrix();
    return SelfAdjointOperator(std::move(acc));
  }
};

struct ScalarBrownianPath {
  std::vector<double> grid;
  std::vector<double> increments;

  double value_at(std::size_t k) const {
    if (k > increments.size()) throw Error("path index out of range");
    double acc = 0.0;
    for (std::size_t i = 0; i < k; ++i) acc += increments[i];
    return acc;
  }
};

inline FreeBrownianPath sample_free_path(const SeedPolicy& policy,
                                         std::uint64_t run_index,
                                         const std::vector<double>& grid,
                                         Eigen::Index dim) {
  detail::check_grid(grid);
  FreeBrownianPath path;
  path.grid = grid;
  path.dim = dim;
  path.increments.reserve(grid.size() - 1);
  for (std::size_t k = 0; k + 1 < grid.size(); ++k)
    path.increments.push_back(sample_free_increment(
        grid[k + 1] - grid[k], dim, policy.stream(run_index, k)));
  return path;
}

inline ScalarBrownianPath sample_scalar_path(const SeedPolicy& policy,
                                             std::uint64_t run_index,
                                             const std::vector<double>& grid) {
  detail::check_grid(grid);
  ScalarBrownianPath path;
  path.grid = grid;
  path.increments.reserve(grid.size() - 1);
  for (std::size_t k = 0; k + 1 < grid.size(); ++k)
    path.increments.push_back(
        sample_scalar_increment(grid[k + 1] - grid[k], policy.stream(run_index, k)));
  return path;
}

}  // namespace freecir
