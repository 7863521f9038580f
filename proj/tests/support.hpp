#pragma once

#include <cstdint>
#include <random>

#include "gmot/geometry.hpp"

namespace gmot::testing {

// Seeded cloud with coordinates drawn from N(0, scale^2).
inline PointCloud gaussian_cloud(Index n, Index d, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  Matrix pts(n, d);
  for (Index i = 0; i < n; ++i) {
    for (Index k = 0; k < d; ++k) pts(i, k) = normal(rng);
  }
  return PointCloud::uniform(std::move(pts));
}

inline Matrix gaussian_matrix(Index rows, Index cols, std::uint64_t seed) {
  return gaussian_cloud(rows, cols, seed).points;
}

// Flattens a matrix column-major into a vector and back, for finite differences
// over point coordinates.
inline Vector flat(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

inline Matrix unflat(const Vector& v, Index rows, Index cols) {
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

}  // namespace gmot::testing
