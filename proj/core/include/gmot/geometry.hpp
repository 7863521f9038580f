#pragma once

#include <cstdint>
#include <string_view>
#include <utility>

#include "gmot/types.hpp"

namespace gmot {

enum class Metric { euclidean, sq_euclidean };
enum class Scaling { none, mean, max };

std::string_view to_string(Metric m);
std::string_view to_string(Scaling s);
Metric parse_metric(std::string_view name);
Scaling parse_scaling(std::string_view name);

// Empirical measure: n weighted points in R^d, one point per row.
struct PointCloud {
  Matrix points;
  Vector weights;

  // Uniform weights 1/n.
  static PointCloud uniform(Matrix points);

  Index size() const { return points.rows(); }
  Index dim() const { return points.cols(); }

  // Throws InvalidInput on empty clouds, non-finite coordinates, negative
  // weights or weights that do not sum to one.
  void validate() const;
};

struct CostMatrix {
  Matrix values;  // already divided by scale_factor
  Metric metric = Metric::euclidean;
  Scaling scaling = Scaling::none;
  double scale_factor = 1.0;

  Matrix unscaled() const { return values * scale_factor; }
};

struct RigidTransform {
  Matrix rotation;     // d x d, orthogonal
  Vector translation;  // d

  Index dim() const { return rotation.rows(); }
  RigidTransform inverse() const;
};

struct ShearTransform {
  Matrix matrix;  // d x d, invertible and not orthogonal

  Index dim() const { return matrix.rows(); }
};

// Unscaled distance matrices. Entries are computed one pair at a time so the
// diagonal of a pairwise matrix is exactly zero and symmetry is exact.
Matrix pairwise_distances(const Matrix& points, Metric metric);
Matrix cross_distances(const Matrix& a, const Matrix& b, Metric metric);

// Factor the scaling mode divides by. Degenerate (all-zero) matrices get 1.
double scale_factor(const Matrix& unscaled, Scaling scaling);

CostMatrix pairwise_cost(const PointCloud& cloud, Metric metric, Scaling scaling);
CostMatrix cross_cost(const PointCloud& a, const PointCloud& b, Metric metric,
                      Scaling scaling);

// Given dL/d(values) for values = unscaled / scale_factor(unscaled), returns
// dL/d(unscaled), including the dependence of the scale factor on the matrix.
Matrix scaling_backward(const Matrix& unscaled, Scaling scaling,
                        const Matrix& grad_values);

// Reverse-mode through the distance computations: dL/dD -> dL/dpoints.
// Pairs at distance zero contribute no gradient under the Euclidean metric.
Matrix pairwise_distances_backward(const Matrix& points, const Matrix& dist,
                                   const Matrix& grad_dist, Metric metric);
std::pair<Matrix, Matrix> cross_distances_backward(const Matrix& a,
                                                   const Matrix& b,
                                                   const Matrix& dist,
                                                   const Matrix& grad_dist,
                                                   Metric metric);

PointCloud apply_rigid(const PointCloud& cloud, const RigidTransform& xf);
PointCloud apply_linear(const PointCloud& cloud, const ShearTransform& xf);

void validate(const RigidTransform& xf, double tol = 1e-10);
void validate(const ShearTransform& xf);

// Haar-distributed rotation (det +1) from a seeded Gaussian matrix, zero
// translation.
RigidTransform random_rotation(Index d, std::uint64_t seed);

// Rotation as above plus a Gaussian translation of the given scale.
RigidTransform random_rigid(Index d, std::uint64_t seed, double translation_scale);

// Identity with a single off-diagonal entry equal to `magnitude`; the slot is
// chosen from the seed. With `anisotropic`, the diagonal is additionally drawn
// from [0.5, 1.5].
ShearTransform random_shear(Index d, double magnitude, std::uint64_t seed,
                            bool anisotropic = false);

}  // namespace gmot
