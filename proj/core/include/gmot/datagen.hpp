#pragma once

#include <cstdint>
#include <string_view>

#include "gmot/geometry.hpp"

namespace gmot {

enum class Shape { s_curve, spiral, gaussian_mixture };

std::string_view to_string(Shape s);
Shape parse_shape(std::string_view name);

// Seeded 3D sample clouds with uniform weights. `noise` is the standard
// deviation of isotropic Gaussian jitter added to every point.
PointCloud make_shape(Shape shape, Index n, double noise, std::uint64_t seed);

struct TripodSpec {
  Shape shape = Shape::s_curve;
  Index n_total = 2048;
  Index n_holdout = 1024;
  double noise = 0.0;
  std::uint64_t data_seed = 0;
  std::uint64_t rigid_seed = 1;
  double translation_scale = 1.0;
  std::uint64_t shear_seed = 2;
  double shear_magnitude = 0.8;
  bool anisotropic_shear = false;
};

// Source X, reference Z = R X + t and target Y = A Z, row-aligned, plus a
// held-out split drawn from the same generator.
struct Tripod {
  PointCloud source;
  PointCloud reference;
  PointCloud target;
  PointCloud source_holdout;
  PointCloud reference_holdout;
  PointCloud target_holdout;
  RigidTransform rigid;
  ShearTransform shear;
};

Tripod make_tripod(const TripodSpec& spec);

}  // namespace gmot
