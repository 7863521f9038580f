#include "gmot/datagen.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace gmot {

std::string_view to_string(Shape s) {
  switch (s) {
    case Shape::s_curve:
      return "s_curve";
    case Shape::spiral:
      return "spiral";
    case Shape::gaussian_mixture:
      return "gaussian_mixture";
  }
  return "?";
}

Shape parse_shape(std::string_view name) {
  if (name == "s_curve") return Shape::s_curve;
  if (name == "spiral") return Shape::spiral;
  if (name == "gaussian_mixture") return Shape::gaussian_mixture;
  throw InvalidInput("unknown shape '" + std::string(name) + "'");
}

PointCloud make_shape(Shape shape, Index n, double noise, std::uint64_t seed) {
  if (n < 1) throw InvalidInput("make_shape: n must be positive");
  if (noise < 0.0) throw InvalidInput("make_shape: noise must be nonnegative");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr double pi = std::numbers::pi;

  Matrix pts(n, 3);
  for (Index i = 0; i < n; ++i) {
    switch (shape) {
      case Shape::s_curve: {
        // Centered S-shaped sheet in [-1,1] x [-1,1] x [-2,2].
        const double t = 3.0 * pi * (unit(rng) - 0.5);
        const double h = 2.0 * unit(rng) - 1.0;
        pts(i, 0) = std::sin(t);
        pts(i, 1) = h;
        pts(i, 2) = (t >= 0.0 ? 1.0 : -1.0) * (std::cos(t) - 1.0);
        break;
      }
      case Shape::spiral: {
        const double t = 4.0 * pi * std::sqrt(unit(rng));
        const double r = 0.25 + t / (4.0 * pi);
        pts(i, 0) = r * std::cos(t);
        pts(i, 1) = r * std::sin(t);
        pts(i, 2) = 0.5 * (2.0 * unit(rng) - 1.0);
        break;
      }
      case Shape::gaussian_mixture: {
        static const double centers[3][3] = {{1.0, 0.0, 0.0}, {-0.5, 0.9, 0.0}, {-0.5, -0.9, 0.6}};
        const auto c = static_cast<int>(rng() % 3);
        for (int k = 0; k < 3; ++k) pts(i, k) = centers[c][k] + 0.3 * normal(rng);
        break;
      }
    }
    if (noise > 0.0) {
      for (int k = 0; k < 3; ++k) pts(i, k) += noise * normal(rng);
    }
  }
  return PointCloud::uniform(std::move(pts));
}

namespace {

PointCloud slice(const PointCloud& cloud, Index begin, Index count) {
  return PointCloud::uniform(cloud.points.middleRows(begin, count));
}

}  // namespace

Tripod make_tripod(const TripodSpec& spec) {
  if (spec.n_total < 1 || spec.n_holdout < 0) throw InvalidInput("make_tripod: bad sample counts");
  const PointCloud all = make_shape(spec.shape, spec.n_total + spec.n_holdout, spec.noise,
                                    spec.data_seed);
  Tripod t;
  t.rigid = random_rigid(3, spec.rigid_seed, spec.translation_scale);
  t.shear = random_shear(3, spec.shear_magnitude, spec.shear_seed, spec.anisotropic_shear);
  t.source = slice(all, 0, spec.n_total);
  t.reference = apply_rigid(t.source, t.rigid);
  t.target = apply_linear(t.reference, t.shear);
  if (spec.n_holdout > 0) {
    t.source_holdout = slice(all, spec.n_total, spec.n_holdout);
    t.reference_holdout = apply_rigid(t.source_holdout, t.rigid);
    t.target_holdout = apply_linear(t.reference_holdout, t.shear);
  }
  return t;
}

}  // namespace gmot
