#include "gmot/geometry.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace gmot {

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::euclidean:
      return "euclidean";
    case Metric::sq_euclidean:
      return "sq_euclidean";
  }
  return "?";
}

std::string_view to_string(Scaling s) {
  switch (s) {
    case Scaling::none:
      return "none";
    case Scaling::mean:
      return "mean";
    case Scaling::max:
      return "max";
  }
  return "?";
}

Metric parse_metric(std::string_view name) {
  if (name == "euclidean") return Metric::euclidean;
  if (name == "sq_euclidean") return Metric::sq_euclidean;
  throw InvalidInput("unknown metric '" + std::string(name) + "'");
}

Scaling parse_scaling(std::string_view name) {
  if (name == "none") return Scaling::none;
  if (name == "mean") return Scaling::mean;
  if (name == "max") return Scaling::max;
  throw InvalidInput("unknown scaling '" + std::string(name) + "'");
}

PointCloud PointCloud::uniform(Matrix points) {
  const Index n = points.rows();
  PointCloud cloud{std::move(points), Vector()};
  if (n > 0) cloud.weights = Vector::Constant(n, 1.0 / static_cast<double>(n));
  return cloud;
}

void PointCloud::validate() const {
  if (points.rows() < 1 || points.cols() < 1) {
    throw InvalidInput("point cloud must have n >= 1 and d >= 1");
  }
  if (weights.size() != points.rows()) {
    std::ostringstream os;
    os << "point cloud has " << points.rows() << " points but "
       << weights.size() << " weights";
    throw InvalidInput(os.str());
  }
  if (!points.allFinite()) throw InvalidInput("point cloud has non-finite coordinates");
  if ((weights.array() < 0.0).any()) throw InvalidInput("negative point weight");
  if (std::abs(weights.sum() - 1.0) > 1e-12) {
    throw InvalidInput("point weights do not sum to one");
  }
}

RigidTransform RigidTransform::inverse() const {
  Matrix rt = rotation.transpose();
  Vector t = -(rt * translation);
  return {std::move(rt), std::move(t)};
}

namespace {

double pair_distance(const Matrix& a, Index i, const Matrix& b, Index j, Metric metric) {
  double sq = 0.0;
  for (Index k = 0; k < a.cols(); ++k) {
    const double diff = a(i, k) - b(j, k);
    sq += diff * diff;
  }
  return metric == Metric::euclidean ? std::sqrt(sq) : sq;
}

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) {
    throw InvalidInput(std::string(what) + " contains non-finite coordinates");
  }
}

// Chain rule through d(p, q) for every pair, with weights W_ij = dL/dD_ij
// already folded into the per-metric Jacobian factor.
Matrix metric_weights(const Matrix& dist, const Matrix& grad_dist, Metric metric) {
  if (metric == Metric::sq_euclidean) return 2.0 * grad_dist;
  Matrix w(dist.rows(), dist.cols());
  for (Index j = 0; j < dist.cols(); ++j) {
    for (Index i = 0; i < dist.rows(); ++i) {
      const double d = dist(i, j);
      w(i, j) = d > 0.0 ? grad_dist(i, j) / d : 0.0;
    }
  }
  return w;
}

}  // namespace

Matrix pairwise_distances(const Matrix& points, Metric metric) {
  const Index n = points.rows();
  Matrix d = Matrix::Zero(n, n);
  for (Index j = 0; j < n; ++j) {
    for (Index i = j + 1; i < n; ++i) {
      const double v = pair_distance(points, i, points, j, metric);
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

Matrix cross_distances(const Matrix& a, const Matrix& b, Metric metric) {
  if (a.cols() != b.cols()) {
    std::ostringstream os;
    os << "cross cost dimension mismatch: " << a.cols() << " vs " << b.cols();
    throw SizeError(os.str());
  }
  Matrix d(a.rows(), b.rows());
  for (Index j = 0; j < b.rows(); ++j) {
    for (Index i = 0; i < a.rows(); ++i) d(i, j) = pair_distance(a, i, b, j, metric);
  }
  return d;
}

double scale_factor(const Matrix& unscaled, Scaling scaling) {
  double s = 1.0;
  switch (scaling) {
    case Scaling::none:
      return 1.0;
    case Scaling::mean:
      s = unscaled.mean();
      break;
    case Scaling::max:
      s = unscaled.maxCoeff();
      break;
  }
  return s > 0.0 ? s : 1.0;
}

CostMatrix pairwise_cost(const PointCloud& cloud, Metric metric, Scaling scaling) {
  require_finite(cloud.points, "point cloud");
  Matrix d = pairwise_distances(cloud.points, metric);
  const double s = scale_factor(d, scaling);
  if (s != 1.0) d /= s;
  return {std::move(d), metric, scaling, s};
}

CostMatrix cross_cost(const PointCloud& a, const PointCloud& b, Metric metric,
                      Scaling scaling) {
  require_finite(a.points, "first point cloud");
  require_finite(b.points, "second point cloud");
  Matrix d = cross_distances(a.points, b.points, metric);
  const double s = scale_factor(d, scaling);
  if (s != 1.0) d /= s;
  return {std::move(d), metric, scaling, s};
}

Matrix scaling_backward(const Matrix& unscaled, Scaling scaling, const Matrix& grad_values) {
  const double s = scale_factor(unscaled, scaling);
  if (scaling == Scaling::none) return grad_values;
  Matrix g = grad_values / s;
  // Degenerate matrices keep s = 1 as a constant.
  const double raw = scaling == Scaling::mean ? unscaled.mean() : unscaled.maxCoeff();
  if (!(raw > 0.0)) return g;
  // values = D / s(D)  =>  dL/ds = -<G, D> / s^2
  const double dl_ds = -grad_values.cwiseProduct(unscaled).sum() / (s * s);
  if (scaling == Scaling::mean) {
    g.array() += dl_ds / static_cast<double>(unscaled.size());
  } else {
    Index r = 0;
    Index c = 0;
    unscaled.maxCoeff(&r, &c);
    g(r, c) += dl_ds;
  }
  return g;
}

Matrix pairwise_distances_backward(const Matrix& points, const Matrix& dist,
                                   const Matrix& grad_dist, Metric metric) {
  const Matrix sym = grad_dist + grad_dist.transpose();
  const Matrix w = metric_weights(dist, sym, metric);
  // grad_k = sum_j w_kj (x_k - x_j)
  Matrix grad = w.rowwise().sum().asDiagonal() * points;
  grad.noalias() -= w * points;
  return grad;
}

std::pair<Matrix, Matrix> cross_distances_backward(const Matrix& a, const Matrix& b,
                                                   const Matrix& dist,
                                                   const Matrix& grad_dist,
                                                   Metric metric) {
  const Matrix w = metric_weights(dist, grad_dist, metric);
  Matrix ga = w.rowwise().sum().asDiagonal() * a;
  ga.noalias() -= w * b;
  Matrix gb = w.colwise().sum().transpose().asDiagonal() * b;
  gb.noalias() -= w.transpose() * a;
  return {std::move(ga), std::move(gb)};
}

namespace {

void require_dim(const PointCloud& cloud, Index d, const char* what) {
  if (cloud.dim() != d) {
    std::ostringstream os;
    os << what << " has dimension " << d << " but the cloud has dimension " << cloud.dim();
    throw SizeError(os.str());
  }
}

}  // namespace

PointCloud apply_rigid(const PointCloud& cloud, const RigidTransform& xf) {
  require_dim(cloud, xf.dim(), "rigid transform");
  if (xf.translation.size() != xf.dim()) throw SizeError("translation size mismatch");
  Matrix out = cloud.points * xf.rotation.transpose();
  out.rowwise() += xf.translation.transpose();
  return {std::move(out), cloud.weights};
}

PointCloud apply_linear(const PointCloud& cloud, const ShearTransform& xf) {
  require_dim(cloud, xf.dim(), "linear transform");
  return {cloud.points * xf.matrix.transpose(), cloud.weights};
}

void validate(const RigidTransform& xf, double tol) {
  const Index d = xf.rotation.rows();
  if (xf.rotation.cols() != d || xf.translation.size() != d) {
    throw SizeError("rigid transform has inconsistent dimensions");
  }
  const double ortho = (xf.rotation.transpose() * xf.rotation - Matrix::Identity(d, d))
                           .cwiseAbs()
                           .maxCoeff();
  if (ortho > tol) throw InvalidInput("rotation is not orthogonal");
  if (std::abs(std::abs(xf.rotation.determinant()) - 1.0) > tol) {
    throw InvalidInput("rotation determinant is not +-1");
  }
}

void validate(const ShearTransform& xf) {
  const Index d = xf.matrix.rows();
  if (xf.matrix.cols() != d) throw SizeError("shear matrix is not square");
  if (std::abs(xf.matrix.determinant()) <= 1e-8) throw InvalidInput("shear matrix is singular");
  const double dev = (xf.matrix.transpose() * xf.matrix - Matrix::Identity(d, d))
                         .cwiseAbs()
                         .maxCoeff();
  if (dev <= 1e-6) throw InvalidInput("shear matrix is orthogonal (rigid)");
}

RigidTransform random_rotation(Index d, std::uint64_t seed) {
  if (d < 2) throw InvalidInput("random rotation needs d >= 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix g(d, d);
  for (Index j = 0; j < d; ++j)
    for (Index i = 0; i < d; ++i) g(i, j) = normal(rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix& r = qr.matrixQR();
  for (Index k = 0; k < d; ++k) {
    if (r(k, k) < 0.0) q.col(k) *= -1.0;
  }
  if (q.determinant() < 0.0) q.col(0) *= -1.0;
  return {std::move(q), Vector::Zero(d)};
}

RigidTransform random_rigid(Index d, std::uint64_t seed, double translation_scale) {
  RigidTransform xf = random_rotation(d, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, translation_scale);
  for (Index k = 0; k < d; ++k) xf.translation(k) = normal(rng);
  return xf;
}

ShearTransform random_shear(Index d, double magnitude, std::uint64_t seed, bool anisotropic) {
  if (d < 2) throw InvalidInput("random shear needs d >= 2");
  if (!(magnitude > 0.0)) throw InvalidInput("shear magnitude must be positive");
  std::mt19937_64 rng(seed);
  Matrix a = Matrix::Identity(d, d);
  if (anisotropic) {
    std::uniform_real_distribution<double> diag(0.5, 1.5);
    for (Index k = 0; k < d; ++k) a(k, k) = diag(rng);
  }
  // Off-diagonal slot k in [0, d(d-1)): row k / (d-1), column skipping the diagonal.
  const auto slots = static_cast<std::uint64_t>(d * (d - 1));
  const auto k = static_cast<Index>(rng() % slots);
  const Index row = k / (d - 1);
  Index col = k % (d - 1);
  if (col >= row) ++col;
  a(row, col) = magnitude;
  return {std::move(a)};
}

}  // namespace gmot
