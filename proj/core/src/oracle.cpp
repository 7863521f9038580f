#include "gmot/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace gmot::oracle {

namespace {

void guard_size(Index n, const char* what) {
  if (n < 1) throw InvalidInput(std::string(what) + ": empty instance");
  if (n > kMaxOracleSize) {
    std::ostringstream os;
    os << what << ": n = " << n << " exceeds the brute-force limit of " << kMaxOracleSize;
    throw SizeError(os.str());
  }
}

Permutation identity(Index n) {
  Permutation p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), Index{0});
  return p;
}

}  // namespace

double permutation_distortion(const Matrix& cx, const Matrix& cy, const Permutation& sigma) {
  const Index n = cx.rows();
  double acc = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Index si = sigma[static_cast<std::size_t>(i)];
    for (Index j = 0; j < n; ++j) {
      const double d = cx(i, j) - cy(si, sigma[static_cast<std::size_t>(j)]);
      acc += d * d;
    }
  }
  return acc / static_cast<double>(n * n);
}

GmOracleResult brute_force_gm(const Matrix& cx, const Matrix& cy, bool keep_all) {
  const Index n = cx.rows();
  guard_size(n, "brute_force_gm");
  if (cx.cols() != n || cy.rows() != n || cy.cols() != n) {
    throw SizeError("brute_force_gm: cost matrices must be square and of equal size");
  }
  GmOracleResult res;
  if (keep_all) res.all_distortions.emplace();
  Permutation sigma = identity(n);
  res.best_distortion_sq = std::numeric_limits<double>::infinity();
  do {
    const double v = permutation_distortion(cx, cy, sigma);
    if (keep_all) res.all_distortions->push_back(v);
    if (v < res.best_distortion_sq) {
      res.best_distortion_sq = v;
      res.best_permutation = sigma;
    }
  } while (std::next_permutation(sigma.begin(), sigma.end()));
  return res;
}

OtOracleResult brute_force_ot(const Matrix& cost) {
  const Index n = cost.rows();
  guard_size(n, "brute_force_ot");
  if (cost.cols() != n) throw SizeError("brute_force_ot: cost must be square");
  OtOracleResult res;
  res.cost = std::numeric_limits<double>::infinity();
  Permutation sigma = identity(n);
  do {
    double v = 0.0;
    for (Index i = 0; i < n; ++i) v += cost(i, sigma[static_cast<std::size_t>(i)]);
    v /= static_cast<double>(n);
    if (v < res.cost) {
      res.cost = v;
      res.best_permutation = sigma;
    }
  } while (std::next_permutation(sigma.begin(), sigma.end()));
  return res;
}

Matrix permutation_plan(const Permutation& sigma) {
  const auto n = static_cast<Index>(sigma.size());
  Matrix plan = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) plan(i, sigma[static_cast<std::size_t>(i)]) = 1.0 / static_cast<double>(n);
  return plan;
}

double gw_cost_naive(const Matrix& cx, const Matrix& cy, const Matrix& plan) {
  const Index n = cx.rows();
  const Index m = cy.rows();
  if (cx.cols() != n || cy.cols() != m || plan.rows() != n || plan.cols() != m) {
    throw SizeError("gw_cost_naive: shape mismatch");
  }
  double acc = 0.0;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < m; ++j) {
      const double pij = plan(i, j);
      if (pij == 0.0) continue;
      for (Index k = 0; k < n; ++k)
        for (Index l = 0; l < m; ++l) {
          const double d = cx(i, k) - cy(j, l);
          acc += d * d * pij * plan(k, l);
        }
    }
  return acc;
}

Vector finite_diff(const std::function<double(const Vector&)>& loss, const Vector& params,
                   double step, const std::vector<Index>& coords) {
  Vector grad = Vector::Zero(params.size());
  Vector probe = params;
  auto diff_at = [&](Index k) {
    const double orig = probe(k);
    probe(k) = orig + step;
    const double up = loss(probe);
    probe(k) = orig - step;
    const double down = loss(probe);
    probe(k) = orig;
    grad(k) = (up - down) / (2.0 * step);
  };
  if (coords.empty()) {
    for (Index k = 0; k < params.size(); ++k) diff_at(k);
  } else {
    for (Index k : coords) diff_at(k);
  }
  return grad;
}

double relative_error(const Vector& analytic, const Vector& numeric, double floor) {
  const double scale = std::max(numeric.cwiseAbs().maxCoeff(), floor);
  return (analytic - numeric).cwiseAbs().maxCoeff() / scale;
}

InvarianceReport check_isomorphism_invariance(const PointCloud& source,
                                              const RigidTransform& rigid,
                                              const PointCloud& target, double tol) {
  guard_size(source.size(), "check_isomorphism_invariance");
  if (target.size() != source.size()) {
    throw SizeError("check_isomorphism_invariance: source and target sizes differ");
  }
  const PointCloud reference = apply_rigid(source, rigid);
  const Matrix cx = pairwise_distances(source.points, Metric::euclidean);
  const Matrix cz = pairwise_distances(reference.points, Metric::euclidean);
  const Matrix cy = pairwise_distances(target.points, Metric::euclidean);
  const GmOracleResult xy = brute_force_gm(cx, cy);
  const GmOracleResult zy = brute_force_gm(cz, cy);
  InvarianceReport r;
  r.gm_source_target = xy.best_distortion_sq;
  r.gm_reference_target = zy.best_distortion_sq;
  r.best_source_target = xy.best_permutation;
  r.best_reference_target = zy.best_permutation;
  r.residual = std::abs(r.gm_source_target - r.gm_reference_target);
  r.pass = r.residual <= tol;
  return r;
}

DecompositionReport check_decomposition(const PointCloud& source, const RigidTransform& rigid,
                                        const PointCloud& target, double tol) {
  guard_size(source.size(), "check_decomposition");
  if (target.size() != source.size()) {
    throw SizeError("check_decomposition: source and target sizes differ");
  }
  const PointCloud reference = apply_rigid(source, rigid);
  const Matrix cx = pairwise_distances(source.points, Metric::euclidean);
  const Matrix cz = pairwise_distances(reference.points, Metric::euclidean);
  const Matrix cy = pairwise_distances(target.points, Metric::euclidean);

  // The rigid map sends x_i to z_i, so composing with the optimal Z -> Y
  // bijection tau gives the X -> Y bijection i -> tau(i).
  const GmOracleResult zy = brute_force_gm(cz, cy);
  DecompositionReport r;
  r.composed_permutation = zy.best_permutation;
  r.composed_distortion = permutation_distortion(cx, cy, r.composed_permutation);
  r.direct_optimum = brute_force_gm(cx, cy).best_distortion_sq;
  r.residual = std::abs(r.composed_distortion - r.direct_optimum);
  r.pass = r.residual <= tol;
  return r;
}

std::string_view to_string(TargetKind k) {
  switch (k) {
    case TargetKind::random:
      return "random";
    case TargetKind::sheared:
      return "sheared";
    case TargetKind::isomorphic:
      return "isomorphic";
  }
  return "?";
}

TargetKind parse_target_kind(std::string_view name) {
  if (name == "random") return TargetKind::random;
  if (name == "sheared") return TargetKind::sheared;
  if (name == "isomorphic") return TargetKind::isomorphic;
  throw InvalidInput("unknown target kind '" + std::string(name) +
                     "' (expected random, sheared or isomorphic)");
}

std::vector<TripodInstance> seeded_instances(std::uint64_t base_seed, Index n, int count,
                                             TargetKind kind) {
  guard_size(n, "seeded_instances");
  if (count < 0) throw InvalidInput("seeded_instances: count must be nonnegative");
  std::vector<TripodInstance> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    TripodInstance inst;
    inst.seed = base_seed + static_cast<std::uint64_t>(k);
    std::mt19937_64 rng(inst.seed);
    std::normal_distribution<double> normal;
    auto cloud = [&] {
      Matrix p(n, 3);
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < 3; ++j) p(i, j) = normal(rng);
      return PointCloud::uniform(std::move(p));
    };
    inst.source = cloud();
    inst.rigid = random_rigid(3, rng(), 1.0);
    switch (kind) {
      case TargetKind::random:
        inst.target = cloud();
        break;
      case TargetKind::sheared:
        inst.target = apply_linear(apply_rigid(inst.source, inst.rigid), random_shear(3, 0.8, rng()));
        break;
      case TargetKind::isomorphic:
        inst.target = apply_rigid(inst.source, inst.rigid);
        break;
    }
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace gmot::oracle
