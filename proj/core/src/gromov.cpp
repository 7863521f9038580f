#include "gmot/ot.hpp"

#include <sstream>

namespace gmot::ot {

namespace {

void require_square(const Matrix& c, Index n, const char* what) {
  if (c.rows() != c.cols() || c.rows() != n) {
    std::ostringstream os;
    os << what << " is " << c.rows() << "x" << c.cols() << ", expected " << n << "x" << n;
    throw SizeError(os.str());
  }
}

// Mapped-side cost and the distortion's gradient with respect to it.
struct MappedCost {
  Matrix dist;    // unscaled
  Matrix values;  // dist / s
  double distortion = 0.0;
  Matrix grad_values;  // d distortion / d values
};

MappedCost mapped_cost(const Matrix& cx, const PointCloud& mapped, Metric metric,
                       Scaling scaling) {
  mapped.validate();
  require_square(cx, mapped.size(), "source cost matrix");
  MappedCost mc;
  mc.dist = pairwise_distances(mapped.points, metric);
  mc.values = mc.dist / scale_factor(mc.dist, scaling);
  const Matrix diff = cx - mc.values;
  const Vector& w = mapped.weights;
  const Matrix ww = w * w.transpose();
  mc.distortion = ww.cwiseProduct(diff.cwiseProduct(diff)).sum();
  mc.grad_values = -2.0 * ww.cwiseProduct(diff);
  return mc;
}

}  // namespace

double gw_cost(const Matrix& cx, const Matrix& cy, const Matrix& plan) {
  if (plan.rows() != cx.rows() || plan.cols() != cy.rows()) {
    throw SizeError("gw_cost: plan shape does not match the cost matrices");
  }
  const Vector p = plan.rowwise().sum();
  const Vector q = plan.colwise().sum().transpose();
  const double sx = p.dot(cx.cwiseProduct(cx) * p);
  const double sy = q.dot(cy.cwiseProduct(cy) * q);
  const Matrix cross = cx * plan * cy.transpose();
  return sx + sy - 2.0 * plan.cwiseProduct(cross).sum();
}

Matrix gw_pseudo_cost(const Matrix& cx, const Matrix& cy, const Vector& a, const Vector& b,
                      const Matrix& plan) {
  const Vector cx2a = cx.cwiseProduct(cx) * a;
  const Vector cy2b = cy.cwiseProduct(cy) * b;
  Matrix l = -2.0 * (cx * plan * cy.transpose());
  l.colwise() += cx2a;
  l.rowwise() += cy2b.transpose();
  return l;
}

Matrix gw_cost_grad_target(const Matrix& cx, const Matrix& cy, const Matrix& plan) {
  const Vector q = plan.colwise().sum().transpose();
  Matrix g = 2.0 * (q * q.transpose()).cwiseProduct(cy);
  g.noalias() -= 2.0 * (plan.transpose() * cx * plan);
  return g;
}

GwResult entropic_gw(const Matrix& cx, const Matrix& cy, const Vector& a, const Vector& b,
                     const GwOptions& opts) {
  if (!(opts.epsilon > 0.0)) throw InvalidInput("entropic_gw: epsilon must be positive");
  require_square(cx, a.size(), "entropic_gw: source cost");
  require_square(cy, b.size(), "entropic_gw: target cost");
  if (!cx.allFinite() || !cy.allFinite()) throw InvalidInput("entropic_gw: non-finite cost");

  SinkhornOptions inner = opts.inner;
  inner.epsilon = opts.epsilon;

  GwResult res;
  Matrix plan = a * b.transpose();
  res.coupling.plan = plan;
  res.coupling.f = Vector::Zero(a.size());
  res.coupling.g = Vector::Zero(b.size());
  res.coupling.epsilon = opts.epsilon;
  res.coupling.converged = true;

  for (int it = 0; it < opts.outer_iter; ++it) {
    const Matrix l = gw_pseudo_cost(cx, cy, a, b, plan);
    if (opts.warm_start && it > 0) {
      inner.init_f = res.coupling.f;
      inner.init_g = res.coupling.g;
      inner.scaling_decay = 0.0;
    }
    SinkhornResult sr = sinkhorn(l, a, b, inner);
    res.inner_iterations += sr.coupling.iterations_used;
    ++res.outer_iterations;
    const double change = (sr.coupling.plan - plan).cwiseAbs().maxCoeff();
    plan = sr.coupling.plan;
    res.coupling = std::move(sr.coupling);
    if (change < opts.tol) {
      res.converged = res.coupling.converged;
      break;
    }
  }
  res.cost = gw_cost(cx, cy, plan);
  return res;
}

DistortionResult distortion_p2(const Matrix& cx, const PointCloud& mapped, Metric metric,
                               Scaling scaling) {
  const MappedCost mc = mapped_cost(cx, mapped, metric, scaling);
  const Matrix grad_dist = scaling_backward(mc.dist, scaling, mc.grad_values);
  return {mc.distortion,
          pairwise_distances_backward(mapped.points, mc.dist, grad_dist, metric)};
}

GmGapResult gm_gap(const PointCloud& source, const PointCloud& mapped, Metric metric,
                   Scaling scaling, const GwOptions& opts) {
  source.validate();
  if (source.size() != mapped.size()) {
    std::ostringstream os;
    os << "gm_gap: source has " << source.size() << " points but mapped has "
       << mapped.size();
    throw SizeError(os.str());
  }
  const Matrix cx = pairwise_cost(source, metric, scaling).values;
  const MappedCost mc = mapped_cost(cx, mapped, metric, scaling);

  GmGapResult res;
  res.distortion = mc.distortion;
  res.gw = entropic_gw(cx, mc.values, source.weights, mapped.weights, opts);
  res.gap = res.distortion - res.gw.cost;

  Matrix g = mc.grad_values - gw_cost_grad_target(cx, mc.values, res.gw.coupling.plan);
  const Matrix grad_dist = scaling_backward(mc.dist, scaling, g);
  res.grad_mapped = pairwise_distances_backward(mapped.points, mc.dist, grad_dist, metric);
  return res;
}

}  // namespace gmot::ot
