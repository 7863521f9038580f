#include "gmot/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <tuple>

namespace gmot::ot {

namespace {

using Array = Eigen::ArrayXd;

constexpr double kAbsorbThreshold = 230.0;  // |log scaling| beyond ~1e100
constexpr double kKernelFloor = 1e-200;

struct Problem {
  const Matrix& cost;  // n x m
  Matrix cost_t;       // m x n, columns are rows of `cost`
  Array log_a;
  Array log_b;
};

struct StageOutcome {
  int iterations = 0;
  bool converged = false;
};

double log_sum_exp(const Array& t) {
  const double mx = t.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  // Clamp so that negligible terms stay out of the subnormal range.
  return mx + std::log((t - mx).max(-700.0).exp().sum());
}

// f_i = -eps log sum_j b_j exp((g_j - C_ij) / eps)
void update_f(const Problem& p, const Vector& g, double eps, Vector& f, Array& buf) {
  const double inv = 1.0 / eps;
  const Index n = p.cost.rows();
  for (Index i = 0; i < n; ++i) {
    buf = p.log_b + (g.array() - p.cost_t.col(i).array()) * inv;
    f(i) = -eps * log_sum_exp(buf);
  }
}

// g_j = -eps log sum_i a_i exp((f_i - C_ij) / eps)
void update_g(const Problem& p, const Vector& f, double eps, Vector& g, Array& buf) {
  const double inv = 1.0 / eps;
  const Index m = p.cost.cols();
  for (Index j = 0; j < m; ++j) {
    buf = p.log_a + (f.array() - p.cost.col(j).array()) * inv;
    g(j) = -eps * log_sum_exp(buf);
  }
}

// Largest row-marginal violation of (f, g) given f_next = update_f(g).
double row_violation(const Problem& p, const Vector& f, const Vector& f_next, double eps) {
  const Array ratio = ((f - f_next).array() / eps).exp();
  return (p.log_a.exp() * (ratio - 1.0).abs()).maxCoeff();
}

StageOutcome run_log_domain(const Problem& p, double eps, int max_iter, double tol, Vector& f,
                            Vector& g) {
  Array buf_n(p.cost.rows());
  Array buf_m(p.cost.cols());
  Vector f_next(f.size());
  StageOutcome out;
  for (int it = 0; it < max_iter; ++it) {
    update_g(p, f, eps, g, buf_n);
    update_f(p, g, eps, f_next, buf_m);
    ++out.iterations;
    const double err = row_violation(p, f, f_next, eps);
    if (err < tol) {
      out.converged = true;
      return out;
    }
    f.swap(f_next);
  }
  return out;
}

Matrix build_kernel(const Problem& p, const Vector& f, const Vector& g, double eps) {
  const double inv = 1.0 / eps;
  const Index n = p.cost.rows();
  const Index m = p.cost.cols();
  Matrix k(n, m);
  const Array row = p.log_a + f.array() * inv;
  for (Index j = 0; j < m; ++j) {
    const double col = p.log_b(j) + g(j) * inv;
    k.col(j).array() = (row + col - p.cost.col(j).array() * inv).exp();
  }
  // Entries this small never affect a marginal but would make every later
  // product subnormal.
  k = (k.array() < kKernelFloor).select(0.0, k);
  return k;
}

// Kernel iterations on diag(u) K diag(v) with K built from absorbed potentials.
StageOutcome run_stabilized(const Problem& p, double eps, int max_iter, double tol, Vector& f,
                            Vector& g) {
  Array buf_n(p.cost.rows());
  Array buf_m(p.cost.cols());
  const Array a = p.log_a.exp();
  const Array b = p.log_b.exp();
  StageOutcome out;

  // One log-domain sweep so that every row and column of K carries mass.
  update_g(p, f, eps, g, buf_n);
  update_f(p, g, eps, f, buf_m);
  update_g(p, f, eps, g, buf_n);
  ++out.iterations;

  Matrix k = build_kernel(p, f, g, eps);
  Array u = Array::Ones(f.size());
  Array v = Array::Ones(g.size());
  Vector kv(f.size());
  Vector ktu(g.size());

  auto absorb = [&]() {
    f.array() += eps * u.log();
    g.array() += eps * v.log();
    u.setOnes();
    v.setOnes();
  };

  while (out.iterations < max_iter) {
    kv.noalias() = k * v.matrix();
    const double err = (u * kv.array() - a).abs().maxCoeff();
    if (err < tol) {
      out.converged = true;
      break;
    }
    const bool row_underflow = (kv.array() <= 0.0).any();
    if (!row_underflow) {
      u = a / kv.array();
      ktu.noalias() = k.transpose() * u.matrix();
    }
    if (row_underflow || (ktu.array() <= 0.0).any()) {
      // Some kernel row or column vanished: fall back to a log-domain sweep.
      absorb();
      update_f(p, g, eps, f, buf_m);
      update_g(p, f, eps, g, buf_n);
      k = build_kernel(p, f, g, eps);
      ++out.iterations;
      continue;
    }
    v = b / ktu.array();
    ++out.iterations;
    const double spread = std::max(u.log().abs().maxCoeff(), v.log().abs().maxCoeff());
    if (!(spread < kAbsorbThreshold)) {
      absorb();
      k = build_kernel(p, f, g, eps);
    }
  }
  absorb();
  return out;
}

StageOutcome run_stage(const Problem& p, SinkhornMethod method, double eps, int max_iter,
                       double tol, Vector& f, Vector& g) {
  if (method == SinkhornMethod::stabilized) return run_stabilized(p, eps, max_iter, tol, f, g);
  return run_log_domain(p, eps, max_iter, tol, f, g);
}

void check_inputs(const Matrix& cost, const Vector& a, const Vector& b,
                  const SinkhornOptions& opts) {
  if (!(opts.epsilon > 0.0)) throw InvalidInput("sinkhorn: epsilon must be positive");
  if (cost.rows() != a.size() || cost.cols() != b.size()) {
    std::ostringstream os;
    os << "sinkhorn: cost is " << cost.rows() << "x" << cost.cols() << " but weights are "
       << a.size() << " and " << b.size();
    throw SizeError(os.str());
  }
  if (cost.size() == 0) throw InvalidInput("sinkhorn: empty problem");
  if (!cost.allFinite()) throw InvalidInput("sinkhorn: non-finite cost");
  if ((a.array() <= 0.0).any() || (b.array() <= 0.0).any()) {
    throw InvalidInput("sinkhorn: weights must be positive");
  }
  if (std::abs(a.sum() - 1.0) > 1e-9 || std::abs(b.sum() - 1.0) > 1e-9) {
    throw InvalidInput("sinkhorn: weights must sum to one");
  }
}

}  // namespace

SinkhornResult sinkhorn(const Matrix& cost, const Vector& a, const Vector& b,
                        const SinkhornOptions& opts) {
  check_inputs(cost, a, b, opts);
  const Index n = cost.rows();
  const Index m = cost.cols();
  Problem p{cost, cost.transpose(), a.array().log(), b.array().log()};

  Vector f = opts.init_f && opts.init_f->size() == n ? *opts.init_f : Vector::Zero(n);
  Vector g = opts.init_g && opts.init_g->size() == m ? *opts.init_g : Vector::Zero(m);
  const double eps = opts.epsilon;

  int used = 0;
  if (opts.scaling_decay > 0.0 && opts.scaling_decay < 1.0) {
    double stage_eps = std::max(cost.cwiseAbs().maxCoeff(), eps);
    while (stage_eps > eps) {
      used += run_stage(p, opts.method, stage_eps, opts.scaling_iters, opts.tol, f, g).iterations;
      stage_eps *= opts.scaling_decay;
    }
  }
  const int budget = std::max(opts.max_iter - used, 1);
  const StageOutcome last = run_stage(p, opts.method, eps, budget, opts.tol, f, g);
  used += last.iterations;

  SinkhornResult res;
  Coupling& c = res.coupling;
  c.plan.resize(n, m);
  const double inv = 1.0 / eps;
  const Array row = p.log_a + f.array() * inv;
  for (Index j = 0; j < m; ++j) {
    c.plan.col(j).array() = (row + p.log_b(j) + g(j) * inv - cost.col(j).array() * inv).exp();
  }
  const double row_err = (c.plan.rowwise().sum() - a).cwiseAbs().maxCoeff();
  const double col_err = (c.plan.colwise().sum().transpose() - b).cwiseAbs().maxCoeff();
  c.marginal_error = std::max(row_err, col_err);
  c.converged = last.converged && c.marginal_error < opts.tol && c.plan.allFinite();
  c.iterations_used = used;
  c.epsilon = eps;
  res.cost = c.plan.cwiseProduct(cost).sum();
  res.regularized_cost = f.dot(a) + g.dot(b) - eps * (c.plan.sum() - 1.0);
  c.f = std::move(f);
  c.g = std::move(g);
  return res;
}

SinkhornResult symmetric_sinkhorn(const Matrix& cost, const Vector& a,
                                  const SinkhornOptions& opts) {
  check_inputs(cost, a, a, opts);
  if (cost.rows() != cost.cols()) throw SizeError("symmetric_sinkhorn: cost must be square");
  const Index n = cost.rows();
  const Array log_a = a.array().log();
  const double eps = opts.epsilon;
  Vector f = opts.init_f && opts.init_f->size() == n ? *opts.init_f : Vector::Zero(n);
  Vector tf(n);
  Array buf(n);

  // tf_i = -e log sum_j a_j exp((f_j - C_ij) / e); C is symmetric so column i is row i.
  auto apply_t = [&](double e) {
    const double inv = 1.0 / e;
    for (Index i = 0; i < n; ++i) {
      buf = log_a + (f.array() - cost.col(i).array()) * inv;
      tf(i) = -e * log_sum_exp(buf);
    }
  };
  auto run = [&](double e, int max_iter) {
    StageOutcome out;
    for (int it = 0; it < max_iter; ++it) {
      apply_t(e);
      ++out.iterations;
      const double err = (a.array() * (((f - tf).array() / e).exp() - 1.0).abs()).maxCoeff();
      if (err < opts.tol) {
        out.converged = true;
        return out;
      }
      f = 0.5 * (f + tf);
    }
    return out;
  };

  int used = 0;
  if (opts.scaling_decay > 0.0 && opts.scaling_decay < 1.0) {
    double stage_eps = std::max(cost.cwiseAbs().maxCoeff(), eps);
    while (stage_eps > eps) {
      used += run(stage_eps, opts.scaling_iters).iterations;
      stage_eps *= opts.scaling_decay;
    }
  }
  const StageOutcome last = run(eps, std::max(opts.max_iter - used, 1));
  used += last.iterations;

  SinkhornResult res;
  Coupling& c = res.coupling;
  c.plan.resize(n, n);
  const double inv = 1.0 / eps;
  const Array row = log_a + f.array() * inv;
  for (Index j = 0; j < n; ++j) {
    c.plan.col(j).array() = (row + row(j) - cost.col(j).array() * inv).exp();
  }
  const double row_err = (c.plan.rowwise().sum() - a).cwiseAbs().maxCoeff();
  const double col_err = (c.plan.colwise().sum().transpose() - a).cwiseAbs().maxCoeff();
  c.marginal_error = std::max(row_err, col_err);
  c.converged = last.converged && c.marginal_error < opts.tol && c.plan.allFinite();
  c.iterations_used = used;
  c.epsilon = eps;
  res.cost = c.plan.cwiseProduct(cost).sum();
  res.regularized_cost = 2.0 * f.dot(a) - eps * (c.plan.sum() - 1.0);
  c.g = f;
  c.f = std::move(f);
  return res;
}

OtResult entropic_ot(const PointCloud& source, const PointCloud& target, Metric metric,
                     Scaling scaling, const SinkhornOptions& opts) {
  source.validate();
  target.validate();
  const Matrix dist = cross_distances(source.points, target.points, metric);
  const double s = scale_factor(dist, scaling);
  SinkhornResult sr = sinkhorn(dist / s, source.weights, target.weights, opts);

  OtResult res;
  res.cost = sr.cost;
  res.regularized_cost = sr.regularized_cost;
  const Matrix grad_dist = scaling_backward(dist, scaling, sr.coupling.plan);
  std::tie(res.grad_source, res.grad_target) =
      cross_distances_backward(source.points, target.points, dist, grad_dist, metric);
  res.coupling = std::move(sr.coupling);
  return res;
}

DivergenceResult sinkhorn_divergence(const PointCloud& source, const PointCloud& target,
                                     Metric metric, Scaling scaling,
                                     const SinkhornOptions& opts) {
  source.validate();
  target.validate();
  const bool same = source.points == target.points && source.weights == target.weights;
  const Matrix d_aa = pairwise_distances(source.points, metric);
  const Matrix d_bb = same ? d_aa : pairwise_distances(target.points, metric);
  const Matrix d_ab = same ? d_aa : cross_distances(source.points, target.points, metric);
  const double s = scale_factor(d_ab, scaling);

  SinkhornOptions self_opts = opts;
  self_opts.init_f.reset();
  self_opts.init_g.reset();
  const SinkhornResult aa = symmetric_sinkhorn(d_aa / s, source.weights, self_opts);
  const SinkhornResult bb = same ? aa : symmetric_sinkhorn(d_bb / s, target.weights, self_opts);
  const SinkhornResult ab = same ? aa : sinkhorn(d_ab / s, source.weights, target.weights, opts);

  DivergenceResult res;
  res.cross = ab.regularized_cost;
  res.self_source = aa.regularized_cost;
  res.self_target = bb.regularized_cost;
  res.value = res.cross - 0.5 * res.self_source - 0.5 * res.self_target;
  res.scale_factor = s;
  res.converged = ab.coupling.converged && aa.coupling.converged && bb.coupling.converged;

  // Envelope rule: d OT_eps / d C = plan. Chain through C = D / s(D_ab).
  Matrix g_ab = ab.coupling.plan / s;
  const Matrix g_aa = -0.5 * aa.coupling.plan / s;
  const Matrix g_bb = -0.5 * bb.coupling.plan / s;
  const double raw = scaling == Scaling::mean   ? d_ab.mean()
                     : scaling == Scaling::max  ? d_ab.maxCoeff()
                                                : 0.0;
  if (scaling != Scaling::none && raw > 0.0) {
    const double dl_ds = -(ab.cost - 0.5 * aa.cost - 0.5 * bb.cost) / s;
    if (scaling == Scaling::mean) {
      g_ab.array() += dl_ds / static_cast<double>(d_ab.size());
    } else {
      Index r = 0;
      Index c = 0;
      d_ab.maxCoeff(&r, &c);
      g_ab(r, c) += dl_ds;
    }
  }
  auto [ga, gb] = cross_distances_backward(source.points, target.points, d_ab, g_ab, metric);
  ga += pairwise_distances_backward(source.points, d_aa, g_aa, metric);
  gb += pairwise_distances_backward(target.points, d_bb, g_bb, metric);
  res.grad_source = std::move(ga);
  res.grad_target = std::move(gb);
  return res;
}

}  // namespace gmot::ot
