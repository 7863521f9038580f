#pragma once

#include <optional>

#include "gmot/geometry.hpp"

namespace gmot::ot {

// How the Sinkhorn fixed point is iterated. Both variants keep the dual
// potentials in the log domain; `stabilized` runs the inner updates as
// kernel matrix-vector products and absorbs the scalings back into the
// potentials whenever they grow, which avoids an exp() per entry per sweep.
enum class SinkhornMethod { log_domain, stabilized };

struct SinkhornOptions {
  double epsilon = 1e-2;
  int max_iter = 2000;
  // Converged when the largest absolute marginal violation drops below tol.
  double tol = 1e-6;
  SinkhornMethod method = SinkhornMethod::log_domain;
  // Epsilon annealing: start at max(C) and shrink geometrically by
  // `scaling_decay` down to `epsilon`, running at most `scaling_iters` sweeps
  // per intermediate stage. Disabled when scaling_decay <= 0.
  double scaling_decay = 0.0;
  int scaling_iters = 20;
  // Warm start for the potentials (same convention as Coupling::f/g).
  std::optional<Vector> init_f;
  std::optional<Vector> init_g;
};

// plan_ij = a_i b_j exp((f_i + g_j - C_ij) / epsilon)
struct Coupling {
  Matrix plan;
  Vector f;
  Vector g;
  double epsilon = 0.0;
  int iterations_used = 0;
  bool converged = false;
  double marginal_error = 0.0;
};

struct SinkhornResult {
  double cost = 0.0;              // <C, plan>
  double regularized_cost = 0.0;  // <C, plan> + eps KL(plan | a b^T), via the dual
  Coupling coupling;
};

// Result of an entropic OT problem between two point clouds. The gradients
// are taken at the fixed plan, i.e. they are exact for regularized_cost.
struct OtResult {
  double cost = 0.0;
  double regularized_cost = 0.0;
  Coupling coupling;
  Matrix grad_source;
  Matrix grad_target;
};

struct DivergenceResult {
  double value = 0.0;
  double cross = 0.0;        // OT_eps(a, b)
  double self_source = 0.0;  // OT_eps(a, a)
  double self_target = 0.0;  // OT_eps(b, b)
  double scale_factor = 1.0;
  bool converged = true;
  Matrix grad_source;
  Matrix grad_target;
};

SinkhornResult sinkhorn(const Matrix& cost, const Vector& a, const Vector& b,
                        const SinkhornOptions& opts);

// OT_eps(a, a) for a symmetric cost with the averaged update
// f <- (f + T(f)) / 2, which does not oscillate the way alternating updates
// do on self-transport problems. Always runs in the log domain; the returned
// coupling has f == g.
SinkhornResult symmetric_sinkhorn(const Matrix& cost, const Vector& a,
                                  const SinkhornOptions& opts);

// Entropic OT between clouds with the cross cost built from `metric` and
// `scaling`. Gradients include the dependence of the scale factor.
OtResult entropic_ot(const PointCloud& source, const PointCloud& target, Metric metric,
                     Scaling scaling, const SinkhornOptions& opts);

// Debiased divergence OT(a,b) - OT(a,a)/2 - OT(b,b)/2 using regularized costs.
// All three terms share the scale factor of the cross cost matrix.
DivergenceResult sinkhorn_divergence(const PointCloud& source, const PointCloud& target,
                                     Metric metric, Scaling scaling,
                                     const SinkhornOptions& opts);

struct GwOptions {
  double epsilon = 1e-3;
  int outer_iter = 100;
  // Converged when max |plan_new - plan_old| < tol.
  double tol = 1e-6;
  SinkhornOptions inner{};  // epsilon is overwritten by GwOptions::epsilon
  // Reuse the previous inner potentials at each outer step.
  bool warm_start = true;
};

struct GwResult {
  double cost = 0.0;  // quadratic distortion of the plan, entropy excluded
  Coupling coupling;
  int inner_iterations = 0;
  int outer_iterations = 0;
  bool converged = false;
};

// Entropic Gromov-Wasserstein with squared loss, solved by iterated
// linearization from the product coupling a b^T.
GwResult entropic_gw(const Matrix& cx, const Matrix& cy, const Vector& a, const Vector& b,
                     const GwOptions& opts);

// sum_ijkl (cx_ik - cy_jl)^2 plan_ij plan_kl via the factorized contraction,
// using the actual marginals of `plan`.
double gw_cost(const Matrix& cx, const Matrix& cy, const Matrix& plan);

// Linearized cost (cx.^2 a) 1^T + 1 (cy.^2 b)^T - 2 cx plan cy^T.
Matrix gw_pseudo_cost(const Matrix& cx, const Matrix& cy, const Vector& a, const Vector& b,
                      const Matrix& plan);

// d gw_cost / d cy at a fixed plan.
Matrix gw_cost_grad_target(const Matrix& cx, const Matrix& cy, const Matrix& plan);

struct DistortionResult {
  double value = 0.0;
  Matrix grad_mapped;  // n x d
};

// sum_ij w_i w_j (cx_ij - c(m_i, m_j))^2 where the mapped-side cost is built
// with `metric` and `scaling` (and the mapped cloud's weights w). With
// uniform weights this is the 1/n^2 average.
DistortionResult distortion_p2(const Matrix& cx, const PointCloud& mapped, Metric metric,
                               Scaling scaling);

struct GmGapResult {
  double gap = 0.0;  // distortion - gw.cost, not clamped
  double distortion = 0.0;
  GwResult gw;
  Matrix grad_mapped;  // gradient of gap, GW plan held fixed
};

// Empirical Gromov-Monge gap of the map source_i -> mapped_i. Both intra
// costs use `metric` and `scaling`; the source side is fixed.
GmGapResult gm_gap(const PointCloud& source, const PointCloud& mapped, Metric metric,
                   Scaling scaling, const GwOptions& opts);

}  // namespace gmot::ot
