#pragma once

#include <functional>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "gmot/geometry.hpp"

namespace gmot::oracle {

// Brute-force references for tiny instances (n <= kMaxOracleSize).
inline constexpr Index kMaxOracleSize = 8;

using Permutation = std::vector<Index>;

struct GmOracleResult {
  Permutation best_permutation;
  double best_distortion_sq = 0.0;
  // One entry per permutation in lexicographic order, when requested.
  std::optional<std::vector<double>> all_distortions;
};

// (1/n^2) sum_ij (cx_ij - cy_{s(i) s(j)})^2
double permutation_distortion(const Matrix& cx, const Matrix& cy, const Permutation& sigma);

// Exact discrete Gromov-Monge between uniform measures of equal size: the
// minimum distortion over all bijections. Ties keep the lexicographically
// smallest permutation.
GmOracleResult brute_force_gm(const Matrix& cx, const Matrix& cy, bool keep_all = false);

// Exact OT between uniform measures of equal size: min over permutations of
// (1/n) sum_i C_{i s(i)} (the extreme points of the Birkhoff polytope).
struct OtOracleResult {
  Permutation best_permutation;
  double cost = 0.0;
};
OtOracleResult brute_force_ot(const Matrix& cost);

// Plan with mass 1/n on (i, sigma(i)).
Matrix permutation_plan(const Permutation& sigma);

// Direct O(n^2 m^2) evaluation of sum_ijkl (cx_ik - cy_jl)^2 plan_ij plan_kl.
double gw_cost_naive(const Matrix& cx, const Matrix& cy, const Matrix& plan);

// Central differences of `loss` at `params`. With `coords`, only those
// coordinates are differenced and the rest of the result is zero.
Vector finite_diff(const std::function<double(const Vector&)>& loss, const Vector& params,
                   double step = 1e-5, const std::vector<Index>& coords = {});

// max_k |analytic_k - numeric_k| / max(|numeric|_inf, floor)
double relative_error(const Vector& analytic, const Vector& numeric, double floor = 1e-12);

struct InvarianceReport {
  double gm_source_target = 0.0;     // GM(X, Y)
  double gm_reference_target = 0.0;  // GM(Z, Y), Z = rigid(X)
  Permutation best_source_target;
  Permutation best_reference_target;
  double residual = 0.0;
  bool pass = false;
};

// GM is invariant when the source is replaced by an isomorphic copy.
InvarianceReport check_isomorphism_invariance(const PointCloud& source,
                                              const RigidTransform& rigid,
                                              const PointCloud& target, double tol = 1e-9);

struct DecompositionReport {
  double direct_optimum = 0.0;        // GM(X, Y)
  double composed_distortion = 0.0;   // distortion of (Z->Y optimum) o (X->Z rigid)
  Permutation composed_permutation;
  double residual = 0.0;
  bool pass = false;
};

// Composing the rigid correspondence X -> Z with an optimal bijection Z -> Y
// attains the direct X -> Y optimum.
DecompositionReport check_decomposition(const PointCloud& source, const RigidTransform& rigid,
                                        const PointCloud& target, double tol = 1e-9);

enum class TargetKind { random, sheared, isomorphic };

std::string_view to_string(TargetKind k);
TargetKind parse_target_kind(std::string_view name);

struct TripodInstance {
  std::uint64_t seed = 0;
  PointCloud source;
  RigidTransform rigid;
  PointCloud target;
};

// Gaussian source clouds in R^3 with a random rigid reference. Targets are
// independent Gaussian clouds, a sheared copy of the reference, or the
// reference itself. Instance k uses seed base_seed + k.
std::vector<TripodInstance> seeded_instances(std::uint64_t base_seed, Index n, int count,
                                             TargetKind kind);

}  // namespace gmot::oracle
