#include "gmot/geometry.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include <gtest/gtest.h>

#include "gmot/ot.hpp"
#include "gmot/oracle.hpp"
#include "support.hpp"

namespace gmot {
namespace {

using testing::gaussian_cloud;

PointCloud cloud_of(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix pts(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
  Index i = 0;
  for (const auto& r : rows) {
    Index k = 0;
    for (double v : r) pts(i, k++) = v;
    ++i;
  }
  return PointCloud::uniform(std::move(pts));
}

TEST(PointCloud, UniformWeightsSumToOne) {
  const PointCloud c = gaussian_cloud(7, 3, 1);
  EXPECT_NEAR(c.weights.sum(), 1.0, 1e-12);
  for (Index i = 0; i < c.size(); ++i) EXPECT_DOUBLE_EQ(c.weights(i), 1.0 / 7.0);
  EXPECT_NO_THROW(c.validate());
}

TEST(PointCloud, ValidateRejectsBadInput) {
  PointCloud c = gaussian_cloud(4, 2, 3);
  c.points(1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(c.validate(), InvalidInput);

  PointCloud w = gaussian_cloud(4, 2, 3);
  w.weights(0) = 0.5;
  EXPECT_THROW(w.validate(), InvalidInput);

  PointCloud empty;
  EXPECT_THROW(empty.validate(), InvalidInput);
}

TEST(PairwiseCost, CoincidentPointsGiveZeros) {
  const CostMatrix c = pairwise_cost(cloud_of({{1.0, 2.0}, {1.0, 2.0}}), Metric::euclidean,
                                     Scaling::max);
  EXPECT_EQ(c.values, Matrix::Zero(2, 2));
  EXPECT_EQ(c.scale_factor, 1.0);
}

TEST(PairwiseCost, ThreeFourFive) {
  const PointCloud p = cloud_of({{0.0, 0.0}, {3.0, 4.0}});
  const CostMatrix none = pairwise_cost(p, Metric::euclidean, Scaling::none);
  EXPECT_DOUBLE_EQ(none.values(0, 1), 5.0);
  EXPECT_DOUBLE_EQ(none.values(1, 0), 5.0);
  EXPECT_EQ(none.values(0, 0), 0.0);

  const CostMatrix mx = pairwise_cost(p, Metric::euclidean, Scaling::max);
  EXPECT_DOUBLE_EQ(mx.values(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(mx.scale_factor, 5.0);
  EXPECT_DOUBLE_EQ(mx.unscaled()(0, 1), 5.0);

  const CostMatrix sq = pairwise_cost(p, Metric::sq_euclidean, Scaling::none);
  EXPECT_DOUBLE_EQ(sq.values(0, 1), 25.0);
}

TEST(PairwiseCost, ScalingNormalizes) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const PointCloud p = gaussian_cloud(9, 3, seed);
    for (Metric m : {Metric::euclidean, Metric::sq_euclidean}) {
      const CostMatrix mean = pairwise_cost(p, m, Scaling::mean);
      const CostMatrix mx = pairwise_cost(p, m, Scaling::max);
      EXPECT_NEAR(mean.values.mean(), 1.0, 1e-9);
      EXPECT_NEAR(mx.values.maxCoeff(), 1.0, 1e-12);
      for (const CostMatrix* c : {&mean, &mx}) {
        EXPECT_TRUE(c->values.diagonal().isZero(0.0));
        EXPECT_LE((c->values - c->values.transpose()).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_GE(c->values.minCoeff(), 0.0);
      }
    }
  }
}

TEST(PairwiseCost, NonFiniteCoordinatesThrow) {
  PointCloud p = gaussian_cloud(3, 2, 0);
  p.points(2, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(pairwise_cost(p, Metric::euclidean, Scaling::none), InvalidInput);
}

TEST(CrossCost, HandArithmetic) {
  const PointCloud a = cloud_of({{0.0}, {1.0}});
  const PointCloud b = cloud_of({{2.0}});
  const CostMatrix c = cross_cost(a, b, Metric::sq_euclidean, Scaling::none);
  ASSERT_EQ(c.values.rows(), 2);
  ASSERT_EQ(c.values.cols(), 1);
  EXPECT_DOUBLE_EQ(c.values(0, 0), 4.0);
  EXPECT_DOUBLE_EQ(c.values(1, 0), 1.0);
}

TEST(CrossCost, IdenticalCloudsHaveZeroDiagonal) {
  const PointCloud a = gaussian_cloud(6, 3, 11);
  const CostMatrix c = cross_cost(a, a, Metric::sq_euclidean, Scaling::mean);
  EXPECT_TRUE(c.values.diagonal().isZero(0.0));
}

TEST(CrossCost, MatchesDoubleLoop) {
  const PointCloud a = gaussian_cloud(8, 3, 21);
  const PointCloud b = gaussian_cloud(8, 3, 22);
  for (Metric m : {Metric::euclidean, Metric::sq_euclidean}) {
    const Matrix got = cross_cost(a, b, m, Scaling::none).values;
    for (Index i = 0; i < 8; ++i) {
      for (Index j = 0; j < 8; ++j) {
        double s = 0.0;
        for (Index k = 0; k < 3; ++k) {
          const double diff = a.points(i, k) - b.points(j, k);
          s += diff * diff;
        }
        const double want = m == Metric::euclidean ? std::sqrt(s) : s;
        EXPECT_NEAR(got(i, j), want, 1e-14 * (1.0 + want));
      }
    }
  }
}

TEST(CrossCost, DimensionMismatchNamesBoth) {
  const PointCloud a = gaussian_cloud(3, 2, 0);
  const PointCloud b = gaussian_cloud(3, 5, 0);
  try {
    cross_cost(a, b, Metric::euclidean, Scaling::none);
    FAIL() << "expected SizeError";
  } catch (const SizeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find('2'), std::string::npos) << msg;
    EXPECT_NE(msg.find('5'), std::string::npos) << msg;
  }
}

TEST(Scaling, ArgminOfOffDiagonalIsInvariant) {
  for (std::uint64_t seed = 100; seed < 130; ++seed) {
    const PointCloud p = gaussian_cloud(10, 3, seed);
    auto argmin = [](const Matrix& c) {
      Index bi = 0, bj = 1;
      for (Index i = 0; i < c.rows(); ++i) {
        for (Index j = 0; j < c.cols(); ++j) {
          if (i != j && c(i, j) < c(bi, bj)) {
            bi = i;
            bj = j;
          }
        }
      }
      return std::pair{bi, bj};
    };
    const auto base = argmin(pairwise_cost(p, Metric::euclidean, Scaling::none).values);
    EXPECT_EQ(argmin(pairwise_cost(p, Metric::euclidean, Scaling::mean).values), base);
    EXPECT_EQ(argmin(pairwise_cost(p, Metric::euclidean, Scaling::max).values), base);
  }
}

TEST(Scaling, DegenerateMatrixKeepsUnitFactor) {
  EXPECT_EQ(scale_factor(Matrix::Zero(3, 3), Scaling::mean), 1.0);
  EXPECT_EQ(scale_factor(Matrix::Zero(3, 3), Scaling::max), 1.0);
  EXPECT_EQ(scale_factor(Matrix::Constant(3, 3, 7.0), Scaling::none), 1.0);
}

// Finite differences of L(P) = <W, scaled(D(P))> against the chained backward passes.
TEST(Backward, PairwiseDistancesThroughScaling) {
  const PointCloud p = gaussian_cloud(6, 3, 5);
  const Matrix w = testing::gaussian_matrix(6, 6, 6);
  for (Metric m : {Metric::euclidean, Metric::sq_euclidean}) {
    for (Scaling s : {Scaling::none, Scaling::mean, Scaling::max}) {
      auto loss = [&](const Vector& x) {
        const Matrix pts = testing::unflat(x, 6, 3);
        const Matrix d = pairwise_distances(pts, m);
        return (w.array() * (d / scale_factor(d, s)).array()).sum();
      };
      const Matrix d = pairwise_distances(p.points, m);
      const Matrix gd = scaling_backward(d, s, w);
      const Matrix g = pairwise_distances_backward(p.points, d, gd, m);
      const Vector num = oracle::finite_diff(loss, testing::flat(p.points));
      EXPECT_LE(oracle::relative_error(testing::flat(g), num), 1e-7)
          << to_string(m) << " " << to_string(s);
    }
  }
}

TEST(Backward, CrossDistances) {
  const PointCloud a = gaussian_cloud(5, 2, 8);
  const PointCloud b = gaussian_cloud(4, 2, 9);
  const Matrix w = testing::gaussian_matrix(5, 4, 10);
  for (Metric m : {Metric::euclidean, Metric::sq_euclidean}) {
    const Matrix d = cross_distances(a.points, b.points, m);
    const Matrix gd = scaling_backward(d, Scaling::mean, w);
    const auto [ga, gb] = cross_distances_backward(a.points, b.points, d, gd, m);
    auto loss_a = [&](const Vector& x) {
      const Matrix dd = cross_distances(testing::unflat(x, 5, 2), b.points, m);
      return (w.array() * (dd / scale_factor(dd, Scaling::mean)).array()).sum();
    };
    auto loss_b = [&](const Vector& x) {
      const Matrix dd = cross_distances(a.points, testing::unflat(x, 4, 2), m);
      return (w.array() * (dd / scale_factor(dd, Scaling::mean)).array()).sum();
    };
    EXPECT_LE(oracle::relative_error(testing::flat(ga),
                                     oracle::finite_diff(loss_a, testing::flat(a.points))),
              1e-7);
    EXPECT_LE(oracle::relative_error(testing::flat(gb),
                                     oracle::finite_diff(loss_b, testing::flat(b.points))),
              1e-7);
  }
}

TEST(Backward, CoincidentPointsContributeNothing) {
  const Matrix pts = cloud_of({{1.0, 1.0}, {1.0, 1.0}, {0.0, 2.0}}).points;
  const Matrix d = pairwise_distances(pts, Metric::euclidean);
  const Matrix g = pairwise_distances_backward(pts, d, Matrix::Ones(3, 3), Metric::euclidean);
  EXPECT_TRUE(g.allFinite());
}

TEST(ApplyRigid, IdentityLeavesCloudUnchanged) {
  const PointCloud p = gaussian_cloud(5, 3, 2);
  const RigidTransform id{Matrix::Identity(3, 3), Vector::Zero(3)};
  const PointCloud q = apply_rigid(p, id);
  EXPECT_EQ(q.points, p.points);
  EXPECT_EQ(q.weights, p.weights);
}

TEST(ApplyRigid, QuarterTurn) {
  const double c = std::cos(std::numbers::pi / 2.0);
  const double s = std::sin(std::numbers::pi / 2.0);
  Matrix r(3, 3);
  r << c, -s, 0, s, c, 0, 0, 0, 1;
  const PointCloud q = apply_rigid(cloud_of({{1.0, 0.0, 0.0}}), {r, Vector::Zero(3)});
  EXPECT_NEAR(q.points(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(q.points(0, 1), 1.0, 1e-15);
  EXPECT_NEAR(q.points(0, 2), 0.0, 1e-15);
}

TEST(ApplyRigid, PreservesDistancesAndHasZeroDistortion) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const PointCloud p = gaussian_cloud(12, 3, seed);
    const RigidTransform xf = random_rigid(3, seed + 1000, 2.0);
    const PointCloud q = apply_rigid(p, xf);
    const Matrix dp = pairwise_distances(p.points, Metric::euclidean);
    const Matrix dq = pairwise_distances(q.points, Metric::euclidean);
    EXPECT_LE((dp - dq).cwiseAbs().maxCoeff(), 1e-10);

    const Matrix cx = pairwise_cost(p, Metric::euclidean, Scaling::none).values;
    EXPECT_NEAR(ot::distortion_p2(cx, q, Metric::euclidean, Scaling::none).value, 0.0, 1e-12);

    const PointCloud back = apply_rigid(q, xf.inverse());
    EXPECT_LE((back.points - p.points).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(ApplyRigid, DimensionMismatchThrows) {
  const PointCloud p = gaussian_cloud(4, 2, 0);
  EXPECT_THROW(apply_rigid(p, random_rotation(3, 0)), SizeError);
}

TEST(ApplyLinear, IdentityAndPlanarShear) {
  const PointCloud p = gaussian_cloud(5, 2, 4);
  EXPECT_EQ(apply_linear(p, {Matrix::Identity(2, 2)}).points, p.points);

  Matrix a(2, 2);
  a << 1, 1, 0, 1;
  const PointCloud q = apply_linear(cloud_of({{0.0, 1.0}}), {a});
  EXPECT_DOUBLE_EQ(q.points(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(q.points(0, 1), 1.0);
}

TEST(ApplyLinear, RandomShearDistorts) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const PointCloud p = gaussian_cloud(16, 3, seed);
    const ShearTransform a = random_shear(3, 0.8, seed);
    const Matrix cx = pairwise_cost(p, Metric::euclidean, Scaling::none).values;
    EXPECT_GT(ot::distortion_p2(cx, apply_linear(p, a), Metric::euclidean, Scaling::none).value,
              0.0);
  }
}

TEST(RandomTransforms, RotationIsOrthogonalWithUnitDeterminant) {
  for (Index d : {2, 3, 5}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const RigidTransform r = random_rotation(d, seed);
      EXPECT_LE((r.rotation.transpose() * r.rotation - Matrix::Identity(d, d)).cwiseAbs().maxCoeff(),
                1e-10);
      EXPECT_NEAR(r.rotation.determinant(), 1.0, 1e-10);
      EXPECT_TRUE(r.translation.isZero(0.0));
      EXPECT_NO_THROW(validate(r));
    }
  }
}

TEST(RandomTransforms, SameSeedIsBitwiseIdentical) {
  const RigidTransform a = random_rigid(3, 42, 1.0);
  const RigidTransform b = random_rigid(3, 42, 1.0);
  EXPECT_EQ(a.rotation, b.rotation);
  EXPECT_EQ(a.translation, b.translation);
  EXPECT_EQ(random_shear(3, 0.5, 9).matrix, random_shear(3, 0.5, 9).matrix);
  EXPECT_NE(random_rotation(3, 1).rotation, random_rotation(3, 2).rotation);
}

TEST(RandomTransforms, ShearHasSeededOffDiagonalSlot) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix a = random_shear(3, 0.5, seed).matrix;
    int hits = 0;
    for (Index i = 0; i < 3; ++i) {
      EXPECT_EQ(a(i, i), 1.0);
      for (Index j = 0; j < 3; ++j) {
        if (i == j) continue;
        if (a(i, j) == 0.5) {
          ++hits;
        } else {
          EXPECT_EQ(a(i, j), 0.0);
        }
      }
    }
    EXPECT_EQ(hits, 1);
    EXPECT_NO_THROW(validate(ShearTransform{a}));
  }
}

TEST(RandomTransforms, AnisotropicShearDiagonalInRange) {
  const Matrix a = random_shear(3, 0.3, 7, true).matrix;
  for (Index i = 0; i < 3; ++i) {
    EXPECT_GE(a(i, i), 0.5);
    EXPECT_LE(a(i, i), 1.5);
  }
  EXPECT_GT(std::abs(a.determinant()), 1e-8);
}

TEST(RandomTransforms, RejectsBadArguments) {
  EXPECT_THROW(random_rotation(1, 0), InvalidInput);
  EXPECT_THROW(random_shear(1, 0.5, 0), InvalidInput);
  EXPECT_THROW(random_shear(3, 0.0, 0), InvalidInput);
}

TEST(Validate, RejectsNonRigidAndRigidShear) {
  Matrix m = Matrix::Identity(3, 3);
  m(0, 1) = 0.1;
  EXPECT_THROW(validate(RigidTransform{m, Vector::Zero(3)}), InvalidInput);
  EXPECT_THROW(validate(ShearTransform{Matrix::Identity(3, 3)}), InvalidInput);
  EXPECT_THROW(validate(ShearTransform{Matrix::Zero(3, 3)}), InvalidInput);
}

TEST(Parse, NamesRoundTrip) {
  for (Metric m : {Metric::euclidean, Metric::sq_euclidean}) EXPECT_EQ(parse_metric(to_string(m)), m);
  for (Scaling s : {Scaling::none, Scaling::mean, Scaling::max}) {
    EXPECT_EQ(parse_scaling(to_string(s)), s);
  }
  EXPECT_THROW(parse_metric("manhattan"), InvalidInput);
  EXPECT_THROW(parse_scaling("median"), InvalidInput);
}

}  // namespace
}  // namespace gmot
