#include <cmath>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "ppd/geometry.hpp"
#include "ppd/rng.hpp"

using ppd::JointKind;
using ppd::JointParams;
using ppd::RigidTransform;
using ppd::Vec3;

namespace {
constexpr double kPi = 3.14159265358979323846;

JointParams random_params(ppd::Rng& rng, bool unit_e = true) {
  JointParams p;
  Vec3 e{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
  if (e.norm() < 1e-3) e = {1, 0, 0};
  p.e = unit_e ? e.normalized() : e;
  p.r_c = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
  p.r_z = {rng.uniform(-.3, .3), rng.uniform(-.3, .3), rng.uniform(-.3, .3)};
  p.q_c = {rng.uniform(-.5, .5), rng.uniform(-.5, .5), rng.uniform(-.5, .5)};
  p.q_z = {rng.uniform(-.1, .1), rng.uniform(-.1, .1), rng.uniform(-.1, .1)};
  p.s = rng.uniform(0, kPi);
  return p;
}
}  // namespace

TEST(JointDirection, Identities) {
  Vec3 u = ppd::joint_direction({1, 0, 0}, {0, 0, 0});
  EXPECT_NEAR(u.x, 1, 1e-15);
  EXPECT_NEAR(u.y, 0, 1e-15);
  EXPECT_NEAR(u.z, 0, 1e-15);
  // quarter turn about z maps +x to +y
  Vec3 v = ppd::joint_direction({1, 0, 0}, {0, 0, kPi / 2});
  EXPECT_NEAR(v.x, 0, 1e-15);
  EXPECT_NEAR(v.y, 1, 1e-15);
  EXPECT_NEAR(v.z, 0, 1e-15);
}

TEST(JointDirection, NonUnitInitialDirectionRejected) {
  EXPECT_THROW(ppd::joint_direction({2, 0, 0}, {0, 0, 0}), std::runtime_error);
}

TEST(JointDirection, MatchesMatrixProductOracle) {
  ppd::Rng rng(31);
  for (int t = 0; t < 200; ++t) {
    Vec3 r{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
    Vec3 e = Vec3{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    if (e.norm() < 1e-3) e = {0, 1, 0};
    e = e.normalized();
    Vec3 got = ppd::joint_direction(e, r);
    // independent oracle: explicit Rz * Ry * Rx product
    auto rot = [](double a, int axis) {
      ppd::Mat3 m{};
      double c = std::cos(a), s = std::sin(a);
      if (axis == 0) m = {1, 0, 0, 0, c, -s, 0, s, c};
      if (axis == 1) m = {c, 0, s, 0, 1, 0, -s, 0, c};
      if (axis == 2) m = {c, -s, 0, s, c, 0, 0, 0, 1};
      return m;
    };
    ppd::Mat3 prod = ppd::mat3_mul(rot(r.z, 2), ppd::mat3_mul(rot(r.y, 1), rot(r.x, 0)));
    Vec3 want = ppd::mat3_apply(prod, e);
    EXPECT_NEAR(got.x, want.x, 1e-12);
    EXPECT_NEAR(got.y, want.y, 1e-12);
    EXPECT_NEAR(got.z, want.z, 1e-12);
    EXPECT_NEAR(got.norm(), 1.0, 1e-12);
  }
}

TEST(ComposePartPose, FixedIsIdentity) {
  JointParams p;
  RigidTransform b = ppd::compose_part_pose(JointKind::kFixed, p);
  for (int i = 0; i < 16; ++i)
    EXPECT_DOUBLE_EQ(b.m[i], RigidTransform::identity().m[i]);
}

TEST(ComposePartPose, PrismaticTranslation) {
  JointParams p;
  p.e = {1, 0, 0};
  p.s = 0.4;
  RigidTransform b = ppd::compose_part_pose(JointKind::kPrismatic, p);
  EXPECT_NEAR(b.m[3], 0.4, 1e-15);
  EXPECT_NEAR(b.m[7], 0.0, 1e-15);
  EXPECT_NEAR(b.m[11], 0.0, 1e-15);
}

TEST(ComposePartPose, RevoluteQuarterTurn) {
  JointParams p;
  p.e = {0, 0, 1};
  p.s = kPi / 2;
  RigidTransform b = ppd::compose_part_pose(JointKind::kRevolute, p);
  Vec3 y = b.apply({1, 0, 0});
  EXPECT_NEAR(y.x, 0, 1e-15);
  EXPECT_NEAR(y.y, 1, 1e-15);
  EXPECT_NEAR(y.z, 0, 1e-15);
}

TEST(ComposePartPose, RandomTransformsAreRigid) {
  ppd::Rng rng(5);
  for (int t = 0; t < 2000; ++t) {
    JointParams p = random_params(rng);
    auto kind = t % 3 == 0   ? JointKind::kFixed
                : t % 3 == 1 ? JointKind::kPrismatic
                             : JointKind::kRevolute;
    RigidTransform b = ppd::compose_part_pose(kind, p);
    EXPECT_LT(b.rigidity_error(), 1e-9);
  }
}

TEST(ComposePartPose, RevoluteZeroStateIsIdentity) {
  ppd::Rng rng(9);
  for (int t = 0; t < 100; ++t) {
    JointParams p = random_params(rng);
    p.s = 0;
    p.q_c = p.q_z = {0, 0, 0};
    RigidTransform b = ppd::compose_part_pose(JointKind::kRevolute, p);
    for (int i = 0; i < 16; ++i)
      EXPECT_NEAR(b.m[i], RigidTransform::identity().m[i], 1e-12);
  }
}

TEST(InverseApply, IdentityAndTranslation) {
  RigidTransform id = RigidTransform::identity();
  Vec3 x{0.3, -0.2, 0.7};
  Vec3 y = id.inverse_apply(x);
  EXPECT_NEAR((y - x).norm(), 0, 1e-15);
  RigidTransform tr = RigidTransform::translation({1, 0, 0});
  Vec3 z = tr.inverse_apply({1, 0, 0});
  EXPECT_NEAR(z.norm(), 0, 1e-15);
}

TEST(InverseApply, RoundTripAndDistancePreservation) {
  ppd::Rng rng(13);
  for (int t = 0; t < 1000; ++t) {
    JointParams p = random_params(rng);
    RigidTransform b = ppd::compose_part_pose(
        t % 2 ? JointKind::kRevolute : JointKind::kPrismatic, p);
    Vec3 x{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    Vec3 x2{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    Vec3 rt = b.inverse_apply(b.apply(x));
    EXPECT_LT((rt - x).norm(), 1e-9);
    double before = (x - x2).norm();
    double after = (b.apply(x) - b.apply(x2)).norm();
    EXPECT_NEAR(before, after, 1e-9);
  }
}

TEST(LineLineDistance, KnownCases) {
  // skew unit-separated lines
  double d = ppd::line_line_distance({0, 0, 0}, {1, 0, 0}, {0, 0, 1},
                                     {0, 1, 0});
  EXPECT_NEAR(d, 1.0, 1e-12);
  // parallel lines
  double dp = ppd::line_line_distance({0, 0, 0}, {1, 0, 0}, {0, 2, 0},
                                      {1, 0, 0});
  EXPECT_NEAR(dp, 2.0, 1e-12);
  // intersecting
  double di = ppd::line_line_distance({0, 0, 0}, {1, 0, 0}, {0, 0, 0},
                                      {0, 1, 0});
  EXPECT_NEAR(di, 0.0, 1e-12);
}

// Gradients of B entries w.r.t. (s, r_z, q_z) via the graph-side builders.
TEST(PoseGraph, GradientsMatchFiniteDifferences) {
  ppd::Rng rng(21);
  using T = ppd::Tensor<double>;
  for (int trial = 0; trial < 5; ++trial) {
    Vec3 e = Vec3{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)}
                 .normalized();
    std::vector<double> rc = {rng.uniform(-1, 1), rng.uniform(-1, 1),
                              rng.uniform(-1, 1)};
    auto make_loss = [&](const std::vector<T>& p) {
      // p = {r_z, s, q_z}
      T r = ppd::add(T::constant({1, 3}, rc), p[0]);
      auto pose = ppd::compose_part_pose_graph(JointKind::kRevolute, e, r,
                                               p[1], p[2]);
      T pts = T::constant({2, 3}, {0.3, -0.1, 0.2, -0.4, 0.5, 0.1});
      T local = ppd::inverse_apply_graph(pose, pts);
      return ppd::mean_all(ppd::mul(local, local));
    };
    auto res = oracle::check_gradients(
        make_loss,
        {T::param({1, 3}, {rng.uniform(-.3, .3), rng.uniform(-.3, .3),
                           rng.uniform(-.3, .3)}),
         T::param({1}, {rng.uniform(0.1, 3.0)}),
         T::param({1, 3}, {rng.uniform(-.3, .3), rng.uniform(-.3, .3),
                           rng.uniform(-.3, .3)})});
    EXPECT_LT(res.max_rel, 1e-4);
  }
}

// The graph builders must agree with the plain implementation.
TEST(PoseGraph, MatchesPlainComposition) {
  ppd::Rng rng(27);
  using T = ppd::Tensor<double>;
  for (int trial = 0; trial < 50; ++trial) {
    JointParams p = random_params(rng);
    for (auto kind : {JointKind::kFixed, JointKind::kPrismatic,
                      JointKind::kRevolute}) {
      RigidTransform b = ppd::compose_part_pose(kind, p);
      Vec3 r = p.r(), q = p.q();
      auto pose = ppd::compose_part_pose_graph<double>(
          kind, p.e, T::constant({1, 3}, {r.x, r.y, r.z}),
          T::scalar(p.s), T::constant({1, 3}, {q.x, q.y, q.z}));
      Vec3 x{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
      T xt = T::constant({1, 3}, {x.x, x.y, x.z});
      auto local = ppd::inverse_apply_graph(pose, xt).value();
      Vec3 want = b.inverse_apply(x);
      EXPECT_NEAR(local[0], want.x, 1e-12);
      EXPECT_NEAR(local[1], want.y, 1e-12);
      EXPECT_NEAR(local[2], want.z, 1e-12);
      auto world = ppd::apply_graph(pose, xt).value();
      Vec3 wantw = b.apply(x);
      EXPECT_NEAR(world[0], wantw.x, 1e-12);
      EXPECT_NEAR(world[1], wantw.y, 1e-12);
      EXPECT_NEAR(world[2], wantw.z, 1e-12);
    }
  }
}
