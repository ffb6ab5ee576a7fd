// SPDX-License-Identifier: Apache-2.0
#include "mvnrecon/geometry.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace mvnr;
using ad::Value;

namespace {

CameraIntrinsics test_intrinsics() {
  CameraIntrinsics intr;
  intr.fx = intr.fy = 100.0;
  intr.cx = intr.cy = 50.0;
  intr.width = intr.height = 101;
  return intr;
}

Pose random_pose(std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vec3d w(gauss(rng), gauss(rng), gauss(rng));
  w *= std::uniform_real_distribution<double>(0.1, 2.5)(rng) / w.norm();
  return Pose{w, Vec3d(0.3 * gauss(rng), 0.3 * gauss(rng), 2.5 + 0.3 * std::abs(gauss(rng)))};
}

}  // namespace

TEST(Geometry, RodriguesZeroIsIdentity) {
  const Mat3d r = axis_angle_to_matrix<double>(Vec3d::Zero());
  EXPECT_LT((r - Mat3d::Identity()).norm(), 1e-15);
}

TEST(Geometry, RodriguesQuarterTurnAboutZ) {
  const Mat3d r = axis_angle_to_matrix<double>(Vec3d(0, 0, kPi / 2));
  const Vec3d mapped = r * Vec3d(1, 0, 0);
  EXPECT_LT((mapped - Vec3d(0, 1, 0)).norm(), 1e-12);
}

TEST(Geometry, RodriguesGivesProperRotations) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const Vec3d w(gauss(rng), gauss(rng), gauss(rng));
    const Mat3d r = axis_angle_to_matrix<double>(w);
    EXPECT_TRUE(is_rotation(r, 1e-12));
    const Vec3d v(gauss(rng), gauss(rng), gauss(rng));
    EXPECT_NEAR((r * v).norm(), v.norm(), 1e-12);
  }
}

TEST(Geometry, AxisAngleLogExpConsistency) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    Vec3d w(gauss(rng), gauss(rng), gauss(rng));
    const double len = std::uniform_real_distribution<double>(1e-6, kPi - 1e-6)(rng);
    w *= len / w.norm();
    const Mat3d r = axis_angle_to_matrix<double>(w);
    const Mat3d r2 = axis_angle_to_matrix<double>(matrix_to_axis_angle(r));
    EXPECT_LT((r - r2).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Geometry, ProjectPrincipalAxis) {
  const auto intr = test_intrinsics();
  const Vec2d uv = project(Vec3d(0, 0, 1), Pose{}, intr);
  EXPECT_NEAR(uv[0], 50.0, 1e-12);
  EXPECT_NEAR(uv[1], 50.0, 1e-12);
}

TEST(Geometry, ProjectPinholeFormula) {
  const auto intr = test_intrinsics();
  const Vec2d uv = project(Vec3d(0.1, 0, 1), Pose{}, intr);
  EXPECT_NEAR(uv[0], 60.0, 1e-12);
  EXPECT_NEAR(uv[1], 50.0, 1e-12);
}

TEST(Geometry, ProjectBehindCameraThrows) {
  const auto intr = test_intrinsics();
  EXPECT_THROW(project(Vec3d(0, 0, -1.0), Pose{}, intr), NumericError);
}

TEST(Geometry, CameraRayPrincipalPixelIsOpticalAxis) {
  const auto intr = test_intrinsics();
  std::mt19937_64 rng(7);
  const Pose pose = random_pose(rng);
  const Ray ray = camera_ray(intr.cx, intr.cy, pose, intr);
  const Mat3d r = rotation_of(pose);
  EXPECT_LT((ray.direction - r.row(2).transpose()).norm(), 1e-12);
  EXPECT_LT((ray.origin - camera_center(pose)).norm(), 1e-12);
}

TEST(Geometry, CameraRayCornerDirection) {
  const auto intr = test_intrinsics();
  const Ray ray = camera_ray(0.0, 0.0, Pose{}, intr);
  const Vec3d expected = Vec3d(-0.5, -0.5, 1.0).normalized();
  EXPECT_LT((ray.direction - expected).norm(), 1e-12);
}

TEST(Geometry, CameraRayOutOfBoundsThrows) {
  const auto intr = test_intrinsics();
  EXPECT_THROW(camera_ray(-3.0, 10.0, Pose{}, intr), InputError);
}

TEST(Geometry, ProjectCameraRayRoundTrip) {
  const auto intr = test_intrinsics();
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> pix(0.0, 100.0);
  for (int i = 0; i < 1000; ++i) {
    const Pose pose = random_pose(rng);
    const double u = pix(rng), v = pix(rng);
    const Ray ray = camera_ray(u, v, pose, intr);
    const Vec2d uv = project(ray.point_at(2.0), pose, intr);
    EXPECT_NEAR(uv[0], u, 1e-7);
    EXPECT_NEAR(uv[1], v, 1e-7);
  }
}

TEST(Geometry, NormalTransformExamples) {
  const Mat3d rz = axis_angle_to_matrix<double>(Vec3d(0, 0, kPi / 2));
  EXPECT_LT((world_to_camera_normal(Mat3d::Identity(), Vec3d(0, 0, 1), true) - Vec3d(0, 0, 1)).norm(),
            1e-15);
  EXPECT_LT((world_to_camera_normal(rz, Vec3d(1, 0, 0), true) - Vec3d(0, 1, 0)).norm(), 1e-12);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const Mat3d r = axis_angle_to_matrix<double>(Vec3d(gauss(rng), gauss(rng), gauss(rng)));
    const Vec3d n = Vec3d(gauss(rng), gauss(rng), gauss(rng)).normalized();
    EXPECT_NEAR(world_to_camera_normal(r, n, true).norm(), 1.0, 1e-12);
  }
  EXPECT_THROW(world_to_camera_normal(Mat3d::Identity(), Vec3d(2, 0, 0), true), InputError);
}

TEST(Geometry, LookAtLooksAtTarget) {
  const Vec3d eye(0.4, 0.2, -1.8);
  const Pose pose = look_at(eye, Vec3d::Zero());
  EXPECT_LT((camera_center(pose) - eye).norm(), 1e-12);
  const auto intr = test_intrinsics();
  const Vec2d uv = project(Vec3d::Zero(), pose, intr);
  EXPECT_NEAR(uv[0], intr.cx, 1e-9);
  EXPECT_NEAR(uv[1], intr.cy, 1e-9);
  EXPECT_TRUE(is_rotation(rotation_of(pose), 1e-12));
}

TEST(Geometry, IntersectAabbCentralRay) {
  const Ray ray{Vec3d(0, 0, -2), Vec3d(0, 0, 1)};
  const auto hit = intersect_aabb(ray, Aabb{});
  ASSERT_TRUE(hit.has_value());
  EXPECT_NEAR(hit->first, 1.0, 1e-12);
  EXPECT_NEAR(hit->second, 3.0, 1e-12);
}

TEST(Geometry, IntersectAabbMissAndParallel) {
  EXPECT_FALSE(intersect_aabb(Ray{Vec3d(0, 2, -2), Vec3d(0, 0, 1)}, Aabb{}).has_value());
  EXPECT_FALSE(intersect_aabb(Ray{Vec3d(5, 0, 0), Vec3d(0, 1, 0)}, Aabb{}).has_value());
  const auto hit = intersect_aabb(Ray{Vec3d(0.5, 0, -9), Vec3d(0, 0, 1)}, Aabb{});
  ASSERT_TRUE(hit.has_value());
  EXPECT_NEAR(hit->first, 8.0, 1e-12);
}

// Jacobians of the taped geometry ops against central differences.
TEST(Geometry, PoseJacobiansMatchFiniteDifferences) {
  const auto intr = test_intrinsics();
  std::mt19937_64 rng(13);
  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    const Pose pose = random_pose(rng);
    const Vec3d x(0.2, -0.1, 0.3);

    auto project_u = [&](const Pose& p) { return project(x, p, intr)[0]; };

    ad::Tape tape;
    ad::TapeScope scope(tape);
    Vec3<Value> w, t;
    for (int a = 0; a < 3; ++a) {
      w[a] = tape.leaf(pose.axis_angle[a]);
      t[a] = tape.leaf(pose.translation[a]);
    }
    const PoseT<Value> taped{axis_angle_to_matrix<Value>(w), t};
    const Value u = project(Vec3<Value>(Value(x[0]), Value(x[1]), Value(x[2])), taped, intr)[0];
    tape.backward(u);

    for (int a = 0; a < 3; ++a) {
      Pose ph = pose, pl = pose;
      ph.axis_angle[a] += h;
      pl.axis_angle[a] -= h;
      const double fd = (project_u(ph) - project_u(pl)) / (2.0 * h);
      const double adv = tape.adjoint(w[a]);
      EXPECT_LT(std::abs(adv - fd) / std::max({std::abs(fd), std::abs(adv), 1e-6}), 1e-4);

      ph = pose;
      pl = pose;
      ph.translation[a] += h;
      pl.translation[a] -= h;
      const double fdt = (project_u(ph) - project_u(pl)) / (2.0 * h);
      const double adt = tape.adjoint(t[a]);
      EXPECT_LT(std::abs(adt - fdt) / std::max({std::abs(fdt), std::abs(adt), 1e-6}), 1e-4);
    }
  }
}

TEST(Geometry, ComposeInverseRoundTrip) {
  std::mt19937_64 rng(15);
  for (int i = 0; i < 50; ++i) {
    const Pose a = random_pose(rng);
    const Pose ident = compose(a, inverse(a));
    EXPECT_LT(ident.axis_angle.norm(), 1e-9);
    EXPECT_LT(ident.translation.norm(), 1e-9);
  }
}
