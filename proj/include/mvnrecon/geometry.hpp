// SPDX-License-Identifier: Apache-2.0
#pragma once

// Camera model, SE(3) parameterization, projection and ray generation.
//
// Conventions (fixed project-wide):
//   - camera space: x right, y down, z forward (camera looks down +z);
//   - pose [R, t] maps world to camera: x_cam = R x_world + t;
//   - pixel centers sit at integer coordinates, u = fx x/z + cx.
// Free functions are templated on the scalar so the same code runs on plain
// doubles and on ad::Value for gradient-based pose optimization.

#include "mvnrecon/autodiff.hpp"
#include "mvnrecon/common.hpp"

#include <cmath>
#include <optional>
#include <utility>

namespace mvnr {

struct CameraIntrinsics {
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const {
    if (!(fx > 0) || !(fy > 0)) throw InputError("intrinsics: focal lengths must be positive");
    if (!(cx >= 0 && cx < width) || !(cy >= 0 && cy < height))
      throw InputError("intrinsics: principal point outside image");
  }
  bool in_bounds(double u, double v) const {
    return u >= -0.5 && u <= width - 0.5 && v >= -0.5 && v <= height - 0.5;
  }
};

/// Learnable extrinsics: axis-angle rotation (radians) plus translation.
struct Pose {
  Vec3d axis_angle = Vec3d::Zero();
  Vec3d translation = Vec3d::Zero();
};

template <typename S>
struct PoseT {
  Mat3<S> R;
  Vec3<S> t;
};

template <typename S>
struct RayT {
  Vec3<S> origin;
  Vec3<S> direction;  // unit norm

  Vec3<S> point_at(const S& s) const { return origin + direction * s; }
};
using Ray = RayT<double>;

// ---- rotations -------------------------------------------------------------

/// Rodrigues formula. Smooth through w = 0 (series expansion of the
/// coefficients in ||w||^2), so it is safe to differentiate at the identity.
template <typename S>
Mat3<S> axis_angle_to_matrix(const Vec3<S>& w) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const S theta2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
  S a, b;  // a = sin(t)/t, b = (1-cos(t))/t^2
  if (detach(theta2) < 1e-8) {
    a = S(1.0) - theta2 * S(1.0 / 6.0);
    b = S(0.5) - theta2 * S(1.0 / 24.0);
  } else {
    const S theta = sqrt(theta2);
    a = sin(theta) / theta;
    b = (S(1.0) - cos(theta)) / theta2;
  }
  Mat3<S> K;
  K << S(0.0), -w[2], w[1], w[2], S(0.0), -w[0], -w[1], w[0], S(0.0);
  Mat3<S> R = Mat3<S>::Identity() + K * a + (K * K) * b;
  return R;
}

/// Principal log map; returns w with ||w|| <= pi.
Vec3d matrix_to_axis_angle(const Mat3d& R);

/// Checks R^T R = I and det = +1 to `tol`.
bool is_rotation(const Mat3d& R, double tol = 1e-9);

inline Mat3d rotation_of(const Pose& pose) { return axis_angle_to_matrix<double>(pose.axis_angle); }

inline PoseT<double> materialize(const Pose& pose) {
  return PoseT<double>{rotation_of(pose), pose.translation};
}

template <typename S>
Vec3<S> camera_center(const PoseT<S>& pose) {
  return -(pose.R.transpose() * pose.t);
}
inline Vec3d camera_center(const Pose& pose) { return camera_center(materialize(pose)); }

/// World-to-camera pose looking from `eye` to `target`, image-up along world `up`.
Pose look_at(const Vec3d& eye, const Vec3d& target, const Vec3d& up = Vec3d(0, 1, 0));

Pose compose(const Pose& lhs, const Pose& rhs);  // lhs ∘ rhs as world->camera maps
Pose inverse(const Pose& pose);

// ---- projection ------------------------------------------------------------

inline constexpr double kMinCameraDepth = 1e-8;

/// Pinhole projection with homogeneous division. Throws NumericError for
/// points at or behind the camera plane.
template <typename S>
Eigen::Matrix<S, 2, 1> project(const Vec3<S>& x_world, const PoseT<S>& pose,
                               const CameraIntrinsics& intr) {
  const Vec3<S> xc = pose.R * x_world + pose.t;
  if (detach(xc[2]) <= kMinCameraDepth)
    throw NumericError("project: point at or behind the camera plane");
  Eigen::Matrix<S, 2, 1> uv;
  uv[0] = xc[0] / xc[2] * S(intr.fx) + S(intr.cx);
  uv[1] = xc[1] / xc[2] * S(intr.fy) + S(intr.cy);
  return uv;
}

inline Vec2d project(const Vec3d& x_world, const Pose& pose, const CameraIntrinsics& intr) {
  return project(x_world, materialize(pose), intr);
}

/// Camera-space depth of a world point (positive in front of the camera).
template <typename S>
S camera_depth(const Vec3<S>& x_world, const PoseT<S>& pose) {
  return pose.R.row(2).dot(x_world) + pose.t[2];
}

/// Back-projects a pixel to a unit-direction world ray through the camera center.
template <typename S>
RayT<S> camera_ray(double u, double v, const PoseT<S>& pose, const CameraIntrinsics& intr) {
  using std::sqrt;
  const Vec3d dir_cam((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0);
  const Mat3<S> Rt = pose.R.transpose();
  Vec3<S> dir = Rt * Vec3<S>(S(dir_cam[0]), S(dir_cam[1]), S(dir_cam[2]));
  const S n = sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
  dir = Vec3<S>(dir[0] / n, dir[1] / n, dir[2] / n);
  return RayT<S>{-(Rt * pose.t), dir};
}

inline Ray camera_ray(double u, double v, const Pose& pose, const CameraIntrinsics& intr) {
  if (!intr.in_bounds(u, v)) throw InputError("camera_ray: pixel outside image bounds");
  return camera_ray(u, v, materialize(pose), intr);
}

/// Cosine that converts distance along this pixel's ray into camera-z depth.
inline double ray_depth_cosine(double u, double v, const CameraIntrinsics& intr) {
  const Vec3d d((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0);
  return 1.0 / d.norm();
}

/// Rotates a world-space unit normal into camera space.
template <typename S>
Vec3<S> world_to_camera_normal(const Mat3<S>& R, const Vec3<S>& n_world) {
  return R * n_world;
}

inline Vec3d world_to_camera_normal(const Mat3d& R, const Vec3d& n_world, bool check_unit) {
  if (check_unit && std::abs(n_world.norm() - 1.0) > 1e-6)
    throw InputError("world_to_camera_normal: input normal is not unit length");
  return R * n_world;
}

// ---- ray/box intersection ----------------------------------------------------

/// Slab test. Returns entry/exit parameters with near clamped to >= 0,
/// or nullopt when the forward ray misses the box.
template <typename S>
std::optional<std::pair<S, S>> intersect_aabb(const RayT<S>& ray, const Aabb& box) {
  using ad::max;
  using ad::min;
  using std::max;
  using std::min;
  S t_near(0.0);
  S t_far(std::numeric_limits<double>::max());
  for (int a = 0; a < 3; ++a) {
    const double d = detach(ray.direction[a]);
    if (std::abs(d) < 1e-12) {
      const double o = detach(ray.origin[a]);
      if (o < box.lo[a] || o > box.hi[a]) return std::nullopt;
      continue;
    }
    S t1 = (S(box.lo[a]) - ray.origin[a]) / ray.direction[a];
    S t2 = (S(box.hi[a]) - ray.origin[a]) / ray.direction[a];
    if (detach(t1) > detach(t2)) std::swap(t1, t2);
    t_near = max(t_near, t1);
    t_far = min(t_far, t2);
  }
  if (detach(t_near) >= detach(t_far)) return std::nullopt;
  return std::make_pair(t_near, t_far);
}

}  // namespace mvnr
