// SPDX-License-Identifier: Apache-2.0
#include "mvnrecon/geometry.hpp"

#include <Eigen/Geometry>

namespace mvnr {

Vec3d matrix_to_axis_angle(const Mat3d& R) {
  const Eigen::AngleAxisd aa(R);
  double angle = aa.angle();
  Vec3d axis = aa.axis();
  if (angle > kPi) {  // keep the principal branch
    angle = 2.0 * kPi - angle;
    axis = -axis;
  }
  return axis * angle;
}

bool is_rotation(const Mat3d& R, double tol) {
  const double ortho = (R.transpose() * R - Mat3d::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(R.determinant() - 1.0) <= tol;
}

Pose look_at(const Vec3d& eye, const Vec3d& target, const Vec3d& up) {
  Vec3d z = target - eye;
  const double n = z.norm();
  if (n < 1e-12) throw InputError("look_at: eye coincides with target");
  z /= n;
  Vec3d y = -up + up.dot(z) * z;  // image-down, orthogonal to the view axis
  const double yn = y.norm();
  if (yn < 1e-9) throw InputError("look_at: view axis parallel to up vector");
  y /= yn;
  const Vec3d x = y.cross(z);
  Mat3d R;
  R.row(0) = x;
  R.row(1) = y;
  R.row(2) = z;
  return Pose{matrix_to_axis_angle(R), -(R * eye)};
}

Pose compose(const Pose& lhs, const Pose& rhs) {
  const Mat3d Rl = rotation_of(lhs);
  const Mat3d Rr = rotation_of(rhs);
  return Pose{matrix_to_axis_angle(Rl * Rr), Rl * rhs.translation + lhs.translation};
}

Pose inverse(const Pose& pose) {
  const Mat3d R = rotation_of(pose);
  return Pose{matrix_to_axis_angle(R.transpose()), -(R.transpose() * pose.translation)};
}

}  // namespace mvnr
