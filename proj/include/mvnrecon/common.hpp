// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mvnr {

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;

using Vec2d = Eigen::Vector2d;
using Vec3d = Eigen::Vector3d;
using Mat3d = Eigen::Matrix3d;
using VecXd = Eigen::VectorXd;

/// Bad or inconsistent inputs (files, dimensions, argument domains). CLI exit code 2.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed on-disk data (headers, payload sizes). CLI exit code 2.
struct FormatError : InputError {
  using InputError::InputError;
};

/// Numerical failure during computation (divergence, degenerate geometry). CLI exit code 3.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Axis-aligned box, used for the fixed [-1,1]^3 reconstruction domain.
struct Aabb {
  Vec3d lo{-1.0, -1.0, -1.0};
  Vec3d hi{1.0, 1.0, 1.0};

  bool contains(const Vec3d& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
  Vec3d clamp(const Vec3d& p) const { return p.cwiseMax(lo).cwiseMin(hi); }
  double diagonal() const { return (hi - lo).norm(); }
};

/// Identity on plain scalars; the autodiff Value overload strips the tape index.
inline double detach(double x) { return x; }

inline constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double d) { return d * kPi / 180.0; }
inline double rad_to_deg(double r) { return r * 180.0 / kPi; }

/// FNV-1a over raw bytes; used for dataset hashes in run manifests.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace mvnr
