// SPDX-License-Identifier: Apache-2.0
#pragma once

// Closed-form signed-distance shapes. They serve as ground truth for the
// synthetic-scene generator and as oracles in tests, and satisfy the same
// eval/grad interface as the learned field so rendering code can run on them.

#include "mvnrecon/common.hpp"

#include <cmath>
#include <utility>
#include <vector>

namespace mvnr {

struct SphereShape {
  double radius = 0.5;

  template <typename S>
  S eval(const Vec3<S>& x) const {
    using std::sqrt;
    return sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) - S(radius);
  }
  template <typename S>
  Vec3<S> grad(const Vec3<S>& x) const {
    using std::sqrt;
    const S n = sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2] + S(1e-30));
    return Vec3<S>(x[0] / n, x[1] / n, x[2] / n);
  }
};

/// Torus around the y axis: tube of radius `minor` at distance `major`.
struct TorusShape {
  double major = 0.45;
  double minor = 0.2;

  template <typename S>
  S eval(const Vec3<S>& x) const {
    using std::sqrt;
    const S rho = sqrt(x[0] * x[0] + x[2] * x[2] + S(1e-30));
    const S a = rho - S(major);
    return sqrt(a * a + x[1] * x[1] + S(1e-30)) - S(minor);
  }
  template <typename S>
  Vec3<S> grad(const Vec3<S>& x) const {
    using std::sqrt;
    const S rho = sqrt(x[0] * x[0] + x[2] * x[2] + S(1e-30));
    const S a = rho - S(major);
    const S q = sqrt(a * a + x[1] * x[1] + S(1e-30));
    const S ar = a / (q * rho);
    return Vec3<S>(x[0] * ar, x[1] / q, x[2] * ar);
  }
};

/// Smooth union of spheres (polynomial smooth-min), a mildly non-convex blob.
struct BlobShape {
  struct Ball {
    Vec3d center;
    double radius;
  };
  std::vector<Ball> balls = {{Vec3d(-0.18, 0.0, 0.0), 0.38},
                             {Vec3d(0.25, 0.12, 0.05), 0.3},
                             {Vec3d(0.05, -0.25, -0.1), 0.26}};
  double smooth = 0.12;

  template <typename S>
  S eval(const Vec3<S>& x) const {
    S f = ball_sdf<S>(x, 0);
    for (std::size_t i = 1; i < balls.size(); ++i) f = smin(f, ball_sdf<S>(x, i));
    return f;
  }
  template <typename S>
  Vec3<S> grad(const Vec3<S>& x) const {
    S f = ball_sdf<S>(x, 0);
    Vec3<S> g = ball_grad<S>(x, 0);
    for (std::size_t i = 1; i < balls.size(); ++i) {
      const S fb = ball_sdf<S>(x, i);
      const Vec3<S> gb = ball_grad<S>(x, i);
      smin_grad(f, g, fb, gb);
    }
    return g;
  }

 private:
  template <typename S>
  S ball_sdf(const Vec3<S>& x, std::size_t i) const {
    using std::sqrt;
    const Vec3<S> d(x[0] - S(balls[i].center[0]), x[1] - S(balls[i].center[1]),
                    x[2] - S(balls[i].center[2]));
    return sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + S(1e-30)) - S(balls[i].radius);
  }
  template <typename S>
  Vec3<S> ball_grad(const Vec3<S>& x, std::size_t i) const {
    using std::sqrt;
    const Vec3<S> d(x[0] - S(balls[i].center[0]), x[1] - S(balls[i].center[1]),
                    x[2] - S(balls[i].center[2]));
    const S n = sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + S(1e-30));
    return Vec3<S>(d[0] / n, d[1] / n, d[2] / n);
  }
  // smin(f1, f2) = mix(f2, f1, h) - k h (1-h), h = clamp(0.5 + 0.5 (f2-f1)/k, 0, 1)
  template <typename S>
  S smin(const S& f1, const S& f2) const {
    const double k = smooth;
    const double hraw = 0.5 + 0.5 * (detach(f2) - detach(f1)) / k;
    if (hraw <= 0.0) return f2;
    if (hraw >= 1.0) return f1;
    const S h = S(0.5) + (f2 - f1) * S(0.5 / k);
    return f2 + (f1 - f2) * h - S(k) * h * (S(1.0) - h);
  }
  // accumulating variant keeping (f, grad) in sync
  template <typename S>
  void smin_grad(S& f1, Vec3<S>& g1, const S& f2, const Vec3<S>& g2) const {
    const double k = smooth;
    const double hraw = 0.5 + 0.5 * (detach(f2) - detach(f1)) / k;
    if (hraw <= 0.0) {
      f1 = f2;
      g1 = g2;
      return;
    }
    if (hraw >= 1.0) return;
    const S h = S(0.5) + (f2 - f1) * S(0.5 / k);
    const S f = f2 + (f1 - f2) * h - S(k) * h * (S(1.0) - h);
    for (int a = 0; a < 3; ++a) {
      const S dh = (g2[a] - g1[a]) * S(0.5 / k);
      g1[a] = g2[a] + (g1[a] - g2[a]) * h + ((f1 - f2) - S(k) * (S(1.0) - h - h)) * dh;
    }
    f1 = f;
  }
};

template <typename Shape, typename S>
std::pair<S, Vec3<S>> eval_grad(const Shape& shape, const Vec3<S>& x) {
  return {shape.eval(x), shape.grad(x)};
}

}  // namespace mvnr
