// SPDX-License-Identifier: Apache-2.0
#pragma once

// Volume rendering of depth, world-space normal and opacity along rays, with
// an SDF-to-opacity conversion driven by a sharpness-controlled sigmoid, plus
// sphere tracing and visibility tests.
//
// Discretization: K+1 sample points (edges) clipped to the bounding box give
// K intervals. alpha_i comes from the SDF values at the interval's two edge
// points, the depth sum uses the interval midpoint, the normal sum the field
// gradient at the interval's first point. In deterministic mode the edges are
// the uniform inclusive grid over [near, far]; stochastic mode jitters the
// interior edges within a quarter interval.
//
// A `Field` is anything with eval_grad(field, Vec3<S>) -> (S, Vec3<S>): the
// learned SdfField (taped or plain) and the analytic shapes both qualify.

#include "mvnrecon/autodiff.hpp"
#include "mvnrecon/common.hpp"
#include "mvnrecon/geometry.hpp"
#include "mvnrecon/images.hpp"
#include "mvnrecon/sdf_field.hpp"
#include "mvnrecon/shapes.hpp"

#include <optional>
#include <random>
#include <vector>

namespace mvnr {

template <typename S>
struct RaySamplesT {
  std::vector<S> distances;  // K+1 strictly increasing ray parameters
  int intervals() const { return static_cast<int>(distances.size()) - 1; }
};
using RaySamples = RaySamplesT<double>;

template <typename S>
struct PixelRenderT {
  S depth{0.0};
  Vec3<S> normal{S(0.0), S(0.0), S(0.0)};
  S opacity{0.0};
  bool hit_bbox = false;
};
using PixelRender = PixelRenderT<double>;

/// Returns nullopt when the ray misses the box (caller renders background).
template <typename S>
std::optional<RaySamplesT<S>> sample_ray(const RayT<S>& ray, const Aabb& box, int k,
                                         bool stochastic = false,
                                         std::mt19937_64* rng = nullptr) {
  if (k < 2) throw InputError("sample_ray: need at least 2 intervals");
  auto hit = intersect_aabb(ray, box);
  if (!hit) return std::nullopt;
  const S near = hit->first;
  const S span = hit->second - hit->first;
  RaySamplesT<S> out;
  out.distances.resize(k + 1);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int j = 0; j <= k; ++j) {
    double pos = static_cast<double>(j);
    if (stochastic && rng && j > 0 && j < k) pos += 0.5 * (uni(*rng) - 0.5);
    out.distances[j] = near + span * S(pos / k);
  }
  return out;
}

inline double sigmoid_s(double f, double s) {
  const double z = s * f;
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace detail {
// softplus(x) = log(1 + exp(x)) with saturation guards, taped-friendly
template <typename S>
S softplus_t(const S& x) {
  using std::exp;
  using std::log;
  const double v = detach(x);
  if (v > 30.0) return x;
  if (v < -30.0) return exp(x);
  return log(S(1.0) + exp(x));
}
}  // namespace detail

/// alpha_i = max((Phi_s(f_i) - Phi_s(f_{i+1})) / Phi_s(f_i), 0), computed in
/// log space as 1 - Phi_s(f_{i+1})/Phi_s(f_i) for stability at high sharpness.
template <typename S>
S alpha_from_sdf(const S& f_i, const S& f_next, const S& sharpness) {
  using ad::max;
  using std::exp;
  using std::max;
  // log Phi_s(f) = -softplus(-s f)
  const S log_ratio = detail::softplus_t(-(sharpness * f_i)) - detail::softplus_t(-(sharpness * f_next));
  return max(S(1.0) - exp(log_ratio), S(0.0));
}

template <typename S, typename Field>
PixelRenderT<S> render_pixel(const RayT<S>& ray, const Field& field, const S& sharpness, int k,
                             bool stochastic = false, std::mt19937_64* rng = nullptr,
                             const Aabb& box = Aabb{}) {
  PixelRenderT<S> out;
  auto samples = sample_ray(ray, box, k, stochastic, rng);
  if (!samples) return out;
  out.hit_bbox = true;

  const int n = k + 1;
  std::vector<S> f(n);
  std::vector<Vec3<S>> g(n);
  for (int j = 0; j < n; ++j) {
    const Vec3<S> x = ray.point_at(samples->distances[j]);
    auto fg = eval_grad(field, x);
    f[j] = fg.first;
    g[j] = fg.second;
  }

  S transmittance(1.0);
  for (int i = 0; i < k; ++i) {
    const S alpha = alpha_from_sdf(f[i], f[i + 1], sharpness);
    const S w = transmittance * alpha;
    const S mid = (samples->distances[i] + samples->distances[i + 1]) * S(0.5);
    out.depth += w * mid;
    for (int a = 0; a < 3; ++a) out.normal[a] += w * g[i][a];
    out.opacity += w;
    transmittance *= S(1.0) - alpha;
  }
  return out;
}

// ---- surface tracing ---------------------------------------------------------

struct TraceOptions {
  int max_steps = 128;
  double lipschitz = 0.9;  // sphere-tracing safety factor on |f|
  int bisections = 8;
  int newton_steps = 8;    // polish so implicit differentiation sits on the root
  double f_tol = 1e-4;
  double min_step = 1e-4;
};

struct TraceHit {
  double s = 0.0;  // ray parameter
  Vec3d x = Vec3d::Zero();
};

/// First zero crossing of the field along the ray inside the box, or nullopt.
/// Starting inside the surface (f < 0) finds the exit point.
template <typename Field>
std::optional<TraceHit> trace_surface(const Ray& ray, const Field& field,
                                      const TraceOptions& opt = TraceOptions{},
                                      const Aabb& box = Aabb{}) {
  auto span = intersect_aabb(ray, box);
  if (!span) return std::nullopt;
  const double far = span->second;
  double t0 = span->first;
  auto f_at = [&](double t) { return eval_grad(field, ray.point_at(t)).first; };
  double f0 = f_at(t0);

  double bracket_lo = 0, bracket_hi = 0, f_lo = 0, f_hi = 0;
  bool bracketed = false;
  for (int step = 0; step < opt.max_steps; ++step) {
    const double dt = std::max(opt.lipschitz * std::abs(f0), opt.min_step);
    double t1 = t0 + dt;
    if (t1 > far) t1 = far;
    const double f1 = f_at(t1);
    if ((f0 > 0.0) != (f1 > 0.0)) {
      bracket_lo = t0;
      bracket_hi = t1;
      f_lo = f0;
      f_hi = f1;
      bracketed = true;
      break;
    }
    if (t1 >= far) return std::nullopt;
    t0 = t1;
    f0 = f1;
  }
  if (!bracketed) return std::nullopt;

  for (int i = 0; i < opt.bisections; ++i) {
    const double tm = 0.5 * (bracket_lo + bracket_hi);
    const double fm = f_at(tm);
    if ((f_lo > 0.0) != (fm > 0.0)) {
      bracket_hi = tm;
      f_hi = fm;
    } else {
      bracket_lo = tm;
      f_lo = fm;
    }
  }
  (void)f_hi;

  // Newton polish (clipped to the bracket) so the root is converged far below
  // any finite-difference probe used on top of it.
  double t = 0.5 * (bracket_lo + bracket_hi);
  for (int i = 0; i < opt.newton_steps; ++i) {
    auto [fv, gv] = eval_grad(field, ray.point_at(t));
    if (std::abs(fv) < 1e-13) break;
    const double slope = gv.dot(ray.direction);
    double tn = (std::abs(slope) > 1e-9) ? t - fv / slope : 0.5 * (bracket_lo + bracket_hi);
    if (tn <= bracket_lo || tn >= bracket_hi) tn = 0.5 * (bracket_lo + bracket_hi);
    if ((f_lo > 0.0) != (fv > 0.0))
      bracket_hi = t;
    else
      bracket_lo = t;
    t = tn;
  }
  if (std::abs(f_at(t)) > opt.f_tol) return std::nullopt;
  return TraceHit{t, ray.point_at(t)};
}

/// Taped variant: the traced point is recorded with an implicit-function
/// backward, so gradients flow into the ray (hence the pose) and the field.
inline std::optional<Vec3<ad::Value>> trace_surface_taped(const RayT<ad::Value>& ray,
                                                          const SdfField& field,
                                                          const TraceOptions& opt = TraceOptions{}) {
  const Ray plain{Vec3d(detach(ray.origin[0]), detach(ray.origin[1]), detach(ray.origin[2])),
                  Vec3d(detach(ray.direction[0]), detach(ray.direction[1]), detach(ray.direction[2]))};
  auto hit = trace_surface(plain, field, opt, field.bbox());
  if (!hit) return std::nullopt;
  const Vec3d grad = field.gradient(hit->x);
  return ad::active_tape()->record_trace(ray.origin, ray.direction, hit->x, hit->s, grad);
}

/// Full-view render in the double path: camera-z depth, camera-space unit
/// normals and opacity per pixel. Pixels below the opacity threshold stay
/// invalid (background).
struct ViewRender {
  DepthMap depth;
  NormalMap normal;
  Eigen::MatrixXd opacity;
};
ViewRender render_view(const SdfField& field, const Pose& pose, const CameraIntrinsics& intr,
                       int samples = 256, double opacity_threshold = 0.5);

/// 1 iff x projects inside the image, lies in front of the camera, and the
/// camera ray reaches x without an earlier surface crossing (delta matching).
/// Non-differentiable by design: callers treat it as a constant mask.
template <typename Field>
int visibility(const Vec3d& x, const Pose& view_pose, const CameraIntrinsics& intr,
               const Field& field, double delta = 5e-3, const Aabb& box = Aabb{}) {
  const PoseT<double> pose = materialize(view_pose);
  if (camera_depth(x, pose) <= kMinCameraDepth) return 0;
  const Vec2d uv = project(x, pose, intr);
  if (!intr.in_bounds(uv[0], uv[1])) return 0;
  const Vec3d center = camera_center(pose);
  Vec3d dir = x - center;
  const double dist = dir.norm();
  if (dist < 1e-9) return 0;
  dir /= dist;
  auto hit = trace_surface(Ray{center, dir}, field, TraceOptions{}, box);
  if (!hit) return 0;
  return (hit->x - x).norm() <= delta ? 1 : 0;
}

}  // namespace mvnr
