// SPDX-License-Identifier: Apache-2.0
#pragma once

// The five loss terms and their weighted total. All terms are batch means so
// magnitudes do not depend on batch size. Gradients do not flow through the
// per-view depth scale or through visibility masks; the traced point inside
// the consistency loss *is* differentiated (implicit function theorem), since
// moving the surface or the reference camera moves the correspondences.

#include "mvnrecon/autodiff.hpp"
#include "mvnrecon/common.hpp"
#include "mvnrecon/geometry.hpp"
#include "mvnrecon/images.hpp"
#include "mvnrecon/renderer.hpp"

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mvnr {

struct LossWeights {
  double normal = 1.0;
  double ni = 0.5;
  double consistency = 0.1;
  double eikonal = 0.1;
  double mask = 1.0;

  void validate() const;
};

template <typename S>
struct LossTerms {
  S normal{0.0};
  S ni{0.0};
  S consistency{0.0};
  S eikonal{0.0};
  S mask{0.0};
};

struct LossBreakdown {
  double normal = 0, ni = 0, consistency = 0, eikonal = 0, mask = 0;
  double total = 0;
};

enum class ScaleMode { paper, residual_consistent };

template <typename S>
Vec3<S> normalize_guarded(const Vec3<S>& v, double eps = 1e-8) {
  using std::sqrt;
  const S n = sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) + S(eps);
  return Vec3<S>(v[0] / n, v[1] / n, v[2] / n);
}

// ---- world-to-camera surface normal loss ------------------------------------

template <typename S>
struct NormalSample {
  Vec3<S> rendered_world;  // unnormalized rendering accumulation
  Mat3<S> rotation;        // world->camera of the sample's view
  Vec3d observed;          // unit camera-space normal from the input map
};

/// Mean over the batch of || R normalize(n_hat_w) - n_c ||^2.
template <typename S>
S loss_normal(const std::vector<NormalSample<S>>& batch) {
  if (batch.empty()) return S(0.0);
  S sum(0.0);
  for (const auto& s : batch) {
    const Vec3<S> nw = normalize_guarded(s.rendered_world);
    const Vec3<S> nc = s.rotation * nw;
    for (int a = 0; a < 3; ++a) {
      const S d = nc[a] - S(s.observed[a]);
      sum += d * d;
    }
  }
  return sum / S(static_cast<double>(batch.size()));
}

// ---- integrated-depth anchor -------------------------------------------------

/// Per-view least-squares scale between the integration anchor and the
/// rendered depth, over paired valid samples. Stop-gradient by construction.
double scale_ls(std::span<const double> z_anchor, std::span<const double> z_render,
                ScaleMode mode = ScaleMode::paper);
double scale_ls(const DepthMap& z_anchor, const DepthMap& z_render,
                ScaleMode mode = ScaleMode::paper);

template <typename S>
struct NiView {
  std::vector<S> z_render;
  std::vector<double> z_anchor;
  double scale = 1.0;
};

/// Sum over views of the per-view mean |z_r - alpha z_ni|.
template <typename S>
S loss_ni(const std::vector<NiView<S>>& views) {
  using ad::abs;
  using std::abs;
  S sum(0.0);
  for (const auto& view : views) {
    if (view.z_render.empty()) continue;
    S view_sum(0.0);
    for (std::size_t i = 0; i < view.z_render.size(); ++i)
      view_sum += abs(view.z_render[i] - S(view.scale * view.z_anchor[i]));
    sum += view_sum / S(static_cast<double>(view.z_render.size()));
  }
  return sum;
}

// ---- silhouette loss ---------------------------------------------------------

template <typename S>
struct MaskView {
  std::vector<S> opacity;      // rendered
  std::vector<double> target;  // binary input mask values
};

/// Sum over views of the per-view mean binary cross entropy.
template <typename S>
S loss_mask(const std::vector<MaskView<S>>& views, double eps = 1e-4) {
  using ad::log;
  using ad::max;
  using ad::min;
  using std::log;
  using std::max;
  using std::min;
  S sum(0.0);
  for (const auto& view : views) {
    if (view.opacity.empty()) continue;
    S view_sum(0.0);
    for (std::size_t i = 0; i < view.opacity.size(); ++i) {
      const S o = min(max(view.opacity[i], S(eps)), S(1.0 - eps));
      const double t = view.target[i];
      view_sum += -(S(t) * log(o) + S(1.0 - t) * log(S(1.0) - o));
    }
    sum += view_sum / S(static_cast<double>(view.opacity.size()));
  }
  return sum;
}

// ---- Eikonal regularizer -----------------------------------------------------

/// Mean of (||grad f|| - 1)^2 at fixed sample points.
template <typename S, typename Field>
S loss_eikonal(const Field& field, const std::vector<Vec3d>& points) {
  using std::sqrt;
  if (points.empty()) return S(0.0);
  S sum(0.0);
  for (const Vec3d& p : points) {
    auto [f, g] = eval_grad(field, Vec3<S>(S(p[0]), S(p[1]), S(p[2])));
    (void)f;
    const S norm = sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2] + S(1e-18));
    const S d = norm - S(1.0);
    sum += d * d;
  }
  return sum / S(static_cast<double>(points.size()));
}

// ---- multi-view normal consistency -------------------------------------------

/// Bilinear sample of a normal map at continuous pixel coordinates; nullopt
/// when any of the four texels is outside the valid domain.
template <typename S>
std::optional<Vec3<S>> sample_normal_bilinear(const NormalMap& nm, const S& u, const S& v) {
  const double ud = detach(u), vd = detach(v);
  const int c0 = static_cast<int>(std::floor(ud));
  const int r0 = static_cast<int>(std::floor(vd));
  if (c0 < 0 || r0 < 0 || c0 + 1 >= nm.width() || r0 + 1 >= nm.height()) return std::nullopt;
  if (!nm.valid(r0, c0) || !nm.valid(r0, c0 + 1) || !nm.valid(r0 + 1, c0) ||
      !nm.valid(r0 + 1, c0 + 1))
    return std::nullopt;
  const S fu = u - S(static_cast<double>(c0));
  const S fv = v - S(static_cast<double>(r0));
  const S w00 = (S(1.0) - fu) * (S(1.0) - fv);
  const S w10 = fu * (S(1.0) - fv);
  const S w01 = (S(1.0) - fu) * fv;
  const S w11 = fu * fv;
  Vec3<S> out;
  const Vec3d n00 = nm.at(r0, c0), n10 = nm.at(r0, c0 + 1);
  const Vec3d n01 = nm.at(r0 + 1, c0), n11 = nm.at(r0 + 1, c0 + 1);
  for (int a = 0; a < 3; ++a)
    out[a] = w00 * S(n00[a]) + w10 * S(n10[a]) + w01 * S(n01[a]) + w11 * S(n11[a]);
  return out;
}

namespace detail {
template <typename Field>
std::optional<Vec3d> traced_point(const Field& field, const RayT<double>& ray) {
  auto hit = trace_surface(ray, field);
  if (!hit) return std::nullopt;
  return hit->x;
}
inline std::optional<Vec3<ad::Value>> traced_point(const SdfField& field,
                                                   const RayT<ad::Value>& ray) {
  return trace_surface_taped(ray, field);
}
}  // namespace detail

/// Per-view inputs for the consistency loss.
template <typename S>
struct ConsistencyView {
  PoseT<S> pose;            // differentiable when S is a taped scalar
  Pose pose_plain;          // same pose, used for the visibility trace
  const NormalMap* normals = nullptr;
  CameraIntrinsics intr;
};

/// Traces the surface through each reference pixel, projects the hit into
/// every other view, and penalizes disagreement of the world-space normals
/// implied by the observed camera-space normal maps. Mean over the
/// (pixel, visible view) pairs that survive the visibility test.
template <typename S, typename Field>
S loss_consistency(const std::vector<ConsistencyView<S>>& views, int ref_index,
                   const std::vector<std::pair<int, int>>& ref_pixels, const Field& field,
                   double visibility_delta = 5e-3) {
  if (views.size() < 2 || ref_pixels.empty()) return S(0.0);
  const auto& ref = views[ref_index];
  S sum(0.0);
  int pairs = 0;
  for (const auto& [pu, pv] : ref_pixels) {
    if (!ref.normals->valid(pv, pu)) continue;
    const RayT<S> ray = camera_ray(static_cast<double>(pu), static_cast<double>(pv), ref.pose, ref.intr);
    const auto x = detail::traced_point(field, ray);
    if (!x) continue;
    const Vec3d x_plain(detach((*x)[0]), detach((*x)[1]), detach((*x)[2]));

    const Vec3d n_ref_cam = ref.normals->at(pv, pu);
    const Vec3<S> n_ref_world =
        ref.pose.R.transpose() * Vec3<S>(S(n_ref_cam[0]), S(n_ref_cam[1]), S(n_ref_cam[2]));

    for (std::size_t i = 0; i < views.size(); ++i) {
      if (static_cast<int>(i) == ref_index) continue;
      const auto& other = views[i];
      if (!visibility(x_plain, other.pose_plain, other.intr, field, visibility_delta)) continue;
      const auto uv = project(*x, other.pose, other.intr);
      const auto sampled = sample_normal_bilinear(*other.normals, uv[0], uv[1]);
      if (!sampled) continue;
      const Vec3<S> n_other_world = other.pose.R.transpose() * normalize_guarded(*sampled);
      for (int a = 0; a < 3; ++a) {
        const S d = n_ref_world[a] - n_other_world[a];
        sum += d * d;
      }
      ++pairs;
    }
  }
  if (pairs == 0) return S(0.0);
  return sum / S(static_cast<double>(pairs));
}

// ---- weighted total ----------------------------------------------------------

/// Weighted sum; terms with zero weight contribute nothing (and callers skip
/// computing them). Throws NumericError naming the first non-finite term.
template <typename S>
S total_loss(const LossTerms<S>& t, const LossWeights& w) {
  w.validate();
  const struct {
    const char* name;
    const S* term;
    double weight;
  } entries[] = {{"normal", &t.normal, w.normal},
                 {"ni", &t.ni, w.ni},
                 {"consistency", &t.consistency, w.consistency},
                 {"eikonal", &t.eikonal, w.eikonal},
                 {"mask", &t.mask, w.mask}};
  S total(0.0);
  for (const auto& e : entries) {
    if (!std::isfinite(detach(*e.term)))
      throw NumericError(std::string("total_loss: non-finite term '") + e.name + "'");
    if (e.weight != 0.0) total += S(e.weight) * (*e.term);
  }
  return total;
}

template <typename S>
LossBreakdown make_breakdown(const LossTerms<S>& t, const LossWeights& w) {
  LossBreakdown b;
  b.normal = detach(t.normal);
  b.ni = detach(t.ni);
  b.consistency = detach(t.consistency);
  b.eikonal = detach(t.eikonal);
  b.mask = detach(t.mask);
  b.total = w.normal * b.normal + w.ni * b.ni + w.consistency * b.consistency +
            w.eikonal * b.eikonal + w.mask * b.mask;
  return b;
}

}  // namespace mvnr
