// SPDX-License-Identifier: Apache-2.0
#include "mvnrecon/renderer.hpp"

#include "mvnrecon/images.hpp"

namespace mvnr {

ViewRender render_view(const SdfField& field, const Pose& pose, const CameraIntrinsics& intr,
                       int samples, double opacity_threshold) {
  intr.validate();
  ViewRender out;
  out.depth.resize(intr.height, intr.width);
  out.normal.resize(intr.height, intr.width);
  out.opacity.setZero(intr.height, intr.width);
  const PoseT<double> p = materialize(pose);
  const Mat3d R = p.R;
  const double s = field.sharpness();
  for (int r = 0; r < intr.height; ++r)
    for (int c = 0; c < intr.width; ++c) {
      const Ray ray = camera_ray(static_cast<double>(c), static_cast<double>(r), p, intr);
      const PixelRender px = render_pixel(ray, field, s, samples, false, nullptr, field.bbox());
      out.opacity(r, c) = px.opacity;
      if (px.opacity < opacity_threshold) continue;
      out.depth.z(r, c) = px.depth * ray_depth_cosine(c, r, intr);
      out.depth.valid(r, c) = 1;
      Vec3d n = px.normal;
      const double nn = n.norm();
      if (nn > 1e-12) {
        n = R * (n / nn);  // camera space, unit
        out.normal.nx(r, c) = n[0];
        out.normal.ny(r, c) = n[1];
        out.normal.nz(r, c) = n[2];
        out.normal.valid(r, c) = 1;
      }
    }
  return out;
}

}  // namespace mvnr
