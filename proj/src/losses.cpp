// SPDX-License-Identifier: Apache-2.0
#include "mvnrecon/losses.hpp"

namespace mvnr {

void LossWeights::validate() const {
  const double vals[] = {normal, ni, consistency, eikonal, mask};
  for (double v : vals)
    if (!(v >= 0.0) || !std::isfinite(v))
      throw InputError("loss weights must be finite and non-negative");
}

double scale_ls(std::span<const double> z_anchor, std::span<const double> z_render,
                ScaleMode mode) {
  if (z_anchor.size() != z_render.size())
    throw InputError("scale_ls: anchor/render size mismatch");
  if (z_anchor.empty()) throw InputError("scale_ls: empty domain");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < z_anchor.size(); ++i) {
    num += z_anchor[i] * z_render[i];
    den += mode == ScaleMode::paper ? z_render[i] * z_render[i] : z_anchor[i] * z_anchor[i];
  }
  if (den < 1e-12)
    throw NumericError("scale_ls: degenerate rendered depth (collapsed geometry?)");
  return num / den;
}

double scale_ls(const DepthMap& z_anchor, const DepthMap& z_render, ScaleMode mode) {
  if (z_anchor.width() != z_render.width() || z_anchor.height() != z_render.height())
    throw InputError("scale_ls: depth map size mismatch");
  std::vector<double> a, r;
  for (int row = 0; row < z_anchor.height(); ++row)
    for (int col = 0; col < z_anchor.width(); ++col)
      if (z_anchor.valid(row, col) && z_render.valid(row, col)) {
        a.push_back(z_anchor.z(row, col));
        r.push_back(z_render.z(row, col));
      }
  return scale_ls(std::span<const double>(a), std::span<const double>(r), mode);
}

}  // namespace mvnr
