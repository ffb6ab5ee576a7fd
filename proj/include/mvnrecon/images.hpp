// SPDX-License-Identifier: Apache-2.0
#pragma once

// Per-view image-plane fields. Matrices are indexed (row, col) = (v, u);
// `valid` marks the shared pixel domain where a field is defined.

#include "mvnrecon/common.hpp"

namespace mvnr {

using MaskGrid = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

/// Camera-space unit normals on the valid domain. Visible surfaces face the
/// camera, so nz < 0 on valid pixels (camera looks down +z).
struct NormalMap {
  Eigen::MatrixXd nx, ny, nz;
  MaskGrid valid;

  int height() const { return static_cast<int>(nx.rows()); }
  int width() const { return static_cast<int>(nx.cols()); }
  Vec3d at(int row, int col) const { return Vec3d(nx(row, col), ny(row, col), nz(row, col)); }
  void resize(int h, int w) {
    nx.setZero(h, w);
    ny.setZero(h, w);
    nz.setZero(h, w);
    valid.setZero(h, w);
  }
};

/// Binary silhouette; value 1 marks the object.
struct Mask {
  MaskGrid m;
  int height() const { return static_cast<int>(m.rows()); }
  int width() const { return static_cast<int>(m.cols()); }
};

/// Depth per pixel. Rendered/ground-truth maps store camera-z depth in world
/// units; integrated maps carry an arbitrary per-view scale.
struct DepthMap {
  Eigen::MatrixXd z;
  MaskGrid valid;

  int height() const { return static_cast<int>(z.rows()); }
  int width() const { return static_cast<int>(z.cols()); }
  void resize(int h, int w) {
    z.setZero(h, w);
    valid.setZero(h, w);
  }
};

/// Per-pixel depth-gradient field (p, q) extracted from normals.
struct GradientField {
  Eigen::MatrixXd p, q;
  MaskGrid valid;

  int height() const { return static_cast<int>(p.rows()); }
  int width() const { return static_cast<int>(p.cols()); }
};

}  // namespace mvnr
