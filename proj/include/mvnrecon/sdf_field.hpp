// SPDX-License-Identifier: Apache-2.0
#pragma once

// Parametric signed-distance field over [-1,1]^3.
//
// A dense multiresolution feature lattice (trilinear interpolation per level)
// feeds a small softplus MLP that maps the concatenated per-level features to
// a scalar. Spatial gradients are exact analytic derivatives of that
// composition, and the fused VJP also differentiates *through* the spatial
// gradient (the second-order path needed by Eikonal-style penalties and by
// normals rendered from grad f).
//
// All optimizable scalars live in one flat vector:
//   [ grid level 0 | ... | grid level L-1 | W1 b1 ... W_out b_out | log s ]
// Grid vertex (ix,iy,iz) of a level with resolution R stores `features`
// consecutive scalars at ((ix*(R+1) + iy)*(R+1) + iz)*features.

#include "mvnrecon/autodiff.hpp"
#include "mvnrecon/common.hpp"

#include <atomic>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace mvnr {

/// Flat vector of every optimizable scalar of a field (sharpness included).
using ParamVector = VecXd;

struct FieldConfig {
  int levels = 4;
  int base_resolution = 16;
  int growth = 2;
  int features = 2;
  int hidden_width = 32;
  int hidden_layers = 2;
  double init_sharpness = 30.0;

  std::vector<int> resolutions() const;
  void validate() const;
};

class SdfField : public ad::FusedField {
 public:
  explicit SdfField(const FieldConfig& cfg = FieldConfig{}, std::uint64_t seed = 1);

  // the warning counter is atomic, so spell out copies/moves
  SdfField(const SdfField& o)
      : cfg_(o.cfg_), layout_(o.layout_), params_(o.params_), bbox_(o.bbox_),
        clamp_warnings_(o.clamp_warnings_.load()) {}
  SdfField& operator=(const SdfField& o) {
    cfg_ = o.cfg_;
    layout_ = o.layout_;
    params_ = o.params_;
    bbox_ = o.bbox_;
    clamp_warnings_.store(o.clamp_warnings_.load());
    return *this;
  }

  const FieldConfig& config() const { return cfg_; }
  int parameter_count() const override { return static_cast<int>(params_.size()); }
  const ParamVector& parameters() const { return params_; }
  void set_parameters(const ParamVector& p);

  double log_sharpness() const { return params_[params_.size() - 1]; }
  void set_log_sharpness(double v);
  double sharpness() const { return std::exp(log_sharpness()); }
  static constexpr double kLogSharpnessMin = -2.0;
  static constexpr double kLogSharpnessMax = 7.0;

  double eval(const Vec3d& x) const;
  Vec3d gradient(const Vec3d& x) const;
  void eval_grad_raw(const Vec3d& x, double& f, Vec3d& g) const override;
  void fused_vjp(const Vec3d& x, double fbar, const Vec3d& gbar, Vec3d* xbar,
                 double* theta_grad) const override;

  /// Fits the field to the signed distance of a centered sphere and sets the
  /// sharpness to its configured initial value.
  void init_sphere(double radius, std::uint64_t seed = 7);

  // flat-vector layout, also part of the checkpoint byte layout
  int grid_offset(int level) const { return layout_.grid_offset.at(level); }
  int grid_resolution(int level) const { return layout_.grid_res.at(level); }
  int mlp_offset() const { return layout_.mlp_offset; }
  int feature_dim() const { return layout_.feature_dim; }

  const Aabb& bbox() const { return bbox_; }
  /// Evaluations at points outside the bbox are clamped; the count is kept
  /// so callers can surface the warning.
  std::int64_t clamp_warnings() const { return clamp_warnings_.load(); }

  void save(const std::string& path) const;
  static SdfField load(const std::string& path);

 private:
  struct Layout {
    std::vector<int> grid_offset;  // per level
    std::vector<int> grid_res;
    int mlp_offset = 0;
    int feature_dim = 0;  // levels * features
    int total = 0;        // including log s
  };
  void build_layout();

  FieldConfig cfg_;
  Layout layout_;
  ParamVector params_;
  Aabb bbox_;
  mutable std::atomic<std::int64_t> clamp_warnings_{0};
};

// eval_grad free functions let rendering code dispatch by scalar type.
inline std::pair<double, Vec3d> eval_grad(const SdfField& field, const Vec3d& x) {
  double f;
  Vec3d g;
  field.eval_grad_raw(x, f, g);
  return {f, g};
}
inline std::pair<ad::Value, Vec3<ad::Value>> eval_grad(const SdfField& field,
                                                       const Vec3<ad::Value>& x) {
  (void)field;  // the active tape is bound to this field
  return ad::active_tape()->field_eval(x);
}

/// Reverse-mode gradient of a composed scalar loss with respect to every
/// field parameter (log s last). The closure builds the loss on the given
/// tape; the field's parameters stay fixed while it runs.
ParamVector parameter_gradients(const SdfField& field,
                                const std::function<ad::Value(ad::Tape&, ad::Value log_s)>& loss);

}  // namespace mvnr
