// SPDX-License-Identifier: Apache-2.0
#pragma once

// Single-view normal integration: recover a relative depth map from a
// camera-space normal map by least-squares matching of the implied depth
// gradients. Orthographic integration works on depth directly; perspective
// integration substitutes log depth, which keeps the problem linear and
// leaves a global multiplicative scale free.
//
// Discretization: per pixel and axis, forward and backward one-sided
// differences are both penalized at half weight. The normal equations are
// solved by conjugate gradients; the constant (resp. scale) gauge is fixed
// per connected component of the valid domain.

#include "mvnrecon/common.hpp"
#include "mvnrecon/geometry.hpp"
#include "mvnrecon/images.hpp"

namespace mvnr {

struct IntegrationOptions {
  double cg_tolerance = 1e-8;  // relative residual
  int max_iter_factor = 10;    // cap = factor * |Omega|
  // Optional discontinuity-preserving reweighting (off by default).
  bool bilateral = false;
  double stiffness = 2.0;
  int reweight_iterations = 3;
};

/// p = -nx/nz, q = -ny/nz; pixels with |nz| < eps_z become invalid.
GradientField normals_to_gradients(const NormalMap& nmap, double eps_z = 1e-4);

/// Minimizer of the discrete gradient-matching functional, zero mean per
/// connected component. Throws InputError on an empty domain.
DepthMap integrate_orthographic(const GradientField& g, const IntegrationOptions& opt = {});

/// Log-depth perspective integration; output is positive with geometric mean
/// one per connected component. Pixels where the projective denominator
/// n . (u~/fx, v~/fy, 1) vanishes are dropped from the domain.
DepthMap integrate_perspective(const NormalMap& nmap, const CameraIntrinsics& intr,
                               const IntegrationOptions& opt = {}, double eps_dot = 1e-4);

/// One-sided weights in (0,1), sigmoid of the squared-residual asymmetry of
/// the two one-sided differences. `up` weights the forward u difference, etc.
struct BilateralWeights {
  Eigen::MatrixXd up, um, vp, vm;
};
BilateralWeights bilateral_weights(const GradientField& g, const DepthMap& z, double stiffness);

/// 4-connected components of the valid domain; -1 outside. Returns count.
int connected_components(const MaskGrid& valid, Eigen::MatrixXi& labels);

}  // namespace mvnr
