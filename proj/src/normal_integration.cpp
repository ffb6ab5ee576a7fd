// SPDX-License-Identifier: Apache-2.0
#include "mvnrecon/normal_integration.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCore>

#include <cmath>
#include <queue>
#include <vector>

namespace mvnr {

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct Domain {
  Eigen::MatrixXi index;  // pixel -> unknown id, -1 outside
  std::vector<std::pair<int, int>> pixels;
  Eigen::MatrixXi labels;
  int components = 0;
};

Domain build_domain(const MaskGrid& valid) {
  Domain d;
  const int h = static_cast<int>(valid.rows());
  const int w = static_cast<int>(valid.cols());
  d.index.setConstant(h, w, -1);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      if (valid(r, c)) {
        d.index(r, c) = static_cast<int>(d.pixels.size());
        d.pixels.emplace_back(r, c);
      }
  if (d.pixels.empty()) throw InputError("normal integration: empty valid domain");
  d.components = connected_components(valid, d.labels);
  return d;
}

// One residual row sqrt(w) * (z[to] - z[from] - g) stacked into B z = rhs.
struct ResidualRows {
  std::vector<Eigen::Triplet<double>> triplets;
  std::vector<double> rhs;

  void add(int row_from, int row_to, double g, double weight) {
    const double s = std::sqrt(weight);
    const int r = static_cast<int>(rhs.size());
    triplets.emplace_back(r, row_to, s);
    triplets.emplace_back(r, row_from, -s);
    rhs.push_back(s * g);
  }
};

VecXd solve_least_squares(const Domain& dom, const ResidualRows& rows,
                          const IntegrationOptions& opt) {
  const int n = static_cast<int>(dom.pixels.size());
  Eigen::SparseMatrix<double> B(static_cast<int>(rows.rhs.size()), n);
  B.setFromTriplets(rows.triplets.begin(), rows.triplets.end());
  const Eigen::Map<const VecXd> g(rows.rhs.data(), static_cast<Eigen::Index>(rows.rhs.size()));

  Eigen::SparseMatrix<double> A = Eigen::SparseMatrix<double>(B.transpose()) * B;
  const VecXd b = B.transpose() * g;

  // A is PSD with a constant nullspace per component; b lies in range(A), so
  // Jacobi-preconditioned CG from zero converges to the minimum-norm
  // (per-component zero-mean) z.
  Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper> cg;
  cg.setTolerance(opt.cg_tolerance);
  cg.setMaxIterations(static_cast<Eigen::Index>(opt.max_iter_factor) * n);
  cg.compute(A);
  VecXd z = cg.solve(b);
  if (!z.allFinite()) throw NumericError("normal integration: solver produced non-finite depth");
  return z;
}

ResidualRows assemble(const Domain& dom, const GradientField& g, const BilateralWeights* bw) {
  ResidualRows rows;
  const int h = g.height();
  const int w = g.width();
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const int id = dom.index(r, c);
      if (id < 0) continue;
      // forward/backward one-sided differences, each at half weight
      if (c + 1 < w && dom.index(r, c + 1) >= 0)
        rows.add(id, dom.index(r, c + 1), g.p(r, c), 0.5 * (bw ? 2.0 * bw->up(r, c) : 1.0));
      if (c - 1 >= 0 && dom.index(r, c - 1) >= 0)
        rows.add(dom.index(r, c - 1), id, g.p(r, c), 0.5 * (bw ? 2.0 * bw->um(r, c) : 1.0));
      if (r + 1 < h && dom.index(r + 1, c) >= 0)
        rows.add(id, dom.index(r + 1, c), g.q(r, c), 0.5 * (bw ? 2.0 * bw->vp(r, c) : 1.0));
      if (r - 1 >= 0 && dom.index(r - 1, c) >= 0)
        rows.add(dom.index(r - 1, c), id, g.q(r, c), 0.5 * (bw ? 2.0 * bw->vm(r, c) : 1.0));
    }
  return rows;
}

void subtract_component_means(const Domain& dom, VecXd& z) {
  VecXd mean = VecXd::Zero(dom.components);
  Eigen::VectorXi count = Eigen::VectorXi::Zero(dom.components);
  for (std::size_t i = 0; i < dom.pixels.size(); ++i) {
    const auto [r, c] = dom.pixels[i];
    mean[dom.labels(r, c)] += z[static_cast<Eigen::Index>(i)];
    count[dom.labels(r, c)] += 1;
  }
  for (int k = 0; k < dom.components; ++k) mean[k] /= std::max(count[k], 1);
  for (std::size_t i = 0; i < dom.pixels.size(); ++i) {
    const auto [r, c] = dom.pixels[i];
    z[static_cast<Eigen::Index>(i)] -= mean[dom.labels(r, c)];
  }
}

DepthMap pack(const Domain& dom, const VecXd& z, int h, int w) {
  DepthMap out;
  out.resize(h, w);
  for (std::size_t i = 0; i < dom.pixels.size(); ++i) {
    const auto [r, c] = dom.pixels[i];
    out.z(r, c) = z[static_cast<Eigen::Index>(i)];
    out.valid(r, c) = 1;
  }
  return out;
}

DepthMap integrate_field(const GradientField& g, const IntegrationOptions& opt) {
  const Domain dom = build_domain(g.valid);
  VecXd z = solve_least_squares(dom, assemble(dom, g, nullptr), opt);
  if (opt.bilateral) {
    for (int it = 0; it < opt.reweight_iterations; ++it) {
      const BilateralWeights bw = bilateral_weights(g, pack(dom, z, g.height(), g.width()), opt.stiffness);
      z = solve_least_squares(dom, assemble(dom, g, &bw), opt);
    }
  }
  subtract_component_means(dom, z);
  return pack(dom, z, g.height(), g.width());
}

}  // namespace

int connected_components(const MaskGrid& valid, Eigen::MatrixXi& labels) {
  const int h = static_cast<int>(valid.rows());
  const int w = static_cast<int>(valid.cols());
  labels.setConstant(h, w, -1);
  int next = 0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      if (!valid(r, c) || labels(r, c) >= 0) continue;
      std::queue<std::pair<int, int>> q;
      q.emplace(r, c);
      labels(r, c) = next;
      while (!q.empty()) {
        const auto [cr, cc] = q.front();
        q.pop();
        const int dr[4] = {1, -1, 0, 0};
        const int dc[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          const int nr = cr + dr[k], nc = cc + dc[k];
          if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
          if (!valid(nr, nc) || labels(nr, nc) >= 0) continue;
          labels(nr, nc) = next;
          q.emplace(nr, nc);
        }
      }
      ++next;
    }
  return next;
}

GradientField normals_to_gradients(const NormalMap& nmap, double eps_z) {
  GradientField g;
  const int h = nmap.height();
  const int w = nmap.width();
  g.p.setZero(h, w);
  g.q.setZero(h, w);
  g.valid.setZero(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      if (!nmap.valid(r, c)) continue;
      const double nz = nmap.nz(r, c);
      if (std::abs(nz) < eps_z) continue;  // grazing normal, no finite slope
      g.p(r, c) = -nmap.nx(r, c) / nz;
      g.q(r, c) = -nmap.ny(r, c) / nz;
      g.valid(r, c) = 1;
    }
  return g;
}

DepthMap integrate_orthographic(const GradientField& g, const IntegrationOptions& opt) {
  return integrate_field(g, opt);
}

DepthMap integrate_perspective(const NormalMap& nmap, const CameraIntrinsics& intr,
                               const IntegrationOptions& opt, double eps_dot) {
  intr.validate();
  const int h = nmap.height();
  const int w = nmap.width();
  GradientField g;
  g.p.setZero(h, w);
  g.q.setZero(h, w);
  g.valid.setZero(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      if (!nmap.valid(r, c)) continue;
      const double nx = nmap.nx(r, c), ny = nmap.ny(r, c), nz = nmap.nz(r, c);
      const double denom = (c - intr.cx) * nx / intr.fx + (r - intr.cy) * ny / intr.fy + nz;
      if (std::abs(denom) < eps_dot) continue;
      g.p(r, c) = -(nx / intr.fx) / denom;  // d(log z)/du
      g.q(r, c) = -(ny / intr.fy) / denom;  // d(log z)/dv
      g.valid(r, c) = 1;
    }
  DepthMap logz = integrate_field(g, opt);
  DepthMap out = logz;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      if (out.valid(r, c)) out.z(r, c) = std::exp(logz.z(r, c));
  return out;
}

BilateralWeights bilateral_weights(const GradientField& g, const DepthMap& z, double stiffness) {
  if (!(stiffness > 0)) throw InputError("bilateral_weights: stiffness must be positive");
  const int h = g.height();
  const int w = g.width();
  BilateralWeights bw;
  bw.up = Eigen::MatrixXd::Constant(h, w, 0.5);
  bw.um = bw.up;
  bw.vp = bw.up;
  bw.vm = bw.up;
  auto ok = [&](int r, int c) { return r >= 0 && r < h && c >= 0 && c < w && z.valid(r, c); };
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      if (!g.valid(r, c) || !z.valid(r, c)) continue;
      if (ok(r, c + 1) && ok(r, c - 1)) {
        const double ap = z.z(r, c + 1) - z.z(r, c) - g.p(r, c);
        const double am = z.z(r, c) - z.z(r, c - 1) - g.p(r, c);
        bw.up(r, c) = sigmoid(stiffness * (am * am - ap * ap));
        bw.um(r, c) = 1.0 - bw.up(r, c);
      }
      if (ok(r + 1, c) && ok(r - 1, c)) {
        const double ap = z.z(r + 1, c) - z.z(r, c) - g.q(r, c);
        const double am = z.z(r, c) - z.z(r - 1, c) - g.q(r, c);
        bw.vp(r, c) = sigmoid(stiffness * (am * am - ap * ap));
        bw.vm(r, c) = 1.0 - bw.vp(r, c);
      }
    }
  return bw;
}

}  // namespace mvnr
