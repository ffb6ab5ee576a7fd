// SPDX-License-Identifier: Apache-2.0
#include "mvnrecon/sdf_field.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian; big-endian hosts are unsupported");

namespace mvnr {

namespace {

constexpr int kMaxHidden = 64;
constexpr int kMaxFeatureDim = 32;

using VecH = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxHidden, 1>;
using MatH3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::ColMajor, kMaxHidden, 3>;
using MapMat = Eigen::Map<const Eigen::MatrixXd>;
using MapVec = Eigen::Map<const Eigen::VectorXd>;

double softplus(double z) {
  if (z > 30.0) return z;
  if (z < -30.0) return std::exp(z);
  return std::log1p(std::exp(z));
}
double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct CellCoords {
  int i[3];
  double t[3];
};

// Half-open cell indexing: a lattice plane belongs to the cell on its
// positive side, except the last plane which closes the last cell.
CellCoords locate(const Vec3d& x, int res) {
  CellCoords c;
  for (int a = 0; a < 3; ++a) {
    const double s = (x[a] + 1.0) * 0.5 * res;
    int i = static_cast<int>(std::floor(s));
    if (i < 0) i = 0;
    if (i > res - 1) i = res - 1;
    c.i[a] = i;
    c.t[a] = s - i;
  }
  return c;
}

}  // namespace

std::vector<int> FieldConfig::resolutions() const {
  std::vector<int> r(levels);
  int res = base_resolution;
  for (int l = 0; l < levels; ++l) {
    r[l] = res;
    res *= growth;
  }
  return r;
}

void FieldConfig::validate() const {
  if (levels < 1 || levels > 8) throw InputError("field config: levels must be in [1,8]");
  if (features < 1 || features > 4) throw InputError("field config: features must be in [1,4]");
  if (levels * features > kMaxFeatureDim) throw InputError("field config: feature dim too large");
  if (base_resolution < 2 || growth < 1) throw InputError("field config: bad lattice sizes");
  if (hidden_width < 4 || hidden_width > kMaxHidden)
    throw InputError("field config: hidden width must be in [4,64]");
  if (hidden_layers < 1 || hidden_layers > 4)
    throw InputError("field config: hidden layers must be in [1,4]");
  if (!(init_sharpness > 0)) throw InputError("field config: sharpness must be positive");
}

void SdfField::build_layout() {
  layout_.grid_offset.clear();
  layout_.grid_res = cfg_.resolutions();
  int ofs = 0;
  for (int l = 0; l < cfg_.levels; ++l) {
    layout_.grid_offset.push_back(ofs);
    const int n = layout_.grid_res[l] + 1;
    ofs += n * n * n * cfg_.features;
  }
  layout_.mlp_offset = ofs;
  layout_.feature_dim = cfg_.levels * cfg_.features;
  const int d = layout_.feature_dim;
  const int h = cfg_.hidden_width;
  ofs += h * d + h;                                  // input layer
  ofs += (cfg_.hidden_layers - 1) * (h * h + h);     // middle layers
  ofs += h + 1;                                      // linear output
  layout_.total = ofs + 1;                           // + log s
}

SdfField::SdfField(const FieldConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  build_layout();
  params_.setZero(layout_.total);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int l = 0; l < cfg_.levels; ++l) {
    const int n = layout_.grid_res[l] + 1;
    const int count = n * n * n * cfg_.features;
    for (int i = 0; i < count; ++i) params_[layout_.grid_offset[l] + i] = 1e-4 * gauss(rng);
  }
  int ofs = layout_.mlp_offset;
  int fan_in = layout_.feature_dim;
  for (int layer = 0; layer <= cfg_.hidden_layers; ++layer) {
    const int rows = (layer == cfg_.hidden_layers) ? 1 : cfg_.hidden_width;
    const double std_w = std::sqrt(2.0 / fan_in);
    for (int i = 0; i < rows * fan_in; ++i) params_[ofs + i] = std_w * gauss(rng);
    ofs += rows * fan_in + rows;  // biases stay zero
    fan_in = cfg_.hidden_width;
  }
  params_[layout_.total - 1] = std::log(cfg_.init_sharpness);
}

void SdfField::set_parameters(const ParamVector& p) {
  if (p.size() != params_.size()) throw InputError("set_parameters: size mismatch");
  if (!p.allFinite()) throw InputError("set_parameters: non-finite parameters");
  params_ = p;
  set_log_sharpness(p[p.size() - 1]);  // re-apply the clamp
}

void SdfField::set_log_sharpness(double v) {
  params_[params_.size() - 1] = std::clamp(v, kLogSharpnessMin, kLogSharpnessMax);
}

double SdfField::eval(const Vec3d& x) const {
  double f;
  Vec3d g;
  eval_grad_raw(x, f, g);
  return f;
}

Vec3d SdfField::gradient(const Vec3d& x) const {
  double f;
  Vec3d g;
  eval_grad_raw(x, f, g);
  return g;
}

void SdfField::eval_grad_raw(const Vec3d& x_in, double& f, Vec3d& g) const {
  Vec3d x = x_in;
  bool live[3] = {true, true, true};
  if (!bbox_.contains(x)) {
    clamp_warnings_.fetch_add(1, std::memory_order_relaxed);
    for (int a = 0; a < 3; ++a) {
      if (x[a] < bbox_.lo[a] || x[a] > bbox_.hi[a]) live[a] = false;
    }
    x = bbox_.clamp(x);
  }

  const int d = layout_.feature_dim;
  const int fdim = cfg_.features;
  VecH h = VecH::Zero(d);
  MatH3 G = MatH3::Zero(d, 3);
  const double* theta = params_.data();

  for (int l = 0; l < cfg_.levels; ++l) {
    const int res = layout_.grid_res[l];
    const int n = res + 1;
    const double scale = 0.5 * res;
    const CellCoords cc = locate(x, res);
    const double u[3][2] = {{1.0 - cc.t[0], cc.t[0]}, {1.0 - cc.t[1], cc.t[1]}, {1.0 - cc.t[2], cc.t[2]}};
    for (int corner = 0; corner < 8; ++corner) {
      const int bx = corner & 1, by = (corner >> 1) & 1, bz = (corner >> 2) & 1;
      const double sx = bx ? 1.0 : -1.0, sy = by ? 1.0 : -1.0, sz = bz ? 1.0 : -1.0;
      const double wx = u[0][bx], wy = u[1][by], wz = u[2][bz];
      const double w = wx * wy * wz;
      const double dw[3] = {live[0] ? scale * sx * wy * wz : 0.0,
                            live[1] ? scale * wx * sy * wz : 0.0,
                            live[2] ? scale * wx * wy * sz : 0.0};
      const int vid = ((cc.i[0] + bx) * n + (cc.i[1] + by)) * n + (cc.i[2] + bz);
      const double* tv = theta + layout_.grid_offset[l] + vid * fdim;
      for (int k = 0; k < fdim; ++k) {
        const int row = l * fdim + k;
        h[row] += w * tv[k];
        G(row, 0) += dw[0] * tv[k];
        G(row, 1) += dw[1] * tv[k];
        G(row, 2) += dw[2] * tv[k];
      }
    }
  }

  // MLP forward with dual spatial-derivative channels.
  const int hw = cfg_.hidden_width;
  VecH a = h;
  MatH3 A = G;
  int ofs = layout_.mlp_offset;
  int prev = d;
  for (int layer = 0; layer < cfg_.hidden_layers; ++layer) {
    MapMat W(theta + ofs, hw, prev);
    MapVec b(theta + ofs + hw * prev, hw);
    VecH z = W * a + b;
    MatH3 Z = W * A;
    a.resize(hw);
    A.resize(hw, 3);
    for (int r = 0; r < hw; ++r) {
      a[r] = softplus(z[r]);
      const double s = sigmoid(z[r]);
      A.row(r) = s * Z.row(r);
    }
    ofs += hw * prev + hw;
    prev = hw;
  }
  MapVec wout(theta + ofs, hw);
  const double bout = theta[ofs + hw];
  f = wout.dot(a) + bout;
  g = (wout.transpose() * A).transpose();
}

void SdfField::fused_vjp(const Vec3d& x_in, double fbar, const Vec3d& gbar, Vec3d* xbar,
                         double* theta_grad) const {
  if (!xbar && !theta_grad) return;

  Vec3d x = x_in;
  bool live[3] = {true, true, true};
  if (!bbox_.contains(x)) {
    for (int a = 0; a < 3; ++a)
      if (x[a] < bbox_.lo[a] || x[a] > bbox_.hi[a]) live[a] = false;
    x = bbox_.clamp(x);
  }

  const int d = layout_.feature_dim;
  const int fdim = cfg_.features;
  const int hw = cfg_.hidden_width;
  const int nl = cfg_.hidden_layers;
  const double* theta = params_.data();

  // Recomputed forward (cheaper than persisting intermediates per sample).
  VecH h = VecH::Zero(d);
  MatH3 G = MatH3::Zero(d, 3);
  for (int l = 0; l < cfg_.levels; ++l) {
    const int res = layout_.grid_res[l];
    const int n = res + 1;
    const double scale = 0.5 * res;
    const CellCoords cc = locate(x, res);
    const double u[3][2] = {{1.0 - cc.t[0], cc.t[0]}, {1.0 - cc.t[1], cc.t[1]}, {1.0 - cc.t[2], cc.t[2]}};
    for (int corner = 0; corner < 8; ++corner) {
      const int bx = corner & 1, by = (corner >> 1) & 1, bz = (corner >> 2) & 1;
      const double sx = bx ? 1.0 : -1.0, sy = by ? 1.0 : -1.0, sz = bz ? 1.0 : -1.0;
      const double wx = u[0][bx], wy = u[1][by], wz = u[2][bz];
      const double w = wx * wy * wz;
      const double dw[3] = {live[0] ? scale * sx * wy * wz : 0.0,
                            live[1] ? scale * wx * sy * wz : 0.0,
                            live[2] ? scale * wx * wy * sz : 0.0};
      const int vid = ((cc.i[0] + bx) * n + (cc.i[1] + by)) * n + (cc.i[2] + bz);
      const double* tv = theta + layout_.grid_offset[l] + vid * fdim;
      for (int k = 0; k < fdim; ++k) {
        const int row = l * fdim + k;
        h[row] += w * tv[k];
        G(row, 0) += dw[0] * tv[k];
        G(row, 1) += dw[1] * tv[k];
        G(row, 2) += dw[2] * tv[k];
      }
    }
  }

  VecH acts[5];   // a^0 .. a^{nl}
  MatH3 duals[5]; // A^0 .. A^{nl}
  VecH zs[5];     // z^1 .. z^{nl} stored at index of the producing layer
  acts[0] = h;
  duals[0] = G;
  int layer_ofs[5];
  int ofs = layout_.mlp_offset;
  int prev = d;
  for (int layer = 0; layer < nl; ++layer) {
    layer_ofs[layer] = ofs;
    MapMat W(theta + ofs, hw, prev);
    MapVec b(theta + ofs + hw * prev, hw);
    zs[layer + 1] = W * acts[layer] + b;
    MatH3 Z = W * duals[layer];
    acts[layer + 1].resize(hw);
    duals[layer + 1].resize(hw, 3);
    for (int r = 0; r < hw; ++r) {
      acts[layer + 1][r] = softplus(zs[layer + 1][r]);
      duals[layer + 1].row(r) = sigmoid(zs[layer + 1][r]) * Z.row(r);
    }
    ofs += hw * prev + hw;
    prev = hw;
  }
  const int out_ofs = ofs;
  MapVec wout(theta + out_ofs, hw);

  // Output layer backward: f = wout.a + b, g^T = wout^T A.
  VecH abar = wout * fbar;
  MatH3 Abar = wout * gbar.transpose();
  if (theta_grad) {
    for (int r = 0; r < hw; ++r)
      theta_grad[out_ofs + r] += fbar * acts[nl][r] + duals[nl].row(r).dot(gbar);
    theta_grad[out_ofs + hw] += fbar;
  }

  // Hidden layers backward, last to first.
  for (int layer = nl - 1; layer >= 0; --layer) {
    const int in_dim = (layer == 0) ? d : hw;
    MapMat W(theta + layer_ofs[layer], hw, in_dim);
    // through the softplus activation and its dual channel
    VecH zbar(hw);
    MatH3 Zbar(hw, 3);
    MatH3 Z(hw, 3);  // pre-activation dual, recomputed from the stored post-activation
    for (int r = 0; r < hw; ++r) {
      const double sg = sigmoid(zs[layer + 1][r]);
      const double sgp = sg * (1.0 - sg);
      Z.row(r) = duals[layer + 1].row(r) / sg;
      Zbar.row(r) = sg * Abar.row(r);
      zbar[r] = sg * abar[r] + sgp * Z.row(r).dot(Abar.row(r));
    }
    if (theta_grad) {
      Eigen::Map<Eigen::MatrixXd> Wg(theta_grad + layer_ofs[layer], hw, in_dim);
      Wg.noalias() += zbar * acts[layer].transpose();
      Wg.noalias() += Zbar * duals[layer].transpose();
      Eigen::Map<Eigen::VectorXd> bg(theta_grad + layer_ofs[layer] + hw * in_dim, hw);
      bg += zbar;
    }
    abar = W.transpose() * zbar;
    Abar = W.transpose() * Zbar;
  }

  // Grid backward. abar is hbar (d), Abar is Gbar (d x 3).
  Vec3d xacc = Vec3d::Zero();
  if (xbar) xacc = G.transpose() * abar;  // first-order term via dh/dx = G

  for (int l = 0; l < cfg_.levels; ++l) {
    const int res = layout_.grid_res[l];
    const int n = res + 1;
    const double scale = 0.5 * res;
    const CellCoords cc = locate(x, res);
    const double u[3][2] = {{1.0 - cc.t[0], cc.t[0]}, {1.0 - cc.t[1], cc.t[1]}, {1.0 - cc.t[2], cc.t[2]}};
    for (int corner = 0; corner < 8; ++corner) {
      const int bx = corner & 1, by = (corner >> 1) & 1, bz = (corner >> 2) & 1;
      const double sx = bx ? 1.0 : -1.0, sy = by ? 1.0 : -1.0, sz = bz ? 1.0 : -1.0;
      const double wx = u[0][bx], wy = u[1][by], wz = u[2][bz];
      const double w = wx * wy * wz;
      const double dw[3] = {live[0] ? scale * sx * wy * wz : 0.0,
                            live[1] ? scale * wx * sy * wz : 0.0,
                            live[2] ? scale * wx * wy * sz : 0.0};
      // mixed second derivatives of the trilinear weight (diagonal is zero)
      const double s2 = scale * scale;
      const double d2xy = (live[0] && live[1]) ? s2 * sx * sy * wz : 0.0;
      const double d2xz = (live[0] && live[2]) ? s2 * sx * wy * sz : 0.0;
      const double d2yz = (live[1] && live[2]) ? s2 * wx * sy * sz : 0.0;
      const int vid = ((cc.i[0] + bx) * n + (cc.i[1] + by)) * n + (cc.i[2] + bz);
      const int base = layout_.grid_offset[l] + vid * fdim;
      for (int k = 0; k < fdim; ++k) {
        const int row = l * fdim + k;
        if (theta_grad) {
          theta_grad[base + k] += w * abar[row] + dw[0] * Abar(row, 0) + dw[1] * Abar(row, 1) +
                                  dw[2] * Abar(row, 2);
        }
        if (xbar) {
          const double tvk = theta[base + k];
          xacc[0] += tvk * (d2xy * Abar(row, 1) + d2xz * Abar(row, 2));
          xacc[1] += tvk * (d2xy * Abar(row, 0) + d2yz * Abar(row, 2));
          xacc[2] += tvk * (d2xz * Abar(row, 0) + d2yz * Abar(row, 1));
        }
      }
    }
  }

  if (xbar) {
    for (int a = 0; a < 3; ++a) (*xbar)[a] += live[a] ? xacc[a] : 0.0;
  }
}

void SdfField::init_sphere(double radius, std::uint64_t seed) {
  if (!(radius > 0.0 && radius < 1.0)) throw InputError("init_sphere: radius must be in (0,1)");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  for (int l = 0; l < cfg_.levels; ++l) {
    const int res = layout_.grid_res[l];
    const int n = res + 1;
    const double step = 2.0 / res;
    double* grid = params_.data() + layout_.grid_offset[l];
    for (int ix = 0; ix < n; ++ix)
      for (int iy = 0; iy < n; ++iy)
        for (int iz = 0; iz < n; ++iz) {
          const Vec3d v(-1.0 + ix * step, -1.0 + iy * step, -1.0 + iz * step);
          double* tv = grid + (((ix * n) + iy) * n + iz) * cfg_.features;
          // level 0 feature 0 carries the geometry; the rest starts near zero
          tv[0] = (l == 0) ? v.norm() - radius : 1e-4 * gauss(rng);
          for (int k = 1; k < cfg_.features; ++k) tv[k] = 1e-4 * gauss(rng);
        }
  }

  // The head starts as an exact pass-through of feature 0 using the identity
  // softplus(x) - softplus(-x) = x, with small noise elsewhere to keep
  // gradient paths open.
  const int d = layout_.feature_dim;
  const int hw = cfg_.hidden_width;
  int ofs = layout_.mlp_offset;
  int prev = d;
  for (int layer = 0; layer <= cfg_.hidden_layers; ++layer) {
    const int rows = (layer == cfg_.hidden_layers) ? 1 : hw;
    double* W = params_.data() + ofs;
    for (int i = 0; i < rows * prev; ++i) W[i] = 1e-3 * gauss(rng);
    auto at = [&](int r, int c) -> double& { return W[c * rows + r]; };
    if (layer == 0) {
      at(0, 0) = 1.0;
      at(1, 0) = -1.0;
    } else if (layer < cfg_.hidden_layers) {
      at(0, 0) = 1.0;
      at(0, 1) = -1.0;
      at(1, 0) = -1.0;
      at(1, 1) = 1.0;
    } else {
      at(0, 0) = 1.0;
      at(0, 1) = -1.0;
    }
    double* b = W + rows * prev;
    for (int i = 0; i < rows; ++i) b[i] = 0.0;
    ofs += rows * prev + rows;
    prev = hw;
  }
  params_[layout_.total - 1] = std::log(cfg_.init_sharpness);
}

namespace {
template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T read_pod(std::istream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError("field checkpoint: truncated file");
  return v;
}
constexpr std::uint32_t kFieldMagic = 0x464e564d;  // "MVNF"
}  // namespace

void SdfField::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("field checkpoint: cannot open for writing: " + path);
  write_pod(os, kFieldMagic);
  write_pod(os, std::uint32_t{1});
  write_pod(os, std::int32_t{cfg_.levels});
  for (int r : layout_.grid_res) write_pod(os, std::int32_t{r});
  write_pod(os, std::int32_t{cfg_.features});
  write_pod(os, std::int32_t{cfg_.hidden_width});
  write_pod(os, std::int32_t{cfg_.hidden_layers});
  write_pod(os, log_sharpness());
  const std::int64_t n = layout_.total - 1;
  write_pod(os, n);
  for (std::int64_t i = 0; i < n; ++i) write_pod(os, static_cast<float>(params_[i]));
  if (!os) throw InputError("field checkpoint: write failed: " + path);
}

SdfField SdfField::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("field checkpoint: cannot open: " + path);
  if (read_pod<std::uint32_t>(is) != kFieldMagic)
    throw FormatError("field checkpoint: bad magic in " + path);
  if (read_pod<std::uint32_t>(is) != 1) throw FormatError("field checkpoint: unknown version");
  FieldConfig cfg;
  cfg.levels = read_pod<std::int32_t>(is);
  if (cfg.levels < 1 || cfg.levels > 8) throw FormatError("field checkpoint: bad level count");
  std::vector<int> res(cfg.levels);
  for (int& r : res) r = read_pod<std::int32_t>(is);
  cfg.base_resolution = res[0];
  cfg.growth = cfg.levels > 1 ? res[1] / res[0] : 2;
  cfg.features = read_pod<std::int32_t>(is);
  cfg.hidden_width = read_pod<std::int32_t>(is);
  cfg.hidden_layers = read_pod<std::int32_t>(is);
  const double log_s = read_pod<double>(is);

  SdfField field(cfg);
  if (field.layout_.grid_res != res)
    throw FormatError("field checkpoint: resolutions are not a geometric ladder");
  const auto n = read_pod<std::int64_t>(is);
  if (n != field.layout_.total - 1) throw FormatError("field checkpoint: parameter count mismatch");
  for (std::int64_t i = 0; i < n; ++i) field.params_[i] = read_pod<float>(is);
  field.set_log_sharpness(log_s);
  return field;
}

ParamVector parameter_gradients(
    const SdfField& field, const std::function<ad::Value(ad::Tape&, ad::Value log_s)>& loss) {
  ad::Tape tape;
  ad::TapeScope scope(tape);
  ParamVector grad = ParamVector::Zero(field.parameter_count());
  tape.bind_field(&field, &grad);
  const ad::Value log_s = tape.leaf(field.log_sharpness());
  const ad::Value result = loss(tape, log_s);
  if (!std::isfinite(result.v)) throw NumericError("parameter_gradients: loss is not finite");
  if (result.idx < 0) return grad;  // constant loss, zero gradient
  tape.backward(result);
  grad[grad.size() - 1] += tape.adjoint(log_s);
  return grad;
}

}  // namespace mvnr
