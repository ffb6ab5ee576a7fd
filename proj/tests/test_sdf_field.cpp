// SPDX-License-Identifier: Apache-2.0
#include "mvnrecon/sdf_field.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

using namespace mvnr;
using ad::Value;

namespace {

FieldConfig tiny_config() {
  FieldConfig cfg;
  cfg.levels = 2;
  cfg.base_resolution = 4;
  cfg.growth = 2;
  cfg.features = 2;
  cfg.hidden_width = 16;
  cfg.hidden_layers = 2;
  return cfg;
}

// Random interior points that stay at least `margin` away from every lattice
// plane of the finest level, so central differences do not straddle the
// (intentional) gradient discontinuity of trilinear cells.
std::vector<Vec3d> cell_interior_points(const SdfField& field, int count, double margin,
                                        std::uint64_t seed) {
  const int res = field.grid_resolution(field.config().levels - 1);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-0.95, 0.95);
  std::vector<Vec3d> pts;
  while (static_cast<int>(pts.size()) < count) {
    Vec3d p(uni(rng), uni(rng), uni(rng));
    bool ok = true;
    for (int a = 0; a < 3; ++a) {
      const double s = (p[a] + 1.0) * 0.5 * res;
      const double frac = s - std::floor(s);
      if (frac < margin * res || frac > 1.0 - margin * res) ok = false;
    }
    if (ok) pts.push_back(p);
  }
  return pts;
}

double rel_err(double a, double b, double floor = 1e-10) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace

TEST(SdfField, SpatialGradientMatchesFiniteDifferences) {
  SdfField field(tiny_config(), 3);
  field.init_sphere(0.5);
  const double h = 1e-4;
  for (const Vec3d& p : cell_interior_points(field, 1000, 5e-4, 21)) {
    const Vec3d g = field.gradient(p);
    for (int a = 0; a < 3; ++a) {
      Vec3d hi = p, lo = p;
      hi[a] += h;
      lo[a] -= h;
      const double fdg = (field.eval(hi) - field.eval(lo)) / (2.0 * h);
      EXPECT_LT(rel_err(g[a], fdg, 1e-6), 1e-3) << "axis " << a << " at " << p.transpose();
    }
  }
}

TEST(SdfField, AffineFieldHasExactGradient) {
  FieldConfig cfg = tiny_config();
  cfg.levels = 1;
  cfg.features = 1;
  SdfField field(cfg, 3);
  field.init_sphere(0.5);  // installs the exact pass-through head
  ParamVector p = field.parameters();
  // zero the head noise so only the structural +/-1 entries remain
  for (int i = field.mlp_offset(); i + 1 < field.parameter_count(); ++i) {
    if (std::abs(p[i]) != 1.0) p[i] = 0.0;
  }
  const Vec3d a(0.3, -0.7, 0.2);
  const double b = 0.1;
  const int res = field.grid_resolution(0);
  const int n = res + 1;
  for (int ix = 0; ix < n; ++ix)
    for (int iy = 0; iy < n; ++iy)
      for (int iz = 0; iz < n; ++iz) {
        const Vec3d v(-1.0 + 2.0 * ix / res, -1.0 + 2.0 * iy / res, -1.0 + 2.0 * iz / res);
        p[field.grid_offset(0) + ((ix * n + iy) * n + iz)] = a.dot(v) + b;
      }
  field.set_parameters(p);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> uni(-0.9, 0.9);
  for (int i = 0; i < 100; ++i) {
    const Vec3d x(uni(rng), uni(rng), uni(rng));
    EXPECT_NEAR(field.eval(x), a.dot(x) + b, 1e-12);
    const Vec3d g = field.gradient(x);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(g[k], a[k], 1e-12);
  }
}

TEST(SdfField, EvalIsLipschitzContinuous) {
  SdfField field(tiny_config(), 3);
  field.init_sphere(0.5);
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> uni(-0.99, 0.99);
  std::normal_distribution<double> gauss(0.0, 1.0);
  double lipschitz = 0.0;
  for (int i = 0; i < 2000; ++i) {
    const Vec3d x(uni(rng), uni(rng), uni(rng));
    Vec3d d(gauss(rng), gauss(rng), gauss(rng));
    d *= 1e-4 / d.norm();
    lipschitz = std::max(lipschitz, std::abs(field.eval(x + d) - field.eval(x)) / 1e-4);
  }
  EXPECT_LT(lipschitz, 10.0);  // empirical bound for a near-SDF fit
}

TEST(SdfField, InitSphereFitsSignedDistance) {
  SdfField field(FieldConfig{}, 3);
  field.init_sphere(0.5);
  EXPECT_NEAR(field.eval(Vec3d::Zero()), -0.5, 0.05);
  EXPECT_NEAR(field.eval(Vec3d(0.5, 0, 0)), 0.0, 0.05);
  EXPECT_LT(field.eval(Vec3d::Zero()), 0.0);
  EXPECT_GT(field.eval(Vec3d(0.9, 0, 0)), 0.0);

  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  double sq_sum = 0.0, eik_sum = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const Vec3d x(uni(rng), uni(rng), uni(rng));
    const double err = field.eval(x) - (x.norm() - 0.5);
    sq_sum += err * err;
    const double gn = field.gradient(x).norm();
    eik_sum += (gn - 1.0) * (gn - 1.0);
  }
  EXPECT_LT(std::sqrt(sq_sum / n), 0.05);
  EXPECT_LT(eik_sum / n, 0.1);

  const Vec3d g = field.gradient(Vec3d(0.5, 0, 0)).normalized();
  EXPECT_GT(g.dot(Vec3d(1, 0, 0)), std::cos(deg_to_rad(10.0)));
}

TEST(SdfField, FusedVjpMatchesFiniteDifferences) {
  SdfField field(tiny_config(), 9);
  field.init_sphere(0.4);
  // roughen the parameters so nothing cancels by symmetry
  ParamVector p = field.parameters();
  std::mt19937_64 rng(31);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < p.size() - 1; ++i) p[i] += 0.01 * gauss(rng);
  field.set_parameters(p);

  const double h = 1e-6;
  for (const Vec3d& x : cell_interior_points(field, 20, 2e-3, 41)) {
    const Vec3d gbar(gauss(rng), gauss(rng), gauss(rng));
    const double fbar = gauss(rng);
    // scalar probe: L(theta, x) = fbar*f + gbar.g
    auto probe = [&](const SdfField& f, const Vec3d& pt) {
      double fv;
      Vec3d gv;
      f.eval_grad_raw(pt, fv, gv);
      return fbar * fv + gbar.dot(gv);
    };

    Vec3d xbar = Vec3d::Zero();
    VecXd tg = VecXd::Zero(field.parameter_count());
    field.fused_vjp(x, fbar, gbar, &xbar, tg.data());

    // spatial part, which exercises the mixed second derivatives
    for (int a = 0; a < 3; ++a) {
      Vec3d hi = x, lo = x;
      hi[a] += h;
      lo[a] -= h;
      const double fdv = (probe(field, hi) - probe(field, lo)) / (2.0 * h);
      EXPECT_LT(rel_err(xbar[a], fdv, 1e-6), 1e-3) << "x-axis " << a;
    }

    // parameter part along random directions
    for (int trial = 0; trial < 4; ++trial) {
      VecXd dir = VecXd::Zero(field.parameter_count());
      for (int i = 0; i < dir.size() - 1; ++i) dir[i] = gauss(rng);
      dir.normalize();
      SdfField fh = field, fl = field;
      fh.set_parameters(field.parameters() + h * dir);
      fl.set_parameters(field.parameters() - h * dir);
      const double fdv = (probe(fh, x) - probe(fl, x)) / (2.0 * h);
      EXPECT_LT(rel_err(tg.dot(dir), fdv, 1e-6), 1e-3);
    }
  }
}

TEST(SdfField, ParameterGradientsOfSquaredEval) {
  SdfField field(tiny_config(), 9);
  field.init_sphere(0.45);
  const Vec3d x0(0.31, -0.22, 0.17);

  const ParamVector grad = parameter_gradients(
      field, [&](ad::Tape& tape, Value) {
        auto [f, g] = tape.field_eval(Vec3<Value>(Value(x0[0]), Value(x0[1]), Value(x0[2])));
        (void)g;
        return f * f;
      });

  std::mt19937_64 rng(57);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double h = 1e-5;
  for (int trial = 0; trial < 6; ++trial) {
    VecXd dir = VecXd::Zero(field.parameter_count());
    for (int i = 0; i < dir.size() - 1; ++i) dir[i] = gauss(rng);
    dir.normalize();
    SdfField fh = field, fl = field;
    fh.set_parameters(field.parameters() + h * dir);
    fl.set_parameters(field.parameters() - h * dir);
    const double fdv =
        (fh.eval(x0) * fh.eval(x0) - fl.eval(x0) * fl.eval(x0)) / (2.0 * h);
    EXPECT_LT(rel_err(grad.dot(dir), fdv, 1e-8), 1e-4);
  }
}

TEST(SdfField, ParameterGradientsThroughSpatialGradient) {
  SdfField field(tiny_config(), 9);
  field.init_sphere(0.45);
  const Vec3d x0(0.21, 0.33, -0.26);
  auto loss_plain = [&](const SdfField& f) {
    const Vec3d g = f.gradient(x0);
    return g.squaredNorm();
  };

  const ParamVector grad = parameter_gradients(
      field, [&](ad::Tape& tape, Value) {
        auto [f, g] = tape.field_eval(Vec3<Value>(Value(x0[0]), Value(x0[1]), Value(x0[2])));
        (void)f;
        return g[0] * g[0] + g[1] * g[1] + g[2] * g[2];
      });

  std::mt19937_64 rng(77);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double h = 1e-5;
  for (int trial = 0; trial < 6; ++trial) {
    VecXd dir = VecXd::Zero(field.parameter_count());
    for (int i = 0; i < dir.size() - 1; ++i) dir[i] = gauss(rng);
    dir.normalize();
    SdfField fh = field, fl = field;
    fh.set_parameters(field.parameters() + h * dir);
    fl.set_parameters(field.parameters() - h * dir);
    const double fdv = (loss_plain(fh) - loss_plain(fl)) / (2.0 * h);
    EXPECT_LT(rel_err(grad.dot(dir), fdv, 1e-8), 1e-3);
  }
}

TEST(SdfField, ZeroLossGivesZeroGradient) {
  SdfField field(tiny_config(), 9);
  const ParamVector grad =
      parameter_gradients(field, [&](ad::Tape&, Value) { return Value(0.0); });
  EXPECT_EQ(grad.cwiseAbs().maxCoeff(), 0.0);
}

TEST(SdfField, ComposedLossIsDeterministic) {
  SdfField field(tiny_config(), 9);
  field.init_sphere(0.5);
  auto run = [&]() {
    return parameter_gradients(field, [&](ad::Tape& tape, Value log_s) {
      auto [f, g] = tape.field_eval(Vec3<Value>(Value(0.1), Value(0.2), Value(0.3)));
      return f * f + g[1] * ad::exp(log_s) * Value(1e-3);
    });
  };
  const ParamVector a = run();
  const ParamVector b = run();
  ASSERT_EQ(a.size(), b.size());
  for (int i = 0; i < a.size(); ++i) ASSERT_EQ(a[i], b[i]);
}

TEST(SdfField, NonFiniteLossThrows) {
  SdfField field(tiny_config(), 9);
  EXPECT_THROW(parameter_gradients(
                   field, [&](ad::Tape&, Value) { return Value(std::nan("")); }),
               NumericError);
}

TEST(SdfField, OutsideEvalClampsAndWarns) {
  SdfField field(tiny_config(), 9);
  field.init_sphere(0.5);
  const auto before = field.clamp_warnings();
  const double inside = field.eval(Vec3d(1.0, 0.2, 0.2));
  const double outside = field.eval(Vec3d(1.5, 0.2, 0.2));
  EXPECT_EQ(field.clamp_warnings(), before + 1);
  EXPECT_EQ(inside, outside);
  EXPECT_TRUE(std::isfinite(outside));
}

TEST(SdfField, SharpnessStoredAsClampedLog) {
  SdfField field(tiny_config(), 9);
  EXPECT_NEAR(field.sharpness(), 30.0, 1e-9);
  field.set_log_sharpness(100.0);
  EXPECT_NEAR(field.log_sharpness(), SdfField::kLogSharpnessMax, 0.0);
  field.set_log_sharpness(-100.0);
  EXPECT_NEAR(field.log_sharpness(), SdfField::kLogSharpnessMin, 0.0);
}

TEST(SdfField, CheckpointRoundTrip) {
  SdfField field(tiny_config(), 13);
  field.init_sphere(0.37);
  const auto path = std::filesystem::temp_directory_path() / "mvnr_field_ckpt.bin";
  field.save(path.string());
  const SdfField back = SdfField::load(path.string());
  std::filesystem::remove(path);

  ASSERT_EQ(back.parameter_count(), field.parameter_count());
  EXPECT_EQ(back.log_sharpness(), field.log_sharpness());  // stored as double
  for (int i = 0; i + 1 < field.parameter_count(); ++i) {
    EXPECT_EQ(static_cast<float>(field.parameters()[i]), back.parameters()[i]);
  }
  // a second save of the loaded field is byte-identical (float payload is stable)
  const auto path2 = std::filesystem::temp_directory_path() / "mvnr_field_ckpt2.bin";
  back.save(path2.string());
  const SdfField back2 = SdfField::load(path2.string());
  std::filesystem::remove(path2);
  for (int i = 0; i + 1 < field.parameter_count(); ++i)
    EXPECT_EQ(back.parameters()[i], back2.parameters()[i]);
}

TEST(SdfField, LoadRejectsGarbage) {
  const auto path = std::filesystem::temp_directory_path() / "mvnr_field_bad.bin";
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    const char junk[] = "not a checkpoint";
    std::fwrite(junk, 1, sizeof(junk), f);
    std::fclose(f);
  }
  EXPECT_THROW(SdfField::load(path.string()), FormatError);
  std::filesystem::remove(path);
}
