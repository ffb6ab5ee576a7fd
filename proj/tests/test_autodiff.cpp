// SPDX-License-Identifier: Apache-2.0
#include "mvnrecon/autodiff.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace mvnr;
using ad::Value;

namespace {

// central difference of a scalar function of one packed argument
template <typename F>
double fd(F f, double x, double h = 1e-6) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace

TEST(Autodiff, BasicChainRule) {
  ad::Tape tape;
  ad::TapeScope scope(tape);
  Value x = tape.leaf(2.0);
  Value y = x * x + ad::exp(x);
  tape.backward(y);
  EXPECT_NEAR(tape.adjoint(x), 4.0 + std::exp(2.0), 1e-12);
}

TEST(Autodiff, ConstantsCostNoNodes) {
  ad::Tape tape;
  ad::TapeScope scope(tape);
  Value a(3.0), b(4.0);
  Value c = a * b + ad::sin(a);
  EXPECT_LT(c.idx, 0);
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Autodiff, MixedOpsMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> uni(0.3, 1.7);
  for (int trial = 0; trial < 50; ++trial) {
    const double x0 = uni(rng), y0 = uni(rng);
    auto f = [](double x, double y) {
      return std::sqrt(x * y) + std::log(x) * std::cos(y) - std::abs(x - y) / (x + y);
    };
    ad::Tape tape;
    ad::TapeScope scope(tape);
    Value x = tape.leaf(x0), y = tape.leaf(y0);
    Value out = ad::sqrt(x * y) + ad::log(x) * ad::cos(y) - ad::abs(x - y) / (x + y);
    tape.backward(out);
    EXPECT_NEAR(out.v, f(x0, y0), 1e-12);
    EXPECT_NEAR(tape.adjoint(x), fd([&](double v) { return f(v, y0); }, x0), 1e-6);
    EXPECT_NEAR(tape.adjoint(y), fd([&](double v) { return f(x0, v); }, y0), 1e-6);
  }
}

TEST(Autodiff, FanOutAccumulates) {
  ad::Tape tape;
  ad::TapeScope scope(tape);
  Value x = tape.leaf(1.5);
  Value y = x * x;
  Value z = y + y * x;  // x^2 + x^3
  tape.backward(z);
  EXPECT_NEAR(tape.adjoint(x), 2.0 * 1.5 + 3.0 * 1.5 * 1.5, 1e-12);
}

TEST(Autodiff, MaxSubgradientFollowsChosenBranch) {
  ad::Tape tape;
  ad::TapeScope scope(tape);
  Value x = tape.leaf(2.0), y = tape.leaf(3.0);
  Value m = ad::max(x * x, y);  // 4 > 3, picks x^2
  tape.backward(m);
  EXPECT_NEAR(m.v, 4.0, 0.0);
  EXPECT_NEAR(tape.adjoint(x), 4.0, 1e-12);
  EXPECT_NEAR(tape.adjoint(y), 0.0, 0.0);
}

TEST(Autodiff, EigenMatrixVectorProduct) {
  ad::Tape tape;
  ad::TapeScope scope(tape);
  Mat3<Value> m;
  m << Value(1.0), Value(2.0), Value(0.0), Value(0.0), Value(1.0), Value(0.0), Value(0.0),
      Value(0.0), Value(1.0);
  Vec3<Value> v(tape.leaf(1.0), tape.leaf(2.0), tape.leaf(3.0));
  Vec3<Value> w = m * v;
  tape.backward(w[0]);
  EXPECT_NEAR(w[0].v, 5.0, 1e-15);
  EXPECT_NEAR(tape.adjoint(v[0]), 1.0, 0.0);
  EXPECT_NEAR(tape.adjoint(v[1]), 2.0, 0.0);
}

TEST(Autodiff, BackwardThroughConstantThrows) {
  ad::Tape tape;
  ad::TapeScope scope(tape);
  Value c(1.0);
  EXPECT_THROW(tape.backward(c), InputError);
}
