// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reverse-mode automatic differentiation on a linearized tape.
//
// Scalar `Value` records every smooth operation as a node holding parent
// indices and local partials; `Tape::backward` then accumulates adjoints in
// one reverse sweep. Two fused multi-output operations are recorded as
// opaque nodes with hand-written vector-Jacobian products:
//   - field_eval: (f(x), grad f(x)) of a parametric field, with adjoints
//     flowing into both x and the field's flat parameter vector;
//   - record_trace: a ray/surface intersection point differentiated through
//     the root equation f(o + s v) = 0 (implicit function theorem).
// Constants (idx < 0) cost no tape nodes.

#include "mvnrecon/common.hpp"

#include <cassert>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace mvnr::ad {

class Tape;

/// Parameter-carrying field a Tape can differentiate through. Implemented by SdfField.
struct FusedField {
  virtual ~FusedField() = default;
  virtual int parameter_count() const = 0;
  /// f(x) and its spatial gradient at x (x clamped to the field domain).
  virtual void eval_grad_raw(const Vec3d& x, double& f, Vec3d& g) const = 0;
  /// Accumulates fbar*df/d(.) + gbar.d(grad f)/d(.) into xbar (if non-null)
  /// and theta_grad (if non-null). Must be consistent with eval_grad_raw.
  virtual void fused_vjp(const Vec3d& x, double fbar, const Vec3d& gbar, Vec3d* xbar,
                         double* theta_grad) const = 0;
};

struct Value {
  double v = 0.0;
  std::int32_t idx = -1;  // -1 marks a constant (not on any tape)

  Value() = default;
  Value(double val) : v(val) {}  // NOLINT: implicit by design, constants are free
  Value(double val, std::int32_t i) : v(val), idx(i) {}
};

inline double detach(const Value& x) { return x.v; }

Tape* active_tape();

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Value leaf(double v) {
    nodes_.push_back(Node{-1, -1, 0.0, 0.0});
    return Value(v, static_cast<std::int32_t>(nodes_.size() - 1));
  }

  std::int32_t rec1(std::int32_t a, double da) {
    nodes_.push_back(Node{a, -1, da, 0.0});
    return static_cast<std::int32_t>(nodes_.size() - 1);
  }
  std::int32_t rec2(std::int32_t a, double da, std::int32_t b, double db) {
    nodes_.push_back(Node{a, b, da, db});
    return static_cast<std::int32_t>(nodes_.size() - 1);
  }

  /// Field parameters receive adjoints in `theta_grad` (accumulated, caller zeroes).
  void bind_field(const FusedField* field, VecXd* theta_grad);

  /// Fused (f, grad f) evaluation of the bound field at a taped point.
  std::pair<Value, Vec3<Value>> field_eval(const Vec3<Value>& x);

  /// Records an already-traced surface point x* = o + s* v with f(x*) = 0.
  /// grad_at_x is the field's spatial gradient at x*; the backward pass uses
  /// the implicit-function formula, so the trace itself must be converged
  /// well below the finite-difference probe scale.
  Vec3<Value> record_trace(const Vec3<Value>& origin, const Vec3<Value>& dir, const Vec3d& x_star,
                           double s_star, const Vec3d& grad_at_x);

  void backward(const Value& root);
  double adjoint(const Value& x) const {
    assert(x.idx >= 0 && static_cast<std::size_t>(x.idx) < adj_.size());
    return adj_[x.idx];
  }

  void clear() {
    nodes_.clear();
    field_recs_.clear();
    trace_recs_.clear();
    customs_.clear();
  }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::int32_t a, b;
    double da, db;
  };
  struct FieldRec {
    Vec3d x;
    std::int32_t xi[3];
    std::int32_t out;  // f, gx, gy, gz at out..out+3
  };
  struct TraceRec {
    Vec3d x, grad, v;
    double s, denom;
    std::int32_t oi[3], vi[3];
    std::int32_t out;  // x0, x1, x2 at out..out+2
  };
  struct CustomRef {
    std::int32_t trigger;
    std::int32_t kind;  // 0 field, 1 trace
    std::int32_t rec;
  };

  void run_field_backward(const FieldRec& r);
  void run_trace_backward(const TraceRec& r);

  std::vector<Node> nodes_;
  std::vector<double> adj_;
  std::vector<FieldRec> field_recs_;
  std::vector<TraceRec> trace_recs_;
  std::vector<CustomRef> customs_;
  const FusedField* field_ = nullptr;
  VecXd* theta_grad_ = nullptr;
};

/// RAII activation of a tape for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& t);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// ---- scalar operations -----------------------------------------------------

namespace detail {
inline std::int32_t rec(double da, std::int32_t a) {
  if (a < 0) return -1;
  Tape* t = active_tape();
  assert(t && "taped Value used without an active TapeScope");
  return t->rec1(a, da);
}
inline std::int32_t rec(double da, std::int32_t a, double db, std::int32_t b) {
  if (a < 0 && b < 0) return -1;
  Tape* t = active_tape();
  assert(t && "taped Value used without an active TapeScope");
  if (b < 0) return t->rec1(a, da);
  if (a < 0) return t->rec1(b, db);
  return t->rec2(a, da, b, db);
}
}  // namespace detail

inline Value operator+(const Value& a, const Value& b) {
  return Value(a.v + b.v, detail::rec(1.0, a.idx, 1.0, b.idx));
}
inline Value operator-(const Value& a, const Value& b) {
  return Value(a.v - b.v, detail::rec(1.0, a.idx, -1.0, b.idx));
}
inline Value operator*(const Value& a, const Value& b) {
  return Value(a.v * b.v, detail::rec(b.v, a.idx, a.v, b.idx));
}
inline Value operator/(const Value& a, const Value& b) {
  const double inv = 1.0 / b.v;
  return Value(a.v * inv, detail::rec(inv, a.idx, -a.v * inv * inv, b.idx));
}
inline Value operator-(const Value& a) { return Value(-a.v, detail::rec(-1.0, a.idx)); }
inline Value operator+(const Value& a) { return a; }

inline Value& operator+=(Value& a, const Value& b) { return a = a + b; }
inline Value& operator-=(Value& a, const Value& b) { return a = a - b; }
inline Value& operator*=(Value& a, const Value& b) { return a = a * b; }
inline Value& operator/=(Value& a, const Value& b) { return a = a / b; }

inline bool operator<(const Value& a, const Value& b) { return a.v < b.v; }
inline bool operator>(const Value& a, const Value& b) { return a.v > b.v; }
inline bool operator<=(const Value& a, const Value& b) { return a.v <= b.v; }
inline bool operator>=(const Value& a, const Value& b) { return a.v >= b.v; }
inline bool operator==(const Value& a, const Value& b) { return a.v == b.v; }
inline bool operator!=(const Value& a, const Value& b) { return a.v != b.v; }

inline Value exp(const Value& a) {
  const double e = std::exp(a.v);
  return Value(e, detail::rec(e, a.idx));
}
inline Value log(const Value& a) { return Value(std::log(a.v), detail::rec(1.0 / a.v, a.idx)); }
inline Value sqrt(const Value& a) {
  const double s = std::sqrt(a.v);
  return Value(s, detail::rec(0.5 / s, a.idx));
}
inline Value sin(const Value& a) { return Value(std::sin(a.v), detail::rec(std::cos(a.v), a.idx)); }
inline Value cos(const Value& a) { return Value(std::cos(a.v), detail::rec(-std::sin(a.v), a.idx)); }
inline Value abs(const Value& a) {
  const double s = a.v > 0.0 ? 1.0 : (a.v < 0.0 ? -1.0 : 0.0);  // subgradient 0 at 0
  return Value(std::abs(a.v), detail::rec(s, a.idx));
}
inline Value max(const Value& a, const Value& b) { return a.v >= b.v ? a : b; }
inline Value min(const Value& a, const Value& b) { return a.v <= b.v ? a : b; }

// Shims so Eigen's generic kernels accept Value as a scalar.
inline const Value& conj(const Value& a) { return a; }
inline const Value& real(const Value& a) { return a; }
inline Value imag(const Value&) { return Value(0.0); }
inline Value abs2(const Value& a) { return a * a; }

}  // namespace mvnr::ad

namespace Eigen {
template <>
struct NumTraits<mvnr::ad::Value> : NumTraits<double> {
  typedef mvnr::ad::Value Real;
  typedef mvnr::ad::Value NonInteger;
  typedef mvnr::ad::Value Nested;
  typedef mvnr::ad::Value Literal;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 1,
    AddCost = 2,
    MulCost = 2
  };
};
}  // namespace Eigen
