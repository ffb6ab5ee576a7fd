// SPDX-License-Identifier: Apache-2.0
#include "mvnrecon/autodiff.hpp"

namespace mvnr::ad {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& t) : prev_(g_active_tape) { g_active_tape = &t; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

void Tape::bind_field(const FusedField* field, VecXd* theta_grad) {
  field_ = field;
  theta_grad_ = theta_grad;
  if (field_ && theta_grad_ && theta_grad_->size() != field_->parameter_count())
    throw InputError("tape: parameter gradient buffer size mismatch");
}

std::pair<Value, Vec3<Value>> Tape::field_eval(const Vec3<Value>& x) {
  if (!field_) throw InputError("tape: field_eval without a bound field");
  FieldRec r;
  r.x = Vec3d(x[0].v, x[1].v, x[2].v);
  for (int k = 0; k < 3; ++k) r.xi[k] = x[k].idx;

  double f;
  Vec3d g;
  field_->eval_grad_raw(r.x, f, g);

  // Four output slots; the lowest-index one triggers the fused backward.
  r.out = static_cast<std::int32_t>(nodes_.size());
  for (int k = 0; k < 4; ++k) nodes_.push_back(Node{-1, -1, 0.0, 0.0});
  field_recs_.push_back(r);
  customs_.push_back(CustomRef{r.out, 0, static_cast<std::int32_t>(field_recs_.size() - 1)});

  Value fv(f, r.out);
  Vec3<Value> gv;
  for (int k = 0; k < 3; ++k) gv[k] = Value(g[k], r.out + 1 + k);
  return {fv, gv};
}

Vec3<Value> Tape::record_trace(const Vec3<Value>& origin, const Vec3<Value>& dir,
                               const Vec3d& x_star, double s_star, const Vec3d& grad_at_x) {
  if (!field_) throw InputError("tape: record_trace without a bound field");
  TraceRec r;
  r.x = x_star;
  r.grad = grad_at_x;
  r.v = Vec3d(dir[0].v, dir[1].v, dir[2].v);
  r.s = s_star;
  r.denom = grad_at_x.dot(r.v);
  if (std::abs(r.denom) < 1e-12)
    throw NumericError("record_trace: ray tangential to the surface, gradient undefined");
  for (int k = 0; k < 3; ++k) {
    r.oi[k] = origin[k].idx;
    r.vi[k] = dir[k].idx;
  }
  r.out = static_cast<std::int32_t>(nodes_.size());
  for (int k = 0; k < 3; ++k) nodes_.push_back(Node{-1, -1, 0.0, 0.0});
  trace_recs_.push_back(r);
  customs_.push_back(CustomRef{r.out, 1, static_cast<std::int32_t>(trace_recs_.size() - 1)});

  Vec3<Value> out;
  for (int k = 0; k < 3; ++k) out[k] = Value(x_star[k], r.out + k);
  return out;
}

void Tape::run_field_backward(const FieldRec& r) {
  const double fbar = adj_[r.out];
  const Vec3d gbar(adj_[r.out + 1], adj_[r.out + 2], adj_[r.out + 3]);
  if (fbar == 0.0 && gbar.isZero()) return;
  const bool need_x = r.xi[0] >= 0 || r.xi[1] >= 0 || r.xi[2] >= 0;
  Vec3d xbar = Vec3d::Zero();
  field_->fused_vjp(r.x, fbar, gbar, need_x ? &xbar : nullptr,
                    theta_grad_ ? theta_grad_->data() : nullptr);
  for (int k = 0; k < 3; ++k)
    if (r.xi[k] >= 0) adj_[r.xi[k]] += xbar[k];
}

void Tape::run_trace_backward(const TraceRec& r) {
  const Vec3d xbar(adj_[r.out], adj_[r.out + 1], adj_[r.out + 2]);
  if (xbar.isZero()) return;
  // x = o + s v with f(x) = 0:
  //   dx = (I - v grad^T / (grad.v)) (do + s dv) - v (df_theta) / (grad.v)
  const double c = r.v.dot(xbar) / r.denom;
  const Vec3d common = xbar - c * r.grad;
  for (int k = 0; k < 3; ++k) {
    if (r.oi[k] >= 0) adj_[r.oi[k]] += common[k];
    if (r.vi[k] >= 0) adj_[r.vi[k]] += r.s * common[k];
  }
  if (theta_grad_) field_->fused_vjp(r.x, -c, Vec3d::Zero(), nullptr, theta_grad_->data());
}

void Tape::backward(const Value& root) {
  if (root.idx < 0) throw InputError("tape: backward through a constant");
  adj_.assign(nodes_.size(), 0.0);
  adj_[root.idx] = 1.0;

  std::ptrdiff_t cp = static_cast<std::ptrdiff_t>(customs_.size()) - 1;
  while (cp >= 0 && customs_[cp].trigger > root.idx) --cp;

  for (std::int32_t i = root.idx; i >= 0; --i) {
    if (cp >= 0 && customs_[cp].trigger == i) {
      if (customs_[cp].kind == 0)
        run_field_backward(field_recs_[customs_[cp].rec]);
      else
        run_trace_backward(trace_recs_[customs_[cp].rec]);
      --cp;
      continue;
    }
    const double a = adj_[i];
    if (a == 0.0) continue;
    const Node& n = nodes_[i];
    if (n.a >= 0) adj_[n.a] += n.da * a;
    if (n.b >= 0) adj_[n.b] += n.db * a;
  }
}

}  // namespace mvnr::ad
