#pragma once

#include <cmath>
#include <cstdint>
#include <memory>

#include "lithoseg/core/graph.hpp"

namespace lithoseg {

// Broadcast patterns accepted for the right operand of binary ops.
enum class Bcast {
  Same,       // identical shape
  Scalar,     // (1,1,1,1)
  PerSample,  // (N,1,1,1)
  PerPixel,   // (N,1,H,W) against (N,C,H,W)
};

template <class S>
Bcast bcast_kind(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.same_shape(b)) return Bcast::Same;
  if (b.n == 1 && b.c == 1 && b.h == 1 && b.w == 1) return Bcast::Scalar;
  if (b.n == a.n && b.c == 1 && b.h == 1 && b.w == 1) return Bcast::PerSample;
  if (b.n == a.n && b.c == 1 && b.h == a.h && b.w == a.w) return Bcast::PerPixel;
  throw std::invalid_argument("broadcast: incompatible shapes " + a.shape_str() + " vs " +
                              b.shape_str());
}

namespace detail {

// out_i = fn(a_i, b_j) with j following the broadcast pattern.
template <class S, class F>
Tensor<S> bcast_apply(const Tensor<S>& a, const Tensor<S>& b, Bcast k, F fn) {
  Tensor<S> out(a.n, a.c, a.h, a.w);
  const Eigen::Index plane = a.h * a.w, chw = a.c * plane;
  switch (k) {
    case Bcast::Same:
      for (Eigen::Index i = 0; i < a.size(); ++i) out.data[i] = fn(a.data[i], b.data[i]);
      break;
    case Bcast::Scalar:
      for (Eigen::Index i = 0; i < a.size(); ++i) out.data[i] = fn(a.data[i], b.data[0]);
      break;
    case Bcast::PerSample:
      for (Eigen::Index ni = 0; ni < a.n; ++ni) {
        S bv = b.data[ni];
        for (Eigen::Index i = 0; i < chw; ++i)
          out.data[ni * chw + i] = fn(a.data[ni * chw + i], bv);
      }
      break;
    case Bcast::PerPixel:
      for (Eigen::Index ni = 0; ni < a.n; ++ni)
        for (Eigen::Index ci = 0; ci < a.c; ++ci) {
          const S* ap = a.plane_ptr(ni, ci);
          const S* bp = b.plane_ptr(ni, 0);
          S* op = out.plane_ptr(ni, ci);
          for (Eigen::Index i = 0; i < plane; ++i) op[i] = fn(ap[i], bp[i]);
        }
      break;
  }
  return out;
}

// gb_j += sum over i mapping to j of d_i * wfn(a_i, b_j).
template <class S, class F>
void bcast_reduce_into(Tensor<S>& gb, const Tensor<S>& d, const Tensor<S>& a, const Tensor<S>& b,
                       Bcast k, F wfn) {
  const Eigen::Index plane = a.h * a.w, chw = a.c * plane;
  switch (k) {
    case Bcast::Same:
      for (Eigen::Index i = 0; i < d.size(); ++i)
        gb.data[i] += d.data[i] * wfn(a.data[i], b.data[i]);
      break;
    case Bcast::Scalar: {
      S acc = 0;
      for (Eigen::Index i = 0; i < d.size(); ++i) acc += d.data[i] * wfn(a.data[i], b.data[0]);
      gb.data[0] += acc;
      break;
    }
    case Bcast::PerSample:
      for (Eigen::Index ni = 0; ni < a.n; ++ni) {
        S acc = 0, bv = b.data[ni];
        for (Eigen::Index i = 0; i < chw; ++i)
          acc += d.data[ni * chw + i] * wfn(a.data[ni * chw + i], bv);
        gb.data[ni] += acc;
      }
      break;
    case Bcast::PerPixel:
      for (Eigen::Index ni = 0; ni < a.n; ++ni)
        for (Eigen::Index ci = 0; ci < a.c; ++ci) {
          const S* ap = a.plane_ptr(ni, ci);
          const S* bp = b.plane_ptr(ni, 0);
          const S* dp = d.plane_ptr(ni, ci);
          S* gp = gb.plane_ptr(ni, 0);
          for (Eigen::Index i = 0; i < plane; ++i) gp[i] += dp[i] * wfn(ap[i], bp[i]);
        }
      break;
  }
}

// ga_i += d_i * wfn(a_i, b_j): left operand is never broadcast.
template <class S, class F>
void lhs_accum(Tensor<S>& ga, const Tensor<S>& d, const Tensor<S>& a, const Tensor<S>& b, Bcast k,
               F wfn) {
  const Eigen::Index plane = a.h * a.w, chw = a.c * plane;
  switch (k) {
    case Bcast::Same:
      for (Eigen::Index i = 0; i < d.size(); ++i)
        ga.data[i] += d.data[i] * wfn(a.data[i], b.data[i]);
      break;
    case Bcast::Scalar:
      for (Eigen::Index i = 0; i < d.size(); ++i)
        ga.data[i] += d.data[i] * wfn(a.data[i], b.data[0]);
      break;
    case Bcast::PerSample:
      for (Eigen::Index ni = 0; ni < a.n; ++ni) {
        S bv = b.data[ni];
        for (Eigen::Index i = 0; i < chw; ++i)
          ga.data[ni * chw + i] += d.data[ni * chw + i] * wfn(a.data[ni * chw + i], bv);
      }
      break;
    case Bcast::PerPixel:
      for (Eigen::Index ni = 0; ni < a.n; ++ni)
        for (Eigen::Index ci = 0; ci < a.c; ++ci) {
          const S* ap = a.plane_ptr(ni, ci);
          const S* bp = b.plane_ptr(ni, 0);
          const S* dp = d.plane_ptr(ni, ci);
          S* gp = ga.plane_ptr(ni, ci);
          for (Eigen::Index i = 0; i < plane; ++i) gp[i] += dp[i] * wfn(ap[i], bp[i]);
        }
      break;
  }
}

}  // namespace detail

// ---- binary arithmetic ------------------------------------------------------

template <class S>
Var add(Graph<S>& g, Var a, Var b) {
  const Tensor<S>&A = g.val(a), &B = g.val(b);
  Bcast k = bcast_kind(A, B);
  Var self{int(g.node_count())};
  return g.record(detail::bcast_apply(A, B, k, [](S x, S y) { return x + y; }), {a, b},
                  [=](Graph<S>& g2) {
                    const Tensor<S>& d = g2.grad(self);
                    auto one = [](S, S) { return S(1); };
                    if (g2.needs_grad(a))
                      detail::lhs_accum(g2.grad_acc(a), d, g2.val(a), g2.val(b), k, one);
                    if (g2.needs_grad(b))
                      detail::bcast_reduce_into(g2.grad_acc(b), d, g2.val(a), g2.val(b), k, one);
                  });
}

template <class S>
Var sub(Graph<S>& g, Var a, Var b) {
  const Tensor<S>&A = g.val(a), &B = g.val(b);
  Bcast k = bcast_kind(A, B);
  Var self{int(g.node_count())};
  return g.record(detail::bcast_apply(A, B, k, [](S x, S y) { return x - y; }), {a, b},
                  [=](Graph<S>& g2) {
                    const Tensor<S>& d = g2.grad(self);
                    if (g2.needs_grad(a))
                      detail::lhs_accum(g2.grad_acc(a), d, g2.val(a), g2.val(b), k,
                                        [](S, S) { return S(1); });
                    if (g2.needs_grad(b))
                      detail::bcast_reduce_into(g2.grad_acc(b), d, g2.val(a), g2.val(b), k,
                                                [](S, S) { return S(-1); });
                  });
}

template <class S>
Var mul(Graph<S>& g, Var a, Var b) {
  const Tensor<S>&A = g.val(a), &B = g.val(b);
  Bcast k = bcast_kind(A, B);
  Var self{int(g.node_count())};
  return g.record(detail::bcast_apply(A, B, k, [](S x, S y) { return x * y; }), {a, b},
                  [=](Graph<S>& g2) {
                    const Tensor<S>& d = g2.grad(self);
                    if (g2.needs_grad(a))
                      detail::lhs_accum(g2.grad_acc(a), d, g2.val(a), g2.val(b), k,
                                        [](S, S y) { return y; });
                    if (g2.needs_grad(b))
                      detail::bcast_reduce_into(g2.grad_acc(b), d, g2.val(a), g2.val(b), k,
                                                [](S x, S) { return x; });
                  });
}

template <class S>
Var div(Graph<S>& g, Var a, Var b) {
  const Tensor<S>&A = g.val(a), &B = g.val(b);
  Bcast k = bcast_kind(A, B);
  Var self{int(g.node_count())};
  return g.record(detail::bcast_apply(A, B, k, [](S x, S y) { return x / y; }), {a, b},
                  [=](Graph<S>& g2) {
                    const Tensor<S>& d = g2.grad(self);
                    if (g2.needs_grad(a))
                      detail::lhs_accum(g2.grad_acc(a), d, g2.val(a), g2.val(b), k,
                                        [](S, S y) { return S(1) / y; });
                    if (g2.needs_grad(b))
                      detail::bcast_reduce_into(g2.grad_acc(b), d, g2.val(a), g2.val(b), k,
                                                [](S x, S y) { return -x / (y * y); });
                  });
}

// ---- unary elementwise ------------------------------------------------------

namespace detail {

// Generic unary op: out = f(x); backward weight df(x, y) where y = f(x).
template <class S, class Ff, class Fd>
Var unary(Graph<S>& g, Var x, Ff f, Fd df) {
  const Tensor<S>& X = g.val(x);
  Tensor<S> out(X.n, X.c, X.h, X.w);
  for (Eigen::Index i = 0; i < X.size(); ++i) out.data[i] = f(X.data[i]);
  Var self{int(g.node_count())};
  return g.record(std::move(out), {x}, [=](Graph<S>& g2) {
    if (!g2.needs_grad(x)) return;
    const Tensor<S>& d = g2.grad(self);
    const Tensor<S>& X2 = g2.val(x);
    const Tensor<S>& Y2 = g2.val(self);
    Tensor<S>& gx = g2.grad_acc(x);
    for (Eigen::Index i = 0; i < d.size(); ++i)
      gx.data[i] += d.data[i] * df(X2.data[i], Y2.data[i]);
  });
}

}  // namespace detail

template <class S>
Var neg(Graph<S>& g, Var x) {
  return detail::unary(g, x, [](S v) { return -v; }, [](S, S) { return S(-1); });
}

template <class S>
Var scale(Graph<S>& g, Var x, S k) {
  return detail::unary(g, x, [k](S v) { return k * v; }, [k](S, S) { return k; });
}

template <class S>
Var add_scalar(Graph<S>& g, Var x, S k) {
  return detail::unary(g, x, [k](S v) { return v + k; }, [](S, S) { return S(1); });
}

template <class S>
Var relu(Graph<S>& g, Var x) {
  return detail::unary(
      g, x, [](S v) { return v > 0 ? v : S(0); }, [](S v, S) { return v > 0 ? S(1) : S(0); });
}

template <class S>
Var elu(Graph<S>& g, Var x) {
  return detail::unary(
      g, x, [](S v) { return v > 0 ? v : S(std::expm1(double(v))); },
      [](S v, S y) { return v > 0 ? S(1) : y + S(1); });
}

template <class S>
Var sigmoid(Graph<S>& g, Var x) {
  auto f = [](S v) {
    if (v >= 0) return S(1) / (S(1) + S(std::exp(-double(v))));
    S e = S(std::exp(double(v)));
    return e / (S(1) + e);
  };
  return detail::unary(g, x, f, [](S, S y) { return y * (S(1) - y); });
}

template <class S>
Var logv(Graph<S>& g, Var x) {
  return detail::unary(
      g, x, [](S v) { return S(std::log(double(v))); }, [](S v, S) { return S(1) / v; });
}

template <class S>
Var sq(Graph<S>& g, Var x) {
  return detail::unary(g, x, [](S v) { return v * v; }, [](S v, S) { return S(2) * v; });
}

// x^p for x > 0 (p may be fractional); p == 0 gives the constant 1.
template <class S>
Var pow_scalar(Graph<S>& g, Var x, S p) {
  return detail::unary(
      g, x, [p](S v) { return S(std::pow(double(v), double(p))); },
      [p](S v, S y) { return p == S(0) ? S(0) : p * y / v; });
}

// Gradient is passed only strictly inside (lo, hi); the subgradient at the
// clamp boundary is taken as zero.
template <class S>
Var clamp(Graph<S>& g, Var x, S lo, S hi) {
  return detail::unary(
      g, x, [lo, hi](S v) { return v < lo ? lo : (v > hi ? hi : v); },
      [lo, hi](S v, S) { return (v > lo && v < hi) ? S(1) : S(0); });
}

// ---- reductions -------------------------------------------------------------

template <class S>
Var sum_all(Graph<S>& g, Var x) {
  const Tensor<S>& X = g.val(x);
  Tensor<S> out = Tensor<S>::scalar(X.data.sum());
  Var self{int(g.node_count())};
  return g.record(std::move(out), {x}, [=](Graph<S>& g2) {
    if (!g2.needs_grad(x)) return;
    g2.grad_acc(x).data += g2.grad(self).data[0];
  });
}

template <class S>
Var mean_all(Graph<S>& g, Var x) {
  const Tensor<S>& X = g.val(x);
  const S inv = S(1) / S(X.size());
  Tensor<S> out = Tensor<S>::scalar(X.data.sum() * inv);
  Var self{int(g.node_count())};
  return g.record(std::move(out), {x}, [=](Graph<S>& g2) {
    if (!g2.needs_grad(x)) return;
    g2.grad_acc(x).data += g2.grad(self).data[0] * inv;
  });
}

template <class S>
Var sum_per_sample(Graph<S>& g, Var x) {
  const Tensor<S>& X = g.val(x);
  const Eigen::Index chw = X.c * X.h * X.w;
  Tensor<S> out(X.n, 1, 1, 1);
  for (Eigen::Index ni = 0; ni < X.n; ++ni) out.data[ni] = X.data.segment(ni * chw, chw).sum();
  Var self{int(g.node_count())};
  return g.record(std::move(out), {x}, [=](Graph<S>& g2) {
    if (!g2.needs_grad(x)) return;
    const Tensor<S>& d = g2.grad(self);
    Tensor<S>& gx = g2.grad_acc(x);
    for (Eigen::Index ni = 0; ni < d.n; ++ni) gx.data.segment(ni * chw, chw) += d.data[ni];
  });
}

template <class S>
Var mean_per_sample(Graph<S>& g, Var x) {
  const Tensor<S>& X = g.val(x);
  return scale(g, sum_per_sample(g, x), S(1) / S(X.c * X.h * X.w));
}

// ---- shape ops --------------------------------------------------------------

template <class S>
Var concat_c(Graph<S>& g, Var a, Var b) {
  const Tensor<S>&A = g.val(a), &B = g.val(b);
  check(A.n == B.n && A.h == B.h && A.w == B.w, "concat_c: spatial/batch mismatch");
  Tensor<S> out(A.n, A.c + B.c, A.h, A.w);
  const Eigen::Index plane = A.h * A.w;
  for (Eigen::Index ni = 0; ni < A.n; ++ni) {
    for (Eigen::Index ci = 0; ci < A.c; ++ci)
      std::copy_n(A.plane_ptr(ni, ci), plane, out.plane_ptr(ni, ci));
    for (Eigen::Index ci = 0; ci < B.c; ++ci)
      std::copy_n(B.plane_ptr(ni, ci), plane, out.plane_ptr(ni, A.c + ci));
  }
  Var self{int(g.node_count())};
  const Eigen::Index ac = A.c, bc = B.c;
  return g.record(std::move(out), {a, b}, [=](Graph<S>& g2) {
    const Tensor<S>& d = g2.grad(self);
    const Eigen::Index pl = d.h * d.w;
    if (g2.needs_grad(a)) {
      Tensor<S>& ga = g2.grad_acc(a);
      for (Eigen::Index ni = 0; ni < d.n; ++ni)
        for (Eigen::Index ci = 0; ci < ac; ++ci)
          for (Eigen::Index i = 0; i < pl; ++i)
            ga.plane_ptr(ni, ci)[i] += d.plane_ptr(ni, ci)[i];
    }
    if (g2.needs_grad(b)) {
      Tensor<S>& gb = g2.grad_acc(b);
      for (Eigen::Index ni = 0; ni < d.n; ++ni)
        for (Eigen::Index ci = 0; ci < bc; ++ci)
          for (Eigen::Index i = 0; i < pl; ++i)
            gb.plane_ptr(ni, ci)[i] += d.plane_ptr(ni, ac + ci)[i];
    }
  });
}

template <class S>
Var slice_c(Graph<S>& g, Var x, Eigen::Index c0, Eigen::Index len) {
  const Tensor<S>& X = g.val(x);
  check(c0 >= 0 && len > 0 && c0 + len <= X.c, "slice_c: channel range out of bounds");
  Tensor<S> out(X.n, len, X.h, X.w);
  const Eigen::Index plane = X.h * X.w;
  for (Eigen::Index ni = 0; ni < X.n; ++ni)
    for (Eigen::Index ci = 0; ci < len; ++ci)
      std::copy_n(X.plane_ptr(ni, c0 + ci), plane, out.plane_ptr(ni, ci));
  Var self{int(g.node_count())};
  return g.record(std::move(out), {x}, [=](Graph<S>& g2) {
    if (!g2.needs_grad(x)) return;
    const Tensor<S>& d = g2.grad(self);
    Tensor<S>& gx = g2.grad_acc(x);
    const Eigen::Index pl = d.h * d.w;
    for (Eigen::Index ni = 0; ni < d.n; ++ni)
      for (Eigen::Index ci = 0; ci < len; ++ci)
        for (Eigen::Index i = 0; i < pl; ++i)
          gx.plane_ptr(ni, c0 + ci)[i] += d.plane_ptr(ni, ci)[i];
  });
}

template <class S>
Var slice_n(Graph<S>& g, Var x, Eigen::Index n0, Eigen::Index len) {
  const Tensor<S>& X = g.val(x);
  check(n0 >= 0 && len > 0 && n0 + len <= X.n, "slice_n: sample range out of bounds");
  Tensor<S> out(len, X.c, X.h, X.w);
  const Eigen::Index chw = X.c * X.h * X.w;
  std::copy_n(X.data.data() + n0 * chw, len * chw, out.data.data());
  Var self{int(g.node_count())};
  return g.record(std::move(out), {x}, [=](Graph<S>& g2) {
    if (!g2.needs_grad(x)) return;
    const Tensor<S>& d = g2.grad(self);
    g2.grad_acc(x).data.segment(n0 * chw, len * chw) += d.data;
  });
}

// ---- softmax over channels ---------------------------------------------------

template <class S>
Var softmax_c(Graph<S>& g, Var x) {
  const Tensor<S>& X = g.val(x);
  Tensor<S> out(X.n, X.c, X.h, X.w);
  const Eigen::Index plane = X.h * X.w;
  for (Eigen::Index ni = 0; ni < X.n; ++ni)
    for (Eigen::Index p = 0; p < plane; ++p) {
      S mx = X.plane_ptr(ni, 0)[p];
      for (Eigen::Index ci = 1; ci < X.c; ++ci) mx = std::max(mx, X.plane_ptr(ni, ci)[p]);
      S sum = 0;
      for (Eigen::Index ci = 0; ci < X.c; ++ci) {
        S e = S(std::exp(double(X.plane_ptr(ni, ci)[p] - mx)));
        out.plane_ptr(ni, ci)[p] = e;
        sum += e;
      }
      for (Eigen::Index ci = 0; ci < X.c; ++ci) out.plane_ptr(ni, ci)[p] /= sum;
    }
  Var self{int(g.node_count())};
  return g.record(std::move(out), {x}, [=](Graph<S>& g2) {
    if (!g2.needs_grad(x)) return;
    const Tensor<S>& d = g2.grad(self);
    const Tensor<S>& Y = g2.val(self);
    Tensor<S>& gx = g2.grad_acc(x);
    const Eigen::Index pl = d.h * d.w;
    for (Eigen::Index ni = 0; ni < d.n; ++ni)
      for (Eigen::Index p = 0; p < pl; ++p) {
        S dot = 0;
        for (Eigen::Index ci = 0; ci < d.c; ++ci)
          dot += d.plane_ptr(ni, ci)[p] * Y.plane_ptr(ni, ci)[p];
        for (Eigen::Index ci = 0; ci < d.c; ++ci)
          gx.plane_ptr(ni, ci)[p] +=
              Y.plane_ptr(ni, ci)[p] * (d.plane_ptr(ni, ci)[p] - dot);
      }
  });
}

// ---- label gather -------------------------------------------------------------

// out(n,0,y,x) = probs(n, labels(n,0,y,x), y, x). Labels outside [0, C) are a
// data error and throw.
template <class S>
Var gather_label(Graph<S>& g, Var probs, const Tensor<int32_t>& labels) {
  const Tensor<S>& P = g.val(probs);
  check(labels.n == P.n && labels.c == 1 && labels.h == P.h && labels.w == P.w,
        "gather_label: label shape mismatch");
  Tensor<S> out(P.n, 1, P.h, P.w);
  const Eigen::Index plane = P.h * P.w;
  for (Eigen::Index ni = 0; ni < P.n; ++ni)
    for (Eigen::Index p = 0; p < plane; ++p) {
      int32_t l = labels.plane_ptr(ni, 0)[p];
      if (l < 0 || l >= P.c)
        throw std::invalid_argument("gather_label: label value " + std::to_string(l) +
                                    " outside [0," + std::to_string(P.c) + ")");
      out.plane_ptr(ni, 0)[p] = P.plane_ptr(ni, l)[p];
    }
  Var self{int(g.node_count())};
  auto lab = std::make_shared<Tensor<int32_t>>(labels);
  return g.record(std::move(out), {probs}, [=](Graph<S>& g2) {
    if (!g2.needs_grad(probs)) return;
    const Tensor<S>& d = g2.grad(self);
    Tensor<S>& gp = g2.grad_acc(probs);
    const Eigen::Index pl = d.h * d.w;
    for (Eigen::Index ni = 0; ni < d.n; ++ni)
      for (Eigen::Index p = 0; p < pl; ++p)
        gp.plane_ptr(ni, lab->plane_ptr(ni, 0)[p])[p] += d.plane_ptr(ni, 0)[p];
  });
}

// ---- spatial forward differences ----------------------------------------------

// out(n,c,y,x) = in(n,c,y,x+1) - in(n,c,y,x); width shrinks by one.
template <class S>
Var diff_x(Graph<S>& g, Var x) {
  const Tensor<S>& X = g.val(x);
  check(X.w >= 2, "diff_x: width must be >= 2");
  Tensor<S> out(X.n, X.c, X.h, X.w - 1);
  for (Eigen::Index ni = 0; ni < X.n; ++ni)
    for (Eigen::Index ci = 0; ci < X.c; ++ci) {
      const S* ip = X.plane_ptr(ni, ci);
      S* op = out.plane_ptr(ni, ci);
      for (Eigen::Index yi = 0; yi < X.h; ++yi)
        for (Eigen::Index xi = 0; xi + 1 < X.w; ++xi)
          op[yi * (X.w - 1) + xi] = ip[yi * X.w + xi + 1] - ip[yi * X.w + xi];
    }
  Var self{int(g.node_count())};
  return g.record(std::move(out), {x}, [=](Graph<S>& g2) {
    if (!g2.needs_grad(x)) return;
    const Tensor<S>& d = g2.grad(self);
    Tensor<S>& gx = g2.grad_acc(x);
    const Eigen::Index W = gx.w;
    for (Eigen::Index ni = 0; ni < d.n; ++ni)
      for (Eigen::Index ci = 0; ci < d.c; ++ci) {
        const S* dp = d.plane_ptr(ni, ci);
        S* gp = gx.plane_ptr(ni, ci);
        for (Eigen::Index yi = 0; yi < d.h; ++yi)
          for (Eigen::Index xi = 0; xi < d.w; ++xi) {
            gp[yi * W + xi + 1] += dp[yi * d.w + xi];
            gp[yi * W + xi] -= dp[yi * d.w + xi];
          }
      }
  });
}

// out(n,c,y,x) = in(n,c,y+1,x) - in(n,c,y,x); height shrinks by one.
template <class S>
Var diff_y(Graph<S>& g, Var x) {
  const Tensor<S>& X = g.val(x);
  check(X.h >= 2, "diff_y: height must be >= 2");
  Tensor<S> out(X.n, X.c, X.h - 1, X.w);
  for (Eigen::Index ni = 0; ni < X.n; ++ni)
    for (Eigen::Index ci = 0; ci < X.c; ++ci) {
      const S* ip = X.plane_ptr(ni, ci);
      S* op = out.plane_ptr(ni, ci);
      for (Eigen::Index yi = 0; yi + 1 < X.h; ++yi)
        for (Eigen::Index xi = 0; xi < X.w; ++xi)
          op[yi * X.w + xi] = ip[(yi + 1) * X.w + xi] - ip[yi * X.w + xi];
    }
  Var self{int(g.node_count())};
  return g.record(std::move(out), {x}, [=](Graph<S>& g2) {
    if (!g2.needs_grad(x)) return;
    const Tensor<S>& d = g2.grad(self);
    Tensor<S>& gx = g2.grad_acc(x);
    for (Eigen::Index ni = 0; ni < d.n; ++ni)
      for (Eigen::Index ci = 0; ci < d.c; ++ci) {
        const S* dp = d.plane_ptr(ni, ci);
        S* gp = gx.plane_ptr(ni, ci);
        for (Eigen::Index yi = 0; yi < d.h; ++yi)
          for (Eigen::Index xi = 0; xi < d.w; ++xi) {
            gp[(yi + 1) * d.w + xi] += dp[yi * d.w + xi];
            gp[yi * d.w + xi] -= dp[yi * d.w + xi];
          }
      }
  });
}

// Mean of two same-shaped tensors; used to fuse the two decoder branches and
// the two displacement fields.
template <class S>
Var mean2(Graph<S>& g, Var a, Var b) {
  return scale(g, add(g, a, b), S(0.5));
}

}  // namespace lithoseg
