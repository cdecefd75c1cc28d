#pragma once

#include <memory>

#include "lithoseg/core/ops.hpp"

namespace lithoseg {

// 2x2 max pooling with stride 2. Ties pick the first element in row-major
// window order so backward routing is deterministic.
template <class S>
Var maxpool2(Graph<S>& g, Var x) {
  const Tensor<S>& X = g.val(x);
  check(X.h % 2 == 0 && X.w % 2 == 0, "maxpool2: spatial dims must be even, got " + X.shape_str());
  const Eigen::Index H = X.h, W = X.w, Ho = H / 2, Wo = W / 2;
  Tensor<S> out(X.n, X.c, Ho, Wo);
  auto arg = std::make_shared<std::vector<uint8_t>>(size_t(out.size()));
  Eigen::Index oi = 0;
  for (Eigen::Index ni = 0; ni < X.n; ++ni)
    for (Eigen::Index ci = 0; ci < X.c; ++ci) {
      const S* ip = X.plane_ptr(ni, ci);
      S* op = out.plane_ptr(ni, ci);
      for (Eigen::Index y = 0; y < Ho; ++y)
        for (Eigen::Index xx = 0; xx < Wo; ++xx, ++oi) {
          uint8_t best = 0;
          S bv = ip[(2 * y) * W + 2 * xx];
          for (uint8_t k = 1; k < 4; ++k) {
            S v = ip[(2 * y + k / 2) * W + 2 * xx + k % 2];
            if (v > bv) {
              bv = v;
              best = k;
            }
          }
          op[y * Wo + xx] = bv;
          (*arg)[size_t(oi)] = best;
        }
    }
  Var self{int(g.node_count())};
  return g.record(std::move(out), {x}, [=](Graph<S>& g2) {
    if (!g2.needs_grad(x)) return;
    const Tensor<S>& d = g2.grad(self);
    Tensor<S>& gx = g2.grad_acc(x);
    Eigen::Index i = 0;
    for (Eigen::Index ni = 0; ni < d.n; ++ni)
      for (Eigen::Index ci = 0; ci < d.c; ++ci) {
        const S* dp = d.plane_ptr(ni, ci);
        S* gp = gx.plane_ptr(ni, ci);
        for (Eigen::Index y = 0; y < d.h; ++y)
          for (Eigen::Index xx = 0; xx < d.w; ++xx, ++i) {
            uint8_t k = (*arg)[size_t(i)];
            gp[(2 * y + k / 2) * W + 2 * xx + k % 2] += dp[y * d.w + xx];
          }
      }
  });
}

// 2x2 average pooling with stride 2.
template <class S>
Var avgpool2(Graph<S>& g, Var x) {
  const Tensor<S>& X = g.val(x);
  check(X.h % 2 == 0 && X.w % 2 == 0, "avgpool2: spatial dims must be even, got " + X.shape_str());
  const Eigen::Index H = X.h, W = X.w, Ho = H / 2, Wo = W / 2;
  Tensor<S> out(X.n, X.c, Ho, Wo);
  for (Eigen::Index ni = 0; ni < X.n; ++ni)
    for (Eigen::Index ci = 0; ci < X.c; ++ci) {
      const S* ip = X.plane_ptr(ni, ci);
      S* op = out.plane_ptr(ni, ci);
      for (Eigen::Index y = 0; y < Ho; ++y)
        for (Eigen::Index xx = 0; xx < Wo; ++xx)
          op[y * Wo + xx] = S(0.25) * (ip[2 * y * W + 2 * xx] + ip[2 * y * W + 2 * xx + 1] +
                                       ip[(2 * y + 1) * W + 2 * xx] +
                                       ip[(2 * y + 1) * W + 2 * xx + 1]);
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
        for (Eigen::Index y = 0; y < d.h; ++y)
          for (Eigen::Index xx = 0; xx < d.w; ++xx) {
            const S v = S(0.25) * dp[y * d.w + xx];
            gp[2 * y * W + 2 * xx] += v;
            gp[2 * y * W + 2 * xx + 1] += v;
            gp[(2 * y + 1) * W + 2 * xx] += v;
            gp[(2 * y + 1) * W + 2 * xx + 1] += v;
          }
      }
  });
}

// Stride-1 max pooling with an odd window and replicate padding, i.e. each
// output is the max over the window clamped to the image. This is the
// morphological dilation used by the boundary extraction. Ties pick the
// first position in row-major scan order.
template <class S>
Var maxpool_same(Graph<S>& g, Var x, int win) {
  const Tensor<S>& X = g.val(x);
  check(win >= 1 && win % 2 == 1, "maxpool_same: window must be odd and positive");
  const Eigen::Index H = X.h, W = X.w;
  const int r = win / 2;
  Tensor<S> out(X.n, X.c, H, W);
  auto arg = std::make_shared<std::vector<int32_t>>(size_t(out.size()));
  Eigen::Index oi = 0;
  for (Eigen::Index ni = 0; ni < X.n; ++ni)
    for (Eigen::Index ci = 0; ci < X.c; ++ci) {
      const S* ip = X.plane_ptr(ni, ci);
      S* op = out.plane_ptr(ni, ci);
      for (Eigen::Index y = 0; y < H; ++y) {
        const Eigen::Index y0 = std::max<Eigen::Index>(0, y - r);
        const Eigen::Index y1 = std::min<Eigen::Index>(H - 1, y + r);
        for (Eigen::Index xx = 0; xx < W; ++xx, ++oi) {
          const Eigen::Index x0 = std::max<Eigen::Index>(0, xx - r);
          const Eigen::Index x1 = std::min<Eigen::Index>(W - 1, xx + r);
          S bv = ip[y0 * W + x0];
          Eigen::Index bidx = y0 * W + x0;
          for (Eigen::Index yy = y0; yy <= y1; ++yy)
            for (Eigen::Index xi = x0; xi <= x1; ++xi) {
              if (ip[yy * W + xi] > bv) {
                bv = ip[yy * W + xi];
                bidx = yy * W + xi;
              }
            }
          op[y * W + xx] = bv;
          (*arg)[size_t(oi)] = int32_t(bidx);
        }
      }
    }
  Var self{int(g.node_count())};
  return g.record(std::move(out), {x}, [=](Graph<S>& g2) {
    if (!g2.needs_grad(x)) return;
    const Tensor<S>& d = g2.grad(self);
    Tensor<S>& gx = g2.grad_acc(x);
    const Eigen::Index plane = d.h * d.w;
    for (Eigen::Index ni = 0; ni < d.n; ++ni)
      for (Eigen::Index ci = 0; ci < d.c; ++ci) {
        const S* dp = d.plane_ptr(ni, ci);
        S* gp = gx.plane_ptr(ni, ci);
        const int32_t* ap = arg->data() + (ni * d.c + ci) * plane;
        for (Eigen::Index i = 0; i < plane; ++i) gp[ap[i]] += dp[i];
      }
  });
}

}  // namespace lithoseg
