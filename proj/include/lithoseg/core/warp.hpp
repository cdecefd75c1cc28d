#pragma once

#include "lithoseg/core/ops.hpp"

namespace lithoseg {

// Backward warping: out(n,c,y,x) = bilinear sample of img[n,c] at
// (x + dx, y + dy) where dx = dvf channel 0 and dy = dvf channel 1, both in
// pixels. Sample coordinates are clamped to the image border; where a
// coordinate is clamped its displacement receives zero gradient.
template <class S>
Var warp_bilinear(Graph<S>& g, Var img, Var dvf) {
  const Tensor<S>& I = g.val(img);
  const Tensor<S>& D = g.val(dvf);
  check(D.n == I.n && D.c == 2 && D.h == I.h && D.w == I.w,
        "warp_bilinear: dvf must be (N,2,H,W) matching the image, got " + D.shape_str());
  const Eigen::Index H = I.h, W = I.w, C = I.c;

  auto sample_plane = [&](const S* ip, S sx, S sy) {
    const Eigen::Index x0 = Eigen::Index(std::floor(double(sx)));
    const Eigen::Index y0 = Eigen::Index(std::floor(double(sy)));
    const Eigen::Index x1 = std::min(x0 + 1, W - 1);
    const Eigen::Index y1 = std::min(y0 + 1, H - 1);
    const S fx = sx - S(x0), fy = sy - S(y0);
    return (S(1) - fy) * ((S(1) - fx) * ip[y0 * W + x0] + fx * ip[y0 * W + x1]) +
           fy * ((S(1) - fx) * ip[y1 * W + x0] + fx * ip[y1 * W + x1]);
  };

  Tensor<S> out(I.n, C, H, W);
  for (Eigen::Index ni = 0; ni < I.n; ++ni) {
    const S* dxp = D.plane_ptr(ni, 0);
    const S* dyp = D.plane_ptr(ni, 1);
    for (Eigen::Index ci = 0; ci < C; ++ci) {
      const S* ip = I.plane_ptr(ni, ci);
      S* op = out.plane_ptr(ni, ci);
      for (Eigen::Index y = 0; y < H; ++y)
        for (Eigen::Index x = 0; x < W; ++x) {
          const Eigen::Index p = y * W + x;
          S sx = S(x) + dxp[p], sy = S(y) + dyp[p];
          sx = std::min(std::max(sx, S(0)), S(W - 1));
          sy = std::min(std::max(sy, S(0)), S(H - 1));
          op[p] = sample_plane(ip, sx, sy);
        }
    }
  }

  Var self{int(g.node_count())};
  return g.record(std::move(out), {img, dvf}, [=](Graph<S>& g2) {
    const Tensor<S>& d = g2.grad(self);
    const Tensor<S>& I2 = g2.val(img);
    const Tensor<S>& D2 = g2.val(dvf);
    const bool ni_ = g2.needs_grad(img), nd_ = g2.needs_grad(dvf);

    for (Eigen::Index ni2 = 0; ni2 < d.n; ++ni2) {
      const S* dxp = D2.plane_ptr(ni2, 0);
      const S* dyp = D2.plane_ptr(ni2, 1);
      for (Eigen::Index y = 0; y < H; ++y)
        for (Eigen::Index x = 0; x < W; ++x) {
          const Eigen::Index p = y * W + x;
          const S rx = S(x) + dxp[p], ry = S(y) + dyp[p];
          const bool cx = rx <= S(0) || rx >= S(W - 1);
          const bool cy = ry <= S(0) || ry >= S(H - 1);
          const S sx = std::min(std::max(rx, S(0)), S(W - 1));
          const S sy = std::min(std::max(ry, S(0)), S(H - 1));
          const Eigen::Index x0 = Eigen::Index(std::floor(double(sx)));
          const Eigen::Index y0 = Eigen::Index(std::floor(double(sy)));
          const Eigen::Index x1 = std::min(x0 + 1, W - 1);
          const Eigen::Index y1 = std::min(y0 + 1, H - 1);
          const S fx = sx - S(x0), fy = sy - S(y0);

          S gdx = 0, gdy = 0;
          for (Eigen::Index ci = 0; ci < C; ++ci) {
            const S dv = d.plane_ptr(ni2, ci)[p];
            if (dv == S(0)) continue;
            const S* ip = I2.plane_ptr(ni2, ci);
            if (ni_) {
              S* gp = g2.grad_acc(img).plane_ptr(ni2, ci);
              gp[y0 * W + x0] += dv * (S(1) - fy) * (S(1) - fx);
              gp[y0 * W + x1] += dv * (S(1) - fy) * fx;
              gp[y1 * W + x0] += dv * fy * (S(1) - fx);
              gp[y1 * W + x1] += dv * fy * fx;
            }
            if (nd_) {
              const S v00 = ip[y0 * W + x0], v01 = ip[y0 * W + x1];
              const S v10 = ip[y1 * W + x0], v11 = ip[y1 * W + x1];
              if (!cx) gdx += dv * ((S(1) - fy) * (v01 - v00) + fy * (v11 - v10));
              if (!cy) gdy += dv * ((S(1) - fx) * (v10 - v00) + fx * (v11 - v01));
            }
          }
          if (nd_) {
            g2.grad_acc(dvf).plane_ptr(ni2, 0)[p] += gdx;
            g2.grad_acc(dvf).plane_ptr(ni2, 1)[p] += gdy;
          }
        }
    }
  });
}

}  // namespace lithoseg
