#pragma once

#include "lithoseg/core/ops.hpp"

namespace lithoseg {

namespace detail {

// Bilinear read with zero padding outside the image; also reports the spatial
// derivatives needed for offset gradients.
template <class S>
struct BilinSample {
  S value, ddy, ddx;
};

template <class S>
BilinSample<S> bilinear_zero(const S* ip, Eigen::Index H, Eigen::Index W, S py, S px) {
  const Eigen::Index y0 = Eigen::Index(std::floor(double(py)));
  const Eigen::Index x0 = Eigen::Index(std::floor(double(px)));
  const S fy = py - S(y0), fx = px - S(x0);
  auto v = [&](Eigen::Index yy, Eigen::Index xx) -> S {
    return (yy >= 0 && yy < H && xx >= 0 && xx < W) ? ip[yy * W + xx] : S(0);
  };
  const S v00 = v(y0, x0), v01 = v(y0, x0 + 1), v10 = v(y0 + 1, x0), v11 = v(y0 + 1, x0 + 1);
  BilinSample<S> r;
  r.value = (S(1) - fy) * ((S(1) - fx) * v00 + fx * v01) + fy * ((S(1) - fx) * v10 + fx * v11);
  r.ddy = (S(1) - fx) * (v10 - v00) + fx * (v11 - v01);
  r.ddx = (S(1) - fy) * (v01 - v00) + fy * (v11 - v10);
  return r;
}

}  // namespace detail

// Deformable convolution (stride 1, "same" zero padding). Each kernel tap k
// of the KxK grid is displaced per output pixel by the predicted offset pair
// (offsets channel 2k = dy, 2k+1 = dx); displaced taps are read with bilinear
// interpolation over a zero border. weight: (C_out, C_in, K, K).
template <class S>
Var deform_conv2d(Graph<S>& g, Var x, Var w, Var b, Var offsets) {
  const Tensor<S>& X = g.val(x);
  const Tensor<S>& W = g.val(w);
  const Tensor<S>& B = g.val(b);
  const Tensor<S>& O = g.val(offsets);
  check(W.h == W.w && W.h % 2 == 1, "deform_conv2d: kernel must be square and odd");
  check(W.c == X.c, "deform_conv2d: weight/input channel mismatch");
  check(B.c == W.n && B.n == 1 && B.h == 1 && B.w == 1, "deform_conv2d: bias shape mismatch");
  const int K = int(W.h);
  check(O.n == X.n && O.c == 2 * K * K && O.h == X.h && O.w == X.w,
        "deform_conv2d: offsets must be (N," + std::to_string(2 * K * K) + ",H,W), got " +
            O.shape_str());

  const Eigen::Index Cout = W.n, Cin = X.c, H = X.h, Wd = X.w, plane = H * Wd;
  const Eigen::Index ckk = Cin * K * K;
  const int pad = (K - 1) / 2;
  auto Wm = W.as_mat(Cout, ckk);

  auto fill_cols = [=](const Tensor<S>& Xs, const Tensor<S>& Os, Eigen::Index ni, S* cols) {
    for (Eigen::Index ci = 0; ci < Cin; ++ci) {
      const S* ip = Xs.plane_ptr(ni, ci);
      for (int k = 0; k < K * K; ++k) {
        const S* offy = Os.plane_ptr(ni, 2 * k);
        const S* offx = Os.plane_ptr(ni, 2 * k + 1);
        const int ky = k / K, kx = k % K;
        S* row = cols + (ci * K * K + k) * plane;
        for (Eigen::Index y = 0; y < H; ++y)
          for (Eigen::Index xx = 0; xx < Wd; ++xx) {
            const Eigen::Index p = y * Wd + xx;
            const S py = S(y + ky - pad) + offy[p];
            const S px = S(xx + kx - pad) + offx[p];
            row[p] = detail::bilinear_zero(ip, H, Wd, py, px).value;
          }
      }
    }
  };

  Tensor<S> out(X.n, Cout, H, Wd);
  Tensor<S> cols(1, 1, ckk, plane);
  for (Eigen::Index ni = 0; ni < X.n; ++ni) {
    fill_cols(X, O, ni, cols.data.data());
    out.sample_mat(ni).noalias() = Wm * cols.as_mat(ckk, plane);
    for (Eigen::Index co = 0; co < Cout; ++co) {
      S* op = out.plane_ptr(ni, co);
      for (Eigen::Index i = 0; i < plane; ++i) op[i] += B.data[co];
    }
  }

  Var self{int(g.node_count())};
  return g.record(std::move(out), {x, w, b, offsets}, [=](Graph<S>& g2) {
    const Tensor<S>& d = g2.grad(self);
    const Tensor<S>& X2 = g2.val(x);
    const Tensor<S>& W2 = g2.val(w);
    const Tensor<S>& O2 = g2.val(offsets);
    auto Wm2 = W2.as_mat(Cout, ckk);
    const bool nx = g2.needs_grad(x), nw = g2.needs_grad(w);
    const bool nb = g2.needs_grad(b), no = g2.needs_grad(offsets);

    Tensor<S> cols2(1, 1, ckk, plane);
    Tensor<S> dcols(1, 1, ckk, plane);
    for (Eigen::Index ni = 0; ni < d.n; ++ni) {
      auto Dm = d.sample_mat(ni);
      if (nw) {
        fill_cols(X2, O2, ni, cols2.data.data());
        g2.grad_acc(w).as_mat(Cout, ckk).noalias() += Dm * cols2.as_mat(ckk, plane).transpose();
      }
      if (nb) {
        Tensor<S>& gb = g2.grad_acc(b);
        for (Eigen::Index co = 0; co < Cout; ++co) gb.data[co] += Dm.row(co).sum();
      }
      if (!nx && !no) continue;
      dcols.as_mat(ckk, plane).noalias() = Wm2.transpose() * Dm;

      for (Eigen::Index ci = 0; ci < Cin; ++ci) {
        const S* ip = X2.plane_ptr(ni, ci);
        for (int k = 0; k < K * K; ++k) {
          const S* offy = O2.plane_ptr(ni, 2 * k);
          const S* offx = O2.plane_ptr(ni, 2 * k + 1);
          const int ky = k / K, kx = k % K;
          const S* drow = dcols.data.data() + (ci * K * K + k) * plane;
          for (Eigen::Index y = 0; y < H; ++y)
            for (Eigen::Index xx = 0; xx < Wd; ++xx) {
              const Eigen::Index p = y * Wd + xx;
              const S dv = drow[p];
              if (dv == S(0)) continue;
              const S py = S(y + ky - pad) + offy[p];
              const S px = S(xx + kx - pad) + offx[p];
              if (no) {
                auto s = detail::bilinear_zero(ip, H, Wd, py, px);
                g2.grad_acc(offsets).plane_ptr(ni, 2 * k)[p] += dv * s.ddy;
                g2.grad_acc(offsets).plane_ptr(ni, 2 * k + 1)[p] += dv * s.ddx;
              }
              if (nx) {
                const Eigen::Index y0 = Eigen::Index(std::floor(double(py)));
                const Eigen::Index x0 = Eigen::Index(std::floor(double(px)));
                const S fy = py - S(y0), fx = px - S(x0);
                S* gp = g2.grad_acc(x).plane_ptr(ni, ci);
                auto acc = [&](Eigen::Index yy, Eigen::Index xi, S wgt) {
                  if (yy >= 0 && yy < H && xi >= 0 && xi < Wd) gp[yy * Wd + xi] += dv * wgt;
                };
                acc(y0, x0, (S(1) - fy) * (S(1) - fx));
                acc(y0, x0 + 1, (S(1) - fy) * fx);
                acc(y0 + 1, x0, fy * (S(1) - fx));
                acc(y0 + 1, x0 + 1, fy * fx);
              }
            }
        }
      }
    }
  });
}

}  // namespace lithoseg
