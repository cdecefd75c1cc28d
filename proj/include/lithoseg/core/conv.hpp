#pragma once

#include "lithoseg/core/ops.hpp"

namespace lithoseg {

namespace detail {

// Expands one sample (C,H,W) into a (C*K*K) x (H*W) row-major patch matrix for
// a stride-1 dilated convolution with "same" zero padding p = d*(K-1)/2.
template <class S>
void im2col(const S* img, Eigen::Index C, Eigen::Index H, Eigen::Index W, int K, int dil,
            S* cols) {
  const Eigen::Index plane = H * W;
  const int pad = dil * (K - 1) / 2;
  Eigen::Index r = 0;
  for (Eigen::Index ci = 0; ci < C; ++ci)
    for (int ky = 0; ky < K; ++ky)
      for (int kx = 0; kx < K; ++kx, ++r) {
        const Eigen::Index oy = Eigen::Index(ky) * dil - pad;
        const Eigen::Index ox = Eigen::Index(kx) * dil - pad;
        S* row = cols + r * plane;
        const S* src = img + ci * plane;
        for (Eigen::Index y = 0; y < H; ++y) {
          const Eigen::Index sy = y + oy;
          S* out = row + y * W;
          if (sy < 0 || sy >= H) {
            std::fill_n(out, W, S(0));
            continue;
          }
          const S* in = src + sy * W;
          for (Eigen::Index x = 0; x < W; ++x) {
            const Eigen::Index sx = x + ox;
            out[x] = (sx >= 0 && sx < W) ? in[sx] : S(0);
          }
        }
      }
}

// Transpose of im2col: scatter-adds patch-matrix gradients back onto the image.
template <class S>
void col2im_add(const S* cols, Eigen::Index C, Eigen::Index H, Eigen::Index W, int K, int dil,
                S* img) {
  const Eigen::Index plane = H * W;
  const int pad = dil * (K - 1) / 2;
  Eigen::Index r = 0;
  for (Eigen::Index ci = 0; ci < C; ++ci)
    for (int ky = 0; ky < K; ++ky)
      for (int kx = 0; kx < K; ++kx, ++r) {
        const Eigen::Index oy = Eigen::Index(ky) * dil - pad;
        const Eigen::Index ox = Eigen::Index(kx) * dil - pad;
        const S* row = cols + r * plane;
        S* dst = img + ci * plane;
        for (Eigen::Index y = 0; y < H; ++y) {
          const Eigen::Index sy = y + oy;
          if (sy < 0 || sy >= H) continue;
          const S* in = row + y * W;
          S* out = dst + sy * W;
          for (Eigen::Index x = 0; x < W; ++x) {
            const Eigen::Index sx = x + ox;
            if (sx >= 0 && sx < W) out[sx] += in[x];
          }
        }
      }
}

}  // namespace detail

// Stride-1 "same" convolution with square kernel and optional dilation.
// weight: (C_out, C_in, K, K); bias: (1, C_out, 1, 1). 1x1 kernels skip the
// patch expansion and run as a plain GEMM.
template <class S>
Var conv2d(Graph<S>& g, Var x, Var w, Var b, int dilation = 1) {
  const Tensor<S>& X = g.val(x);
  const Tensor<S>& W = g.val(w);
  const Tensor<S>& B = g.val(b);
  check(W.h == W.w && W.h % 2 == 1, "conv2d: kernel must be square and odd");
  check(W.c == X.c, "conv2d: weight expects " + std::to_string(W.c) + " input channels, got " +
                        std::to_string(X.c));
  check(B.c == W.n && B.n == 1 && B.h == 1 && B.w == 1, "conv2d: bias shape mismatch");
  check(dilation >= 1, "conv2d: dilation must be >= 1");

  const int K = int(W.h);
  const Eigen::Index Cout = W.n, Cin = X.c, H = X.h, Wd = X.w, plane = H * Wd;
  const Eigen::Index ckk = Cin * K * K;
  Tensor<S> out(X.n, Cout, H, Wd);
  auto Wm = W.as_mat(Cout, ckk);

  Tensor<S> cols(1, 1, ckk, plane);
  for (Eigen::Index ni = 0; ni < X.n; ++ni) {
    if (K == 1) {
      out.sample_mat(ni).noalias() = Wm * X.sample_mat(ni);
    } else {
      detail::im2col(X.plane_ptr(ni, 0), Cin, H, Wd, K, dilation, cols.data.data());
      out.sample_mat(ni).noalias() = Wm * cols.as_mat(ckk, plane);
    }
    for (Eigen::Index ci = 0; ci < Cout; ++ci) {
      S* op = out.plane_ptr(ni, ci);
      const S bv = B.data[ci];
      for (Eigen::Index i = 0; i < plane; ++i) op[i] += bv;
    }
  }

  Var self{int(g.node_count())};
  const int dil = dilation;
  return g.record(std::move(out), {x, w, b}, [=](Graph<S>& g2) {
    const Tensor<S>& d = g2.grad(self);
    const Tensor<S>& X2 = g2.val(x);
    const Tensor<S>& W2 = g2.val(w);
    auto Wm2 = W2.as_mat(Cout, ckk);
    const bool nx = g2.needs_grad(x), nw = g2.needs_grad(w), nb = g2.needs_grad(b);

    Tensor<S> cols2(1, 1, ckk, plane);
    for (Eigen::Index ni = 0; ni < d.n; ++ni) {
      auto Dm = d.sample_mat(ni);
      if (nw) {
        auto Gw = g2.grad_acc(w).as_mat(Cout, ckk);
        if (K == 1) {
          Gw.noalias() += Dm * X2.sample_mat(ni).transpose();
        } else {
          detail::im2col(X2.plane_ptr(ni, 0), Cin, H, Wd, K, dil, cols2.data.data());
          Gw.noalias() += Dm * cols2.as_mat(ckk, plane).transpose();
        }
      }
      if (nx) {
        if (K == 1) {
          g2.grad_acc(x).sample_mat(ni).noalias() += Wm2.transpose() * Dm;
        } else {
          Tensor<S> dcols(1, 1, ckk, plane);
          dcols.as_mat(ckk, plane).noalias() = Wm2.transpose() * Dm;
          detail::col2im_add(dcols.data.data(), Cin, H, Wd, K, dil,
                             g2.grad_acc(x).plane_ptr(ni, 0));
        }
      }
      if (nb) {
        Tensor<S>& gb = g2.grad_acc(b);
        for (Eigen::Index ci = 0; ci < Cout; ++ci)
          gb.data[ci] += Dm.row(ci).sum();
      }
    }
  });
}

// Bias-free variant (used when a normalization layer directly follows, making
// an additive bias redundant). The zero bias leaf records no gradient.
template <class S>
Var conv2d(Graph<S>& g, Var x, Var w, int dilation = 1) {
  const Tensor<S>& W = g.val(w);
  Var zb = g.leaf(Tensor<S>::zeros(1, W.n, 1, 1));
  return conv2d(g, x, w, zb, dilation);
}

// 2x upsampling transposed convolution (kernel 2, stride 2): output pixels do
// not overlap, so each of the four kernel taps is an independent GEMM scatter.
// weight: (C_in, C_out, 2, 2); bias: (1, C_out, 1, 1).
template <class S>
Var conv_transpose2x(Graph<S>& g, Var x, Var w, Var b) {
  const Tensor<S>& X = g.val(x);
  const Tensor<S>& W = g.val(w);
  const Tensor<S>& B = g.val(b);
  check(W.h == 2 && W.w == 2, "conv_transpose2x: kernel must be 2x2");
  check(W.n == X.c, "conv_transpose2x: weight expects " + std::to_string(W.n) +
                        " input channels, got " + std::to_string(X.c));
  check(B.c == W.c && B.n == 1 && B.h == 1 && B.w == 1, "conv_transpose2x: bias shape mismatch");

  const Eigen::Index Cin = X.c, Cout = W.c, H = X.h, Wd = X.w;
  using Mat = typename Tensor<S>::MatRM;
  Tensor<S> out(X.n, Cout, 2 * H, 2 * Wd);

  // Gather tap (ky,kx) of the weight as a (C_in x C_out) matrix.
  auto tap_mat = [&](const Tensor<S>& Wt, int ky, int kx) {
    Mat m(Cin, Cout);
    for (Eigen::Index ci = 0; ci < Cin; ++ci)
      for (Eigen::Index co = 0; co < Cout; ++co)
        m(ci, co) = Wt.data[((ci * Cout + co) * 2 + ky) * 2 + kx];
    return m;
  };

  for (Eigen::Index ni = 0; ni < X.n; ++ni) {
    for (int ky = 0; ky < 2; ++ky)
      for (int kx = 0; kx < 2; ++kx) {
        Mat m = tap_mat(W, ky, kx);
        Mat sub = m.transpose() * X.sample_mat(ni);  // (C_out x H*W)
        for (Eigen::Index co = 0; co < Cout; ++co) {
          S* op = out.plane_ptr(ni, co);
          const S* sp = sub.data() + co * H * Wd;
          for (Eigen::Index y = 0; y < H; ++y)
            for (Eigen::Index xx = 0; xx < Wd; ++xx)
              op[(2 * y + ky) * 2 * Wd + 2 * xx + kx] = sp[y * Wd + xx] + B.data[co];
        }
      }
  }

  Var self{int(g.node_count())};
  return g.record(std::move(out), {x, w, b}, [=](Graph<S>& g2) {
    const Tensor<S>& d = g2.grad(self);
    const Tensor<S>& X2 = g2.val(x);
    const Tensor<S>& W2 = g2.val(w);
    const bool nx = g2.needs_grad(x), nw = g2.needs_grad(w), nb = g2.needs_grad(b);

    auto tap_mat2 = [&](int ky, int kx) {
      Mat m(Cin, Cout);
      for (Eigen::Index ci = 0; ci < Cin; ++ci)
        for (Eigen::Index co = 0; co < Cout; ++co)
          m(ci, co) = W2.data[((ci * Cout + co) * 2 + ky) * 2 + kx];
      return m;
    };

    for (Eigen::Index ni = 0; ni < d.n; ++ni) {
      for (int ky = 0; ky < 2; ++ky)
        for (int kx = 0; kx < 2; ++kx) {
          // Gather the strided gradient positions for this tap.
          Mat dsub(Cout, H * Wd);
          for (Eigen::Index co = 0; co < Cout; ++co) {
            const S* dp = d.plane_ptr(ni, co);
            S* row = dsub.data() + co * H * Wd;
            for (Eigen::Index y = 0; y < H; ++y)
              for (Eigen::Index xx = 0; xx < Wd; ++xx)
                row[y * Wd + xx] = dp[(2 * y + ky) * 2 * Wd + 2 * xx + kx];
          }
          if (nx) {
            Mat m = tap_mat2(ky, kx);
            g2.grad_acc(x).sample_mat(ni).noalias() += m * dsub;
          }
          if (nw) {
            Mat gw = X2.sample_mat(ni) * dsub.transpose();  // (C_in x C_out)
            Tensor<S>& G = g2.grad_acc(w);
            for (Eigen::Index ci = 0; ci < Cin; ++ci)
              for (Eigen::Index co = 0; co < Cout; ++co)
                G.data[((ci * Cout + co) * 2 + ky) * 2 + kx] += gw(ci, co);
          }
          if (nb) {
            Tensor<S>& gb = g2.grad_acc(b);
            for (Eigen::Index co = 0; co < Cout; ++co) gb.data[co] += dsub.row(co).sum();
          }
        }
    }
  });
}

}  // namespace lithoseg
