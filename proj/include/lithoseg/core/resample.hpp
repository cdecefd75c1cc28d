#pragma once

#include <array>

#include "lithoseg/core/ops.hpp"

namespace lithoseg {

namespace detail {

// Per-output-pixel taps of a 1-D Catmull-Rom interpolation along one axis.
// Output sample o reads the continuous coordinate t = (o + 0.5)/f - 0.5 so
// pixel centers stay aligned. Taps that fall outside the field are replaced
// by linear extrapolation of the first/last two samples, folded into the
// weights of in-range taps; this keeps constants and linear ramps exact.
template <class S>
struct CrTaps {
  std::array<int, 4> idx;
  std::array<S, 4> w;
};

template <class S>
std::vector<CrTaps<S>> cr_tap_table(Eigen::Index len, int factor) {
  std::vector<CrTaps<S>> table(size_t(len) * factor);
  for (Eigen::Index o = 0; o < len * factor; ++o) {
    const double t = (double(o) + 0.5) / factor - 0.5;
    const double i0 = std::floor(t);
    const double u = t - i0;
    const double u2 = u * u, u3 = u2 * u;
    const double kw[4] = {-0.5 * u3 + u2 - 0.5 * u, 1.5 * u3 - 2.5 * u2 + 1,
                          -1.5 * u3 + 2 * u2 + 0.5 * u, 0.5 * u3 - 0.5 * u2};
    CrTaps<S>& taps = table[size_t(o)];
    taps.idx = {0, 0, 0, 0};
    taps.w = {S(0), S(0), S(0), S(0)};
    int slot = 0;
    auto put = [&](int j, double weight) {
      // Reuse an existing slot when folding lands on the same index.
      for (int s = 0; s < slot; ++s)
        if (taps.idx[size_t(s)] == j) {
          taps.w[size_t(s)] += S(weight);
          return;
        }
      taps.idx[size_t(slot)] = j;
      taps.w[size_t(slot)] = S(weight);
      ++slot;
    };
    for (int k = 0; k < 4; ++k) {
      const int j = int(i0) - 1 + k;
      const double weight = kw[k];
      if (len == 1) {
        put(0, weight);
      } else if (j < 0) {
        put(0, weight * (1.0 - j));
        put(1, weight * double(j));
      } else if (j > len - 1) {
        const double e = double(j - (len - 1));
        put(int(len - 1), weight * (1.0 + e));
        put(int(len - 2), weight * -e);
      } else {
        put(j, weight);
      }
    }
  }
  return table;
}

}  // namespace detail

// Catmull-Rom upsampling of a displacement field by an integer factor >= 2.
// Spacing and magnitude both scale: the interpolated values are multiplied by
// the factor so displacements measured in coarse-grid pixels become fine-grid
// pixels.
template <class S>
Var catmull_rom_upsample(Graph<S>& g, Var field, int factor) {
  check(factor >= 2, "catmull_rom_upsample: factor must be >= 2, got " + std::to_string(factor));
  const Tensor<S>& X = g.val(field);
  const Eigen::Index H = X.h, W = X.w, Ho = H * factor, Wo = W * factor;

  auto tx = std::make_shared<std::vector<detail::CrTaps<S>>>(detail::cr_tap_table<S>(W, factor));
  auto ty = std::make_shared<std::vector<detail::CrTaps<S>>>(detail::cr_tap_table<S>(H, factor));

  Tensor<S> out(X.n, X.c, Ho, Wo);
  std::vector<S> tmp(size_t(H * Wo));
  for (Eigen::Index ni = 0; ni < X.n; ++ni)
    for (Eigen::Index ci = 0; ci < X.c; ++ci) {
      const S* ip = X.plane_ptr(ni, ci);
      // Horizontal pass into tmp(H, Wo).
      for (Eigen::Index y = 0; y < H; ++y)
        for (Eigen::Index ox = 0; ox < Wo; ++ox) {
          const auto& t = (*tx)[size_t(ox)];
          S acc = 0;
          for (int k = 0; k < 4; ++k) acc += t.w[size_t(k)] * ip[y * W + t.idx[size_t(k)]];
          tmp[size_t(y * Wo + ox)] = acc;
        }
      // Vertical pass with the value scale folded in.
      S* op = out.plane_ptr(ni, ci);
      for (Eigen::Index oy = 0; oy < Ho; ++oy) {
        const auto& t = (*ty)[size_t(oy)];
        for (Eigen::Index ox = 0; ox < Wo; ++ox) {
          S acc = 0;
          for (int k = 0; k < 4; ++k)
            acc += t.w[size_t(k)] * tmp[size_t(t.idx[size_t(k)] * Wo + ox)];
          op[oy * Wo + ox] = S(factor) * acc;
        }
      }
    }

  Var self{int(g.node_count())};
  return g.record(std::move(out), {field}, [=](Graph<S>& g2) {
    if (!g2.needs_grad(field)) return;
    const Tensor<S>& d = g2.grad(self);
    Tensor<S>& gx = g2.grad_acc(field);
    std::vector<S> gtmp(size_t(H * Wo));
    for (Eigen::Index ni = 0; ni < d.n; ++ni)
      for (Eigen::Index ci = 0; ci < d.c; ++ci) {
        const S* dp = d.plane_ptr(ni, ci);
        std::fill(gtmp.begin(), gtmp.end(), S(0));
        for (Eigen::Index oy = 0; oy < Ho; ++oy) {
          const auto& t = (*ty)[size_t(oy)];
          for (Eigen::Index ox = 0; ox < Wo; ++ox) {
            const S dv = S(factor) * dp[oy * Wo + ox];
            for (int k = 0; k < 4; ++k)
              gtmp[size_t(t.idx[size_t(k)] * Wo + ox)] += t.w[size_t(k)] * dv;
          }
        }
        S* gp = gx.plane_ptr(ni, ci);
        for (Eigen::Index y = 0; y < H; ++y)
          for (Eigen::Index ox = 0; ox < Wo; ++ox) {
            const auto& t = (*tx)[size_t(ox)];
            const S dv = gtmp[size_t(y * Wo + ox)];
            for (int k = 0; k < 4; ++k) gp[y * W + t.idx[size_t(k)]] += t.w[size_t(k)] * dv;
          }
      }
  });
}

}  // namespace lithoseg
