#pragma once

#include <memory>

#include "lithoseg/core/ops.hpp"

namespace lithoseg {

// Running statistics owned by the module that holds the batchnorm layer.
template <class S>
struct BnStats {
  Tensor<S> running_mean;  // (1,C,1,1)
  Tensor<S> running_var;   // (1,C,1,1)
  void init(Eigen::Index c) {
    running_mean = Tensor<S>::zeros(1, c, 1, 1);
    running_var = Tensor<S>::full(1, c, 1, 1, S(1));
  }
};

// Batch normalization over (N,H,W) per channel. Training uses biased batch
// variance and updates running stats in place with the given momentum;
// evaluation normalizes with the running statistics.
template <class S>
Var batchnorm(Graph<S>& g, Var x, Var gamma, Var beta, BnStats<S>* stats, bool training,
              S momentum = S(0.1), S eps = S(1e-5)) {
  const Tensor<S>& X = g.val(x);
  const Tensor<S>& G = g.val(gamma);
  const Tensor<S>& B = g.val(beta);
  check(G.c == X.c && B.c == X.c && G.n == 1 && B.n == 1 && G.h == 1 && G.w == 1 && B.h == 1 &&
            B.w == 1,
        "batchnorm: affine parameter shape mismatch");

  const Eigen::Index C = X.c, plane = X.h * X.w;
  const Eigen::Index m = X.n * plane;

  auto mean = std::make_shared<std::vector<S>>(size_t(C));
  auto invstd = std::make_shared<std::vector<S>>(size_t(C));

  if (training) {
    for (Eigen::Index ci = 0; ci < C; ++ci) {
      S mu = 0;
      for (Eigen::Index ni = 0; ni < X.n; ++ni) {
        const S* p = X.plane_ptr(ni, ci);
        for (Eigen::Index i = 0; i < plane; ++i) mu += p[i];
      }
      mu /= S(m);
      S var = 0;
      for (Eigen::Index ni = 0; ni < X.n; ++ni) {
        const S* p = X.plane_ptr(ni, ci);
        for (Eigen::Index i = 0; i < plane; ++i) {
          const S dlt = p[i] - mu;
          var += dlt * dlt;
        }
      }
      var /= S(m);
      (*mean)[size_t(ci)] = mu;
      (*invstd)[size_t(ci)] = S(1) / S(std::sqrt(double(var) + double(eps)));
      if (stats) {
        stats->running_mean.data[ci] = (S(1) - momentum) * stats->running_mean.data[ci] + momentum * mu;
        stats->running_var.data[ci] = (S(1) - momentum) * stats->running_var.data[ci] + momentum * var;
      }
    }
  } else {
    check(stats != nullptr, "batchnorm: eval mode requires running stats");
    for (Eigen::Index ci = 0; ci < C; ++ci) {
      (*mean)[size_t(ci)] = stats->running_mean.data[ci];
      (*invstd)[size_t(ci)] =
          S(1) / S(std::sqrt(double(stats->running_var.data[ci]) + double(eps)));
    }
  }

  Tensor<S> out(X.n, X.c, X.h, X.w);
  for (Eigen::Index ni = 0; ni < X.n; ++ni)
    for (Eigen::Index ci = 0; ci < C; ++ci) {
      const S* ip = X.plane_ptr(ni, ci);
      S* op = out.plane_ptr(ni, ci);
      const S mu = (*mean)[size_t(ci)], is = (*invstd)[size_t(ci)];
      const S gv = G.data[ci], bv = B.data[ci];
      for (Eigen::Index i = 0; i < plane; ++i) op[i] = gv * (ip[i] - mu) * is + bv;
    }

  Var self{int(g.node_count())};
  return g.record(std::move(out), {x, gamma, beta}, [=](Graph<S>& g2) {
    const Tensor<S>& d = g2.grad(self);
    const Tensor<S>& X2 = g2.val(x);
    const Tensor<S>& G2 = g2.val(gamma);
    const bool nx = g2.needs_grad(x), ng = g2.needs_grad(gamma), nb = g2.needs_grad(beta);
    const Eigen::Index pl = d.h * d.w;

    for (Eigen::Index ci = 0; ci < C; ++ci) {
      const S mu = (*mean)[size_t(ci)], is = (*invstd)[size_t(ci)], gv = G2.data[ci];
      S sum_d = 0, sum_dxh = 0;
      for (Eigen::Index ni = 0; ni < d.n; ++ni) {
        const S* dp = d.plane_ptr(ni, ci);
        const S* xp = X2.plane_ptr(ni, ci);
        for (Eigen::Index i = 0; i < pl; ++i) {
          sum_d += dp[i];
          sum_dxh += dp[i] * (xp[i] - mu) * is;
        }
      }
      if (ng) g2.grad_acc(gamma).data[ci] += sum_dxh;
      if (nb) g2.grad_acc(beta).data[ci] += sum_d;
      if (!nx) continue;

      if (training) {
        // dx = (gamma*invstd/m) * (m*dy - sum(dy) - xhat*sum(dy*xhat))
        const S k = gv * is / S(m);
        for (Eigen::Index ni = 0; ni < d.n; ++ni) {
          const S* dp = d.plane_ptr(ni, ci);
          const S* xp = X2.plane_ptr(ni, ci);
          S* gp = g2.grad_acc(x).plane_ptr(ni, ci);
          for (Eigen::Index i = 0; i < pl; ++i) {
            const S xh = (xp[i] - mu) * is;
            gp[i] += k * (S(m) * dp[i] - sum_d - xh * sum_dxh);
          }
        }
      } else {
        const S k = gv * is;
        for (Eigen::Index ni = 0; ni < d.n; ++ni) {
          const S* dp = d.plane_ptr(ni, ci);
          S* gp = g2.grad_acc(x).plane_ptr(ni, ci);
          for (Eigen::Index i = 0; i < pl; ++i) gp[i] += k * dp[i];
        }
      }
    }
  });
}

}  // namespace lithoseg
