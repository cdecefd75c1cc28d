#pragma once

#include <string>

#include "lithoseg/core/conv.hpp"
#include "lithoseg/core/ops.hpp"
#include "lithoseg/nn/param.hpp"

namespace lithoseg {

enum class Act { none, relu, elu, sigmoid };

// Convolution + optional batch norm + activation, the unit both network
// families are assembled from. Batch-normalized convolutions carry no bias
// (the normalization would cancel it).
template <class S>
struct ConvBnAct {
  Parameter<S>* w = nullptr;
  Parameter<S>* b = nullptr;      // null when batch norm follows
  Parameter<S>* gamma = nullptr;  // null -> no batch norm
  Parameter<S>* beta = nullptr;
  BnStats<S>* stats = nullptr;
  int dilation = 1;
  Act act = Act::relu;

  Var forward(Ctx<S>& ctx, Var x, bool apply_act = true) const {
    Var y = b ? conv2d(ctx.g, x, ctx.bind(w), ctx.bind(b), dilation)
              : conv2d(ctx.g, x, ctx.bind(w), dilation);
    if (gamma) y = batchnorm(ctx.g, y, ctx.bind(gamma), ctx.bind(beta), stats, ctx.training);
    if (!apply_act) return y;
    switch (act) {
      case Act::relu: return relu(ctx.g, y);
      case Act::elu: return elu(ctx.g, y);
      case Act::sigmoid: return sigmoid(ctx.g, y);
      case Act::none: return y;
    }
    return y;
  }
};

namespace detail {

template <class S>
ConvBnAct<S> make_cba(NetBuilder<S>& B, const std::string& name, int cin, int cout, int k,
                      int dilation, Act act, bool with_bn = true) {
  ConvBnAct<S> c;
  c.w = B.conv_weight(name + ".w", cout, cin, k);
  if (with_bn) {
    c.gamma = B.bn_gamma(name + ".bn.g", cout);
    c.beta = B.bn_beta(name + ".bn.b", cout);
    c.stats = B.bn_stats(name + ".bn", cout);
  } else {
    c.b = B.bias(name + ".b", cout);
  }
  c.dilation = dilation;
  c.act = act;
  return c;
}

}  // namespace detail

}  // namespace lithoseg
