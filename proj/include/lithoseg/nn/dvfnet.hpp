#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "lithoseg/core/deform_conv.hpp"
#include "lithoseg/core/pool.hpp"
#include "lithoseg/core/resample.hpp"
#include "lithoseg/core/warp.hpp"
#include "lithoseg/nn/layers.hpp"

namespace lithoseg {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct DVFNetConfig {
  // Output widths of the encoder convolutions c1, c2, c3 and the first
  // deformable convolution; the second deformable conv always emits the
  // 2-channel coarse field.
  std::vector<int> widths = {16, 32, 32, 32};
  int refine_width = 16;  // channels of the decoder refinement conv
  int kernel = 3;
  // The faithful reading of the decoder recipe puts an ELU after every
  // refinement conv. An ELU on the final 2-channel output saturates negative
  // displacements at -1 px, so the default keeps the last conv linear.
  bool final_elu = false;

  void validate() const {
    check(widths.size() == 4, "dvfnet: need 4 encoder widths");
    for (int w : widths) check(w >= 4, "dvfnet: widths must be >= 4");
    check(refine_width >= 4, "dvfnet: refine_width must be >= 4");
    check(kernel >= 3 && kernel % 2 == 1, "dvfnet: kernel must be odd and >= 3");
  }
};

// ---------------------------------------------------------------------------
// Deformable convolution layer with its sibling offset predictor. The offset
// predictor is zero-initialized, so a fresh layer behaves exactly like an
// ordinary convolution.
// ---------------------------------------------------------------------------

template <class S>
struct DeformLayer {
  Parameter<S>*w = nullptr, *b = nullptr;  // b null when batch norm follows
  Parameter<S>*off_w = nullptr, *off_b = nullptr;
  Parameter<S>*gamma = nullptr, *beta = nullptr;
  BnStats<S>* stats = nullptr;
  Act act = Act::elu;

  Var forward(Ctx<S>& ctx, Var x) const {
    Var off = conv2d(ctx.g, x, ctx.bind(off_w), ctx.bind(off_b), 1);
    Var wv = ctx.bind(w);
    Var bv = b ? ctx.bind(b)
               : ctx.g.leaf(Tensor<S>::zeros(1, ctx.g.val(wv).n, 1, 1));
    Var y = deform_conv2d(ctx.g, x, wv, bv, off);
    if (gamma) y = batchnorm(ctx.g, y, ctx.bind(gamma), ctx.bind(beta), stats, ctx.training);
    switch (act) {
      case Act::relu: return relu(ctx.g, y);
      case Act::elu: return elu(ctx.g, y);
      case Act::sigmoid: return sigmoid(ctx.g, y);
      case Act::none: return y;
    }
    return y;
  }
};

// ---------------------------------------------------------------------------
// The 12-layer registration network: encoder [conv, conv, pool, conv, pool,
// deform-conv, deform-conv] emits a coarse 2-channel field at 1/4 resolution;
// decoder [resample x2, conv, resample x2, conv, resample x1] refines it back
// to full resolution (stage factors 2, 2, 1).
// ---------------------------------------------------------------------------

template <class S>
struct DVFNet {
  DVFNetConfig cfg;
  ParamSet<S> params;
  std::deque<NamedBnStats<S>> bn;
  ConvBnAct<S> c1, c2, c3;
  DeformLayer<S> d4, d5;
  ConvBnAct<S> s1, s2;
  // Counts every field prediction; lets callers assert that inference paths
  // never touch the registration branch.
  mutable int64_t forward_count = 0;

  Eigen::Index parameter_count() const { return params.scalar_count(); }

  // Input: (N, 2, H, W) = target and source gray frames stacked; H, W
  // divisible by 4. Output: (N, 2, H, W) displacement field (dx, dy).
  Var forward(Ctx<S>& ctx, Var pair) const {
    const Tensor<S>& X = ctx.g.val(pair);
    check(X.c == 2, "dvfnet forward: expected a 2-channel frame pair");
    check(X.h % 4 == 0 && X.w % 4 == 0, "dvfnet forward: spatial size must be divisible by 4");
    ++forward_count;
    Var x = c1.forward(ctx, pair);
    x = c2.forward(ctx, x);
    x = avgpool2(ctx.g, x);
    x = c3.forward(ctx, x);
    x = avgpool2(ctx.g, x);
    x = d4.forward(ctx, x);
    Var coarse = d5.forward(ctx, x);  // (N, 2, H/4, W/4)
    Var f = catmull_rom_upsample(ctx.g, coarse, 2);
    f = s1.forward(ctx, f);
    f = catmull_rom_upsample(ctx.g, f, 2);
    f = s2.forward(ctx, f);
    return f;  // third decoder stage has factor 1: identity resample
  }

  // Registers source onto target's grid: the returned field samples source,
  // so warp(source, dvf) reconstructs target.
  struct Prediction {
    Var dvf;
    Var warped;
  };
  Prediction predict(Ctx<S>& ctx, Var source, Var target) const {
    const Tensor<S>& A = ctx.g.val(source);
    const Tensor<S>& B = ctx.g.val(target);
    check(A.same_shape(B), "dvfnet predict: source/target shapes differ");
    check(A.c == 1, "dvfnet predict: expected single-channel images");
    Var dvf = forward(ctx, concat_c(ctx.g, target, source));
    Var warped = warp_bilinear(ctx.g, source, dvf);
    return {dvf, warped};
  }

  nlohmann::json describe() const {
    nlohmann::json j;
    j["widths"] = cfg.widths;
    j["refine_width"] = cfg.refine_width;
    j["kernel"] = cfg.kernel;
    j["decoder_factors"] = {2, 2, 1};
    j["param_count"] = parameter_count();
    j["layers"] = nlohmann::json::array();
    auto layer = [&](const std::string& name, const std::string& type, int cin, int cout) {
      j["layers"].push_back({{"name", name}, {"type", type}, {"in_ch", cin}, {"out_ch", cout}});
    };
    layer("c1", "conv", 2, cfg.widths[0]);
    layer("c2", "conv", cfg.widths[0], cfg.widths[1]);
    layer("pool1", "avgpool", cfg.widths[1], cfg.widths[1]);
    layer("c3", "conv", cfg.widths[1], cfg.widths[2]);
    layer("pool2", "avgpool", cfg.widths[2], cfg.widths[2]);
    layer("d4", "deform_conv", cfg.widths[2], cfg.widths[3]);
    layer("d5", "deform_conv", cfg.widths[3], 2);
    layer("r1", "resample_x2", 2, 2);
    layer("s1", "conv", 2, cfg.refine_width);
    layer("r2", "resample_x2", cfg.refine_width, cfg.refine_width);
    layer("s2", "conv", cfg.refine_width, 2);
    layer("r3", "resample_x1", 2, 2);
    return j;
  }
};

template <class S>
DVFNet<S> build_dvfnet(const DVFNetConfig& cfg, uint64_t seed = 2) {
  cfg.validate();
  DVFNet<S> net;
  net.cfg = cfg;
  Rng rng(hash_combine(seed, 0xd7f2e7ULL));
  NetBuilder<S> B{net.params, net.bn, rng};
  const int k = cfg.kernel;

  net.c1 = detail::make_cba(B, "c1", 2, cfg.widths[0], k, 1, Act::elu);
  net.c2 = detail::make_cba(B, "c2", cfg.widths[0], cfg.widths[1], k, 1, Act::elu);
  net.c3 = detail::make_cba(B, "c3", cfg.widths[1], cfg.widths[2], k, 1, Act::elu);

  auto make_deform = [&](const std::string& name, int cin, int cout, bool with_bn, Act act) {
    DeformLayer<S> d;
    d.w = B.conv_weight(name + ".w", cout, cin, k);
    d.off_w = B.zero_conv_weight(name + ".off.w", 2 * k * k, cin, k);
    d.off_b = B.bias(name + ".off.b", 2 * k * k);
    if (with_bn) {
      d.gamma = B.bn_gamma(name + ".bn.g", cout);
      d.beta = B.bn_beta(name + ".bn.b", cout);
      d.stats = B.bn_stats(name + ".bn", cout);
    } else {
      d.b = B.bias(name + ".b", cout);
    }
    d.act = act;
    return d;
  };
  net.d4 = make_deform("d4", cfg.widths[2], cfg.widths[3], true, Act::elu);
  // d5 emits the coarse displacement field: linear, no normalization.
  net.d5 = make_deform("d5", cfg.widths[3], 2, false, Act::none);

  net.s1 = detail::make_cba(B, "s1", 2, cfg.refine_width, k, 1, Act::elu, /*with_bn=*/false);
  net.s2 = detail::make_cba(B, "s2", cfg.refine_width, 2, k, 1,
                            cfg.final_elu ? Act::elu : Act::none, /*with_bn=*/false);
  // Zero-initialized final layer: a fresh network is the identity registration.
  net.s2.w->value.data.setZero();
  return net;
}

}  // namespace lithoseg
