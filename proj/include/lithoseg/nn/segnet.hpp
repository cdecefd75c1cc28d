#pragma once

#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "lithoseg/core/pool.hpp"
#include "lithoseg/nn/layers.hpp"

namespace lithoseg {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct SegNetConfig {
  enum class Variant { unet, hybresunet, deepresunet, r2unet };

  Variant variant = Variant::hybresunet;
  int in_channels = 3;
  int num_classes = 3;  // fixed by the task
  int base_width = 64;
  bool use_attention = false;
  bool use_aspp = false;
  std::vector<int> encoder_dilation_schedule;  // 9 entries; default set when ASPP is on
  std::vector<int> aspp_rates;                 // default {1,2,4,8,16,32}
  int r2_recurrence = 2;
  bool r2_residual = true;  // residual add around the recurrent block

  static Variant parse_variant(const std::string& s) {
    if (s == "unet") return Variant::unet;
    if (s == "hybresunet") return Variant::hybresunet;
    if (s == "deepresunet") return Variant::deepresunet;
    if (s == "r2unet") return Variant::r2unet;
    throw std::invalid_argument("unknown network variant: " + s);
  }
  static std::string variant_name(Variant v) {
    switch (v) {
      case Variant::unet: return "unet";
      case Variant::hybresunet: return "hybresunet";
      case Variant::deepresunet: return "deepresunet";
      case Variant::r2unet: return "r2unet";
    }
    return "?";
  }

  // Effective 9-entry dilation schedule: encoder levels 0-3, bottleneck,
  // decoder levels 0-3.
  std::vector<int> dilation_schedule() const {
    if (!encoder_dilation_schedule.empty()) return encoder_dilation_schedule;
    if (use_aspp) return {1, 2, 3, 4, 3, 2, 1, 2, 1};
    return std::vector<int>(9, 1);
  }
  std::vector<int> effective_aspp_rates() const {
    return aspp_rates.empty() ? std::vector<int>{1, 2, 4, 8, 16, 32} : aspp_rates;
  }

  void validate() const {
    check(num_classes == 3, "segnet: num_classes is fixed to 3");
    check(base_width >= 8, "segnet: base_width must be >= 8");
    check(in_channels >= 1 && in_channels <= 3, "segnet: in_channels must be 1..3");
    check(r2_recurrence >= 1, "segnet: r2_recurrence must be >= 1");
    if (!encoder_dilation_schedule.empty())
      check(encoder_dilation_schedule.size() == 9, "segnet: dilation schedule needs 9 entries");
    for (int d : dilation_schedule()) check(d >= 1, "segnet: dilation rates must be >= 1");
    if (use_aspp) check(!effective_aspp_rates().empty(), "segnet: aspp rates must be non-empty");
  }
};

// One structural record per layer, exported for introspection tests.
struct LayerDesc {
  std::string stage;
  std::string type;  // conv_block | pool | upsample | attention | aspp | head
  int in_ch = 0, out_ch = 0, kernel = 0, dilation = 1;
  bool residual = false;
  int recurrence = 1;

  nlohmann::json to_json() const {
    return {{"stage", stage},         {"type", type},
            {"in_ch", in_ch},         {"out_ch", out_ch},
            {"kernel", kernel},       {"dilation", dilation},
            {"residual", residual},   {"recurrence", recurrence}};
  }
};

// ---------------------------------------------------------------------------
// Layer pieces
// ---------------------------------------------------------------------------

// Double-convolution stage covering all variants:
//  - plain: conv-bn-relu twice
//  - residual: second conv's output joins a (projected) shortcut before relu
//  - recurrent (r2): the second conv re-reads its own output r times with
//    shared weights; optional residual add around the whole block
template <class S>
struct ConvBlock {
  ConvBnAct<S> c1, c2;
  bool residual = false;
  bool r2_style = false;
  int recurrence = 1;
  // 1x1 projection + batch norm on the shortcut when channels differ.
  std::optional<ConvBnAct<S>> proj;

  Var shortcut(Ctx<S>& ctx, Var x) const {
    return proj ? proj->forward(ctx, x) : x;
  }

  Var forward(Ctx<S>& ctx, Var x) const {
    Var a = c1.forward(ctx, x);
    if (r2_style) {
      Var h = c2.forward(ctx, a);
      for (int t = 1; t < recurrence; ++t) h = c2.forward(ctx, add(ctx.g, a, h));
      if (residual) h = add(ctx.g, h, shortcut(ctx, x));
      return h;
    }
    if (residual) {
      Var z = c2.forward(ctx, a, /*apply_act=*/false);
      return relu(ctx.g, add(ctx.g, z, shortcut(ctx, x)));
    }
    return c2.forward(ctx, a);
  }
};

// Additive attention gate: coefficients from a 1x1-conv bottleneck over
// gating + skip (each branch batch-normalized), applied multiplicatively to
// the skip.
template <class S>
struct AttentionGate {
  ConvBnAct<S> wg, wx;  // 1x1 conv + bn, no activation
  Parameter<S>*psi_w = nullptr, *psi_b = nullptr;

  Var coefficients(Ctx<S>& ctx, Var skip, Var gate) const {
    const auto& sk = ctx.g.val(skip);
    const auto& gt = ctx.g.val(gate);
    check(sk.h == gt.h && sk.w == gt.w && sk.n == gt.n,
          "attention_gate: skip/gating shapes incompatible");
    Var q = relu(ctx.g, add(ctx.g, wg.forward(ctx, gate), wx.forward(ctx, skip)));
    return sigmoid(ctx.g, conv2d(ctx.g, q, ctx.bind(psi_w), ctx.bind(psi_b), 1));
  }
  Var forward(Ctx<S>& ctx, Var skip, Var gate) const {
    return mul(ctx.g, skip, coefficients(ctx, skip, gate));
  }
};

// Parallel dilated convolutions fused by a linear 1x1 convolution.
template <class S>
struct Aspp {
  std::vector<ConvBnAct<S>> branches;
  Parameter<S>*fuse_w = nullptr, *fuse_b = nullptr;

  Var forward(Ctx<S>& ctx, Var x) const {
    check(!branches.empty(), "aspp: empty rates list");
    Var cat = branches[0].forward(ctx, x);
    for (size_t i = 1; i < branches.size(); ++i)
      cat = concat_c(ctx.g, cat, branches[i].forward(ctx, x));
    return conv2d(ctx.g, cat, ctx.bind(fuse_w), ctx.bind(fuse_b), 1);
  }
};

template <class S>
struct DecoderStage {
  Parameter<S>*up_w = nullptr, *up_b = nullptr;  // transposed conv 2x
  std::optional<AttentionGate<S>> att;
  ConvBlock<S> block;
};

// ---------------------------------------------------------------------------
// The network
// ---------------------------------------------------------------------------

template <class S>
struct SegNet {
  SegNetConfig cfg;
  ParamSet<S> params;
  std::deque<NamedBnStats<S>> bn;
  std::vector<ConvBlock<S>> enc;       // 4 stages
  ConvBlock<S> bottleneck;
  std::optional<Aspp<S>> aspp;
  std::vector<DecoderStage<S>> dec;    // 4 stages
  Parameter<S>*head_w = nullptr, *head_b = nullptr;
  std::vector<LayerDesc> layers;

  Eigen::Index parameter_count() const { return params.scalar_count(); }

  // Forward to per-pixel class probabilities (softmax over 3 channels).
  Var forward(Ctx<S>& ctx, Var input) const {
    const Tensor<S>& X = ctx.g.val(input);
    check(X.c == cfg.in_channels,
          "segnet forward: expected " + std::to_string(cfg.in_channels) + " channels, got " +
              std::to_string(X.c));
    check(X.h % 16 == 0 && X.w % 16 == 0, "segnet forward: spatial size must be divisible by 16");
    std::vector<Var> skips;
    Var x = input;
    for (const auto& stage : enc) {
      Var f = stage.forward(ctx, x);
      skips.push_back(f);
      x = maxpool2(ctx.g, f);
    }
    x = bottleneck.forward(ctx, x);
    if (aspp) x = aspp->forward(ctx, x);
    for (size_t j = 0; j < dec.size(); ++j) {
      const auto& stage = dec[j];
      x = conv_transpose2x(ctx.g, x, ctx.bind(stage.up_w), ctx.bind(stage.up_b));
      Var skip = skips[dec.size() - 1 - j];
      if (stage.att) skip = stage.att->forward(ctx, skip, x);
      x = stage.block.forward(ctx, concat_c(ctx.g, x, skip));
    }
    Var logits = conv2d(ctx.g, x, ctx.bind(head_w), ctx.bind(head_b), 1);
    return softmax_c(ctx.g, logits);
  }

  // Convenience: evaluation-mode probabilities for a raw input tensor.
  Tensor<S> infer(const Tensor<S>& input) {
    Graph<S> g;
    NoGradGuard<S> guard(g);
    Ctx<S> ctx(g, /*training=*/false);
    Var probs = forward(ctx, g.leaf(input));
    return g.val(probs);
  }

  nlohmann::json describe() const {
    nlohmann::json j;
    j["variant"] = SegNetConfig::variant_name(cfg.variant);
    j["in_channels"] = cfg.in_channels;
    j["num_classes"] = cfg.num_classes;
    j["base_width"] = cfg.base_width;
    j["use_attention"] = cfg.use_attention;
    j["use_aspp"] = cfg.use_aspp;
    j["dilation_schedule"] = cfg.dilation_schedule();
    if (cfg.use_aspp) j["aspp_rates"] = cfg.effective_aspp_rates();
    j["param_count"] = parameter_count();
    j["layers"] = nlohmann::json::array();
    for (const auto& l : layers) j["layers"].push_back(l.to_json());
    return j;
  }
};

// ---------------------------------------------------------------------------
// Builder
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
ConvBlock<S> make_block(NetBuilder<S>& B, const std::string& name, int cin, int cout,
                        int dilation, bool residual, bool r2_style, int recurrence) {
  ConvBlock<S> blk;
  blk.c1 = make_cba(B, name + ".c1", cin, cout, 3, dilation, Act::relu);
  blk.c2 = make_cba(B, name + ".c2", cout, cout, 3, dilation, Act::relu);
  blk.residual = residual;
  blk.r2_style = r2_style;
  blk.recurrence = recurrence;
  if (residual && cin != cout)
    blk.proj = make_cba(B, name + ".proj", cin, cout, 1, 1, Act::none);
  return blk;
}

}  // namespace detail

template <class S>
SegNet<S> build_segnet(const SegNetConfig& cfg, uint64_t seed = 1) {
  cfg.validate();
  SegNet<S> net;
  net.cfg = cfg;
  Rng rng(hash_combine(seed, 0x5e97e7ULL));
  NetBuilder<S> B{net.params, net.bn, rng};
  const auto sched = cfg.dilation_schedule();
  using V = SegNetConfig::Variant;
  const bool enc_res = cfg.variant == V::hybresunet || cfg.variant == V::deepresunet ||
                       (cfg.variant == V::r2unet && cfg.r2_residual);
  const bool dec_res =
      cfg.variant == V::deepresunet || (cfg.variant == V::r2unet && cfg.r2_residual);
  const bool r2 = cfg.variant == V::r2unet;
  const int rec = r2 ? cfg.r2_recurrence : 1;

  auto push_layer = [&](const std::string& stage, const std::string& type, int cin, int cout,
                        int k, int dil, bool res, int recv) {
    LayerDesc d;
    d.stage = stage;
    d.type = type;
    d.in_ch = cin;
    d.out_ch = cout;
    d.kernel = k;
    d.dilation = dil;
    d.residual = res;
    d.recurrence = recv;
    net.layers.push_back(d);
  };

  // Encoder: widths base, 2base, 4base, 8base.
  int cin = cfg.in_channels;
  std::vector<int> widths;
  for (int i = 0; i < 4; ++i) {
    int cout = cfg.base_width << i;
    std::string name = "enc" + std::to_string(i);
    net.enc.push_back(detail::make_block(B, name, cin, cout, sched[size_t(i)], enc_res, r2, rec));
    push_layer(name, "conv_block", cin, cout, 3, sched[size_t(i)], enc_res, rec);
    push_layer(name, "pool", cout, cout, 2, 1, false, 1);
    widths.push_back(cout);
    cin = cout;
  }

  // Bottleneck at 16x downsampling.
  {
    int cout = cfg.base_width << 4;
    net.bottleneck =
        detail::make_block(B, "bottleneck", cin, cout, sched[4], dec_res, r2, rec);
    push_layer("bottleneck", "conv_block", cin, cout, 3, sched[4], dec_res, rec);
    cin = cout;
    if (cfg.use_aspp) {
      Aspp<S> a;
      const auto rates = cfg.effective_aspp_rates();
      for (size_t ri = 0; ri < rates.size(); ++ri)
        a.branches.push_back(detail::make_cba(B, "aspp.b" + std::to_string(ri), cin, cin, 3,
                                              rates[ri], Act::relu));
      a.fuse_w = B.conv_weight("aspp.fuse.w", cin, cin * int(rates.size()), 1);
      a.fuse_b = B.bias("aspp.fuse.b", cin);
      net.aspp = std::move(a);
      push_layer("bottleneck", "aspp", cin, cin, 3, 0, false, 1);
    }
  }

  // Decoder: mirror widths 8base ... base.
  for (int j = 0; j < 4; ++j) {
    int cout = widths[size_t(3 - j)];
    std::string name = "dec" + std::to_string(j);
    DecoderStage<S> stage;
    {  // Transposed conv weight layout: (Cin, Cout, 2, 2).
      Tensor<S> w(cin, cout, 2, 2);
      double std_dev = std::sqrt(2.0 / double(cin * 4));
      for (Eigen::Index ii = 0; ii < w.size(); ++ii) w.data[ii] = S(rng.normal(0.0, std_dev));
      stage.up_w = B.params.add(name + ".up.w", std::move(w));
    }
    stage.up_b = B.bias(name + ".up.b", cout);
    push_layer(name, "upsample", cin, cout, 2, 1, false, 1);
    if (cfg.use_attention) {
      AttentionGate<S> att;
      int inter = std::max(1, cout / 2);
      att.wg = detail::make_cba(B, name + ".att.wg", cout, inter, 1, 1, Act::none);
      att.wx = detail::make_cba(B, name + ".att.wx", cout, inter, 1, 1, Act::none);
      att.psi_w = B.conv_weight(name + ".att.psi.w", 1, inter, 1);
      att.psi_b = B.bias(name + ".att.psi.b", 1);
      stage.att = att;
      push_layer(name, "attention", cout, cout, 1, 1, false, 1);
    }
    stage.block = detail::make_block(B, name, 2 * cout, cout, sched[size_t(5 + j)], dec_res, r2,
                                     rec);
    push_layer(name, "conv_block", 2 * cout, cout, 3, sched[size_t(5 + j)], dec_res, rec);
    net.dec.push_back(std::move(stage));
    cin = cout;
  }

  net.head_w = B.conv_weight("head.w", cfg.num_classes, cin, 1);
  net.head_b = B.bias("head.b", cfg.num_classes);
  push_layer("head", "head", cin, cfg.num_classes, 1, 1, false, 1);
  return net;
}

}  // namespace lithoseg
