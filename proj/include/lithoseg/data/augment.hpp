#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "lithoseg/core/rng.hpp"
#include "lithoseg/data/dataset.hpp"

namespace lithoseg {

// Clip-level augmentation. One realization is sampled per clip and applied
// identically to all five frames; spatial transforms also move the mask
// (nearest-neighbor), photometric transforms never touch it.
struct AugmentationPolicy {
  bool hflip = false;
  double hflip_p = 0.5;
  bool vflip = false;
  double vflip_p = 0.5;
  bool ssr = false;  // shift-scale-rotate
  double ssr_p = 0.5;
  double ssr_shift = 0.0625;   // fraction of the image side
  double ssr_scale = 0.1;      // relative scale range
  double ssr_rotate_deg = 45;  // rotation range in degrees
  bool sharpen = false;
  double sharpen_p = 0.5;
  double sharpen_lo = 0.2, sharpen_hi = 0.5;
  bool blur = false;
  double blur_p = 0.5;
  int blur_kmin = 3, blur_kmax = 7;  // odd kernel sizes
  bool rbc = false;  // random brightness-contrast
  double rbc_p = 0.5;
  double rbc_limit = 0.2;
  bool equalize = false;
  double equalize_p = 0.5;
  bool clahe = false;
  double clahe_p = 0.5;
  double clahe_clip = 4.0;
  int clahe_tiles = 8;

  static AugmentationPolicy none() { return AugmentationPolicy{}; }
  static AugmentationPolicy rbc_equalize() {
    AugmentationPolicy p;
    p.rbc = true;
    p.equalize = true;
    return p;
  }
  static AugmentationPolicy rbc_clahe() {
    AugmentationPolicy p;
    p.rbc = true;
    p.clahe = true;
    return p;
  }
  static AugmentationPolicy full() {
    AugmentationPolicy p;
    p.hflip = p.vflip = p.ssr = p.sharpen = p.blur = p.rbc = p.equalize = p.clahe = true;
    return p;
  }

  void validate() const {
    for (double pr : {hflip_p, vflip_p, ssr_p, sharpen_p, blur_p, rbc_p, equalize_p, clahe_p})
      check(pr >= 0.0 && pr <= 1.0, "augmentation probability outside [0,1]");
    check(blur_kmin >= 3 && blur_kmax >= blur_kmin && blur_kmin % 2 == 1 && blur_kmax % 2 == 1,
          "blur kernel range must be odd and ordered");
    check(clahe_tiles >= 1, "clahe tile count must be positive");
  }
};

namespace detail {

// One sampled realization, shared across the clip.
struct AugmentSample {
  bool do_hflip = false, do_vflip = false, do_ssr = false;
  double angle = 0, scale = 1, tx = 0, ty = 0;
  bool do_sharpen = false;
  double sharpen_alpha = 0;
  bool do_blur = false;
  int blur_k = 3;
  bool do_rbc = false;
  double rbc_alpha = 0, rbc_beta = 0;
  bool do_equalize = false, do_clahe = false;
};

inline AugmentSample sample_augment(const AugmentationPolicy& p, Rng& rng, int h, int w) {
  AugmentSample s;
  if (p.hflip) s.do_hflip = rng.coin(p.hflip_p);
  if (p.vflip) s.do_vflip = rng.coin(p.vflip_p);
  if (p.ssr && rng.coin(p.ssr_p)) {
    s.do_ssr = true;
    s.angle = rng.uniform(-p.ssr_rotate_deg, p.ssr_rotate_deg) * std::numbers::pi / 180.0;
    s.scale = 1.0 + rng.uniform(-p.ssr_scale, p.ssr_scale);
    s.tx = rng.uniform(-p.ssr_shift, p.ssr_shift) * w;
    s.ty = rng.uniform(-p.ssr_shift, p.ssr_shift) * h;
  }
  if (p.sharpen && rng.coin(p.sharpen_p)) {
    s.do_sharpen = true;
    s.sharpen_alpha = rng.uniform(p.sharpen_lo, p.sharpen_hi);
  }
  if (p.blur && rng.coin(p.blur_p)) {
    s.do_blur = true;
    int steps = (p.blur_kmax - p.blur_kmin) / 2 + 1;
    s.blur_k = p.blur_kmin + 2 * int(rng.uniform_int(uint64_t(steps)));
  }
  if (p.rbc && rng.coin(p.rbc_p)) {
    s.do_rbc = true;
    s.rbc_alpha = rng.uniform(-p.rbc_limit, p.rbc_limit);
    s.rbc_beta = rng.uniform(-p.rbc_limit, p.rbc_limit);
  }
  if (p.equalize) s.do_equalize = rng.coin(p.equalize_p);
  if (p.clahe) s.do_clahe = rng.coin(p.clahe_p);
  return s;
}

inline ImageF flip_image(const ImageF& in, bool horiz, bool vert) {
  ImageF out(in.n, in.c, in.h, in.w);
  for (Eigen::Index c = 0; c < in.c; ++c)
    for (Eigen::Index y = 0; y < in.h; ++y)
      for (Eigen::Index x = 0; x < in.w; ++x)
        out.at(0, c, y, x) = in.at(0, c, vert ? in.h - 1 - y : y, horiz ? in.w - 1 - x : x);
  return out;
}

inline MaskI flip_mask(const MaskI& in, bool horiz, bool vert) {
  MaskI out(in.n, in.c, in.h, in.w);
  for (Eigen::Index y = 0; y < in.h; ++y)
    for (Eigen::Index x = 0; x < in.w; ++x)
      out.at(0, 0, y, x) = in.at(0, 0, vert ? in.h - 1 - y : y, horiz ? in.w - 1 - x : x);
  return out;
}

// Inverse mapping of the forward transform p' = R(angle)·scale·(p−c) + c + t.
inline void ssr_source(double xo, double yo, double cx, double cy, const AugmentSample& s,
                       double& xs, double& ys) {
  double dx = (xo - cx - s.tx) / s.scale;
  double dy = (yo - cy - s.ty) / s.scale;
  double ca = std::cos(-s.angle), sa = std::sin(-s.angle);
  xs = ca * dx - sa * dy + cx;
  ys = sa * dx + ca * dy + cy;
}

inline ImageF ssr_image(const ImageF& in, const AugmentSample& s) {
  ImageF out(in.n, in.c, in.h, in.w);
  double cx = (in.w - 1) / 2.0, cy = (in.h - 1) / 2.0;
  for (Eigen::Index y = 0; y < in.h; ++y) {
    for (Eigen::Index x = 0; x < in.w; ++x) {
      double xs, ys;
      ssr_source(double(x), double(y), cx, cy, s, xs, ys);
      Eigen::Index x0 = Eigen::Index(std::floor(xs)), y0 = Eigen::Index(std::floor(ys));
      double fx = xs - double(x0), fy = ys - double(y0);
      for (Eigen::Index c = 0; c < in.c; ++c) {
        auto tap = [&](Eigen::Index yy, Eigen::Index xx) -> double {
          if (yy < 0 || yy >= in.h || xx < 0 || xx >= in.w) return 0.0;  // constant border
          return in.at(0, c, yy, xx);
        };
        double v = (1 - fy) * ((1 - fx) * tap(y0, x0) + fx * tap(y0, x0 + 1)) +
                   fy * ((1 - fx) * tap(y0 + 1, x0) + fx * tap(y0 + 1, x0 + 1));
        out.at(0, c, y, x) = float(v);
      }
    }
  }
  return out;
}

inline MaskI ssr_mask(const MaskI& in, const AugmentSample& s) {
  MaskI out(in.n, in.c, in.h, in.w);
  double cx = (in.w - 1) / 2.0, cy = (in.h - 1) / 2.0;
  for (Eigen::Index y = 0; y < in.h; ++y) {
    for (Eigen::Index x = 0; x < in.w; ++x) {
      double xs, ys;
      ssr_source(double(x), double(y), cx, cy, s, xs, ys);
      Eigen::Index xi = Eigen::Index(std::lround(xs)), yi = Eigen::Index(std::lround(ys));
      out.at(0, 0, y, x) =
          (xi < 0 || xi >= in.w || yi < 0 || yi >= in.h) ? 0 : in.at(0, 0, yi, xi);
    }
  }
  return out;
}

// Separable convolution with a normalized 1-D kernel, replicate border.
inline ImageF separable_filter(const ImageF& in, const std::vector<double>& k) {
  const Eigen::Index r = Eigen::Index(k.size()) / 2;
  ImageF mid(in.n, in.c, in.h, in.w), out(in.n, in.c, in.h, in.w);
  for (Eigen::Index c = 0; c < in.c; ++c) {
    for (Eigen::Index y = 0; y < in.h; ++y)
      for (Eigen::Index x = 0; x < in.w; ++x) {
        double acc = 0;
        for (Eigen::Index i = -r; i <= r; ++i) {
          Eigen::Index xx = std::min(std::max(x + i, Eigen::Index(0)), in.w - 1);
          acc += k[size_t(i + r)] * in.at(0, c, y, xx);
        }
        mid.at(0, c, y, x) = float(acc);
      }
    for (Eigen::Index y = 0; y < in.h; ++y)
      for (Eigen::Index x = 0; x < in.w; ++x) {
        double acc = 0;
        for (Eigen::Index i = -r; i <= r; ++i) {
          Eigen::Index yy = std::min(std::max(y + i, Eigen::Index(0)), in.h - 1);
          acc += k[size_t(i + r)] * mid.at(0, c, yy, x);
        }
        out.at(0, c, y, x) = float(acc);
      }
  }
  return out;
}

inline std::vector<double> gaussian_kernel(int ksize, double sigma) {
  std::vector<double> k(static_cast<size_t>(ksize));
  int r = ksize / 2;
  double sum = 0;
  for (int i = -r; i <= r; ++i) {
    double v = std::exp(-0.5 * double(i) * double(i) / (sigma * sigma));
    k[size_t(i + r)] = v;
    sum += v;
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Unsharp masking with a 3x3 binomial blur.
inline ImageF sharpen_image(const ImageF& in, double alpha) {
  ImageF blur = separable_filter(in, {0.25, 0.5, 0.25});
  ImageF out(in.n, in.c, in.h, in.w);
  for (Eigen::Index i = 0; i < in.size(); ++i) {
    double v = in.data[i] + alpha * (double(in.data[i]) - double(blur.data[i]));
    out.data[i] = float(std::min(std::max(v, 0.0), 1.0));
  }
  return out;
}

inline ImageF blur_image(const ImageF& in, int ksize) {
  double sigma = 0.3 * ((ksize - 1) * 0.5 - 1.0) + 0.8;
  return separable_filter(in, gaussian_kernel(ksize, sigma));
}

inline ImageF rbc_image(const ImageF& in, double alpha, double beta) {
  ImageF out(in.n, in.c, in.h, in.w);
  for (Eigen::Index i = 0; i < in.size(); ++i) {
    double v = (double(in.data[i]) - 0.5) * (1.0 + alpha) + 0.5 + beta;
    out.data[i] = float(std::min(std::max(v, 0.0), 1.0));
  }
  return out;
}

inline int quantize255(float v) {
  return int(std::lround(std::min(std::max(double(v), 0.0), 1.0) * 255.0));
}

// Global histogram equalization per channel on 8-bit quantized values.
inline ImageF equalize_image(const ImageF& in) {
  ImageF out(in.n, in.c, in.h, in.w);
  const Eigen::Index plane = in.plane();
  for (Eigen::Index c = 0; c < in.c; ++c) {
    const float* src = in.plane_ptr(0, c);
    float* dst = out.plane_ptr(0, c);
    std::array<Eigen::Index, 256> hist{};
    for (Eigen::Index i = 0; i < plane; ++i) hist[size_t(quantize255(src[i]))]++;
    std::array<Eigen::Index, 256> cdf{};
    Eigen::Index run = 0;
    Eigen::Index cdf_min = 0;
    bool found = false;
    for (int v = 0; v < 256; ++v) {
      run += hist[size_t(v)];
      cdf[size_t(v)] = run;
      if (!found && hist[size_t(v)] > 0) {
        cdf_min = run;
        found = true;
      }
    }
    if (run == cdf_min) {  // constant channel: leave unchanged
      for (Eigen::Index i = 0; i < plane; ++i) dst[i] = src[i];
      continue;
    }
    std::array<float, 256> map{};
    for (int v = 0; v < 256; ++v) {
      double mv = 255.0 * double(cdf[size_t(v)] - cdf_min) / double(run - cdf_min);
      map[size_t(v)] = float(std::min(std::max(mv, 0.0), 255.0) / 255.0);
    }
    for (Eigen::Index i = 0; i < plane; ++i) dst[i] = map[size_t(quantize255(src[i]))];
  }
  return out;
}

// Contrast-limited adaptive histogram equalization, per channel, bilinear
// interpolation between per-tile mappings.
inline ImageF clahe_image(const ImageF& in, double clip_limit, int tiles) {
  ImageF out(in.n, in.c, in.h, in.w);
  const int H = int(in.h), W = int(in.w);
  const double th = double(H) / tiles, tw = double(W) / tiles;
  for (Eigen::Index c = 0; c < in.c; ++c) {
    const float* src = in.plane_ptr(0, c);
    float* dst = out.plane_ptr(0, c);
    // Per-tile lookup tables.
    std::vector<std::array<float, 256>> luts(size_t(tiles * tiles));
    for (int ty = 0; ty < tiles; ++ty) {
      for (int tx = 0; tx < tiles; ++tx) {
        int y0 = int(std::lround(ty * th)), y1 = int(std::lround((ty + 1) * th));
        int x0 = int(std::lround(tx * tw)), x1 = int(std::lround((tx + 1) * tw));
        y1 = std::max(y1, y0 + 1);
        x1 = std::max(x1, x0 + 1);
        std::array<double, 256> hist{};
        const double area = double(y1 - y0) * double(x1 - x0);
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x)
            hist[size_t(quantize255(src[Eigen::Index(y) * W + x]))] += 1.0;
        // Clip and redistribute the excess uniformly.
        double limit = std::max(1.0, clip_limit * area / 256.0);
        double excess = 0;
        for (auto& hv : hist)
          if (hv > limit) {
            excess += hv - limit;
            hv = limit;
          }
        double bonus = excess / 256.0;
        for (auto& hv : hist) hv += bonus;
        auto& lut = luts[size_t(ty * tiles + tx)];
        double run = 0;
        for (int v = 0; v < 256; ++v) {
          run += hist[size_t(v)];
          lut[size_t(v)] = float(std::min(std::max(run * 255.0 / area, 0.0), 255.0) / 255.0);
        }
      }
    }
    for (int y = 0; y < H; ++y) {
      double gy = (double(y) + 0.5) / th - 0.5;
      int ty0 = int(std::floor(gy));
      double fy = gy - ty0;
      int tya = std::min(std::max(ty0, 0), tiles - 1);
      int tyb = std::min(std::max(ty0 + 1, 0), tiles - 1);
      for (int x = 0; x < W; ++x) {
        double gx = (double(x) + 0.5) / tw - 0.5;
        int tx0 = int(std::floor(gx));
        double fx = gx - tx0;
        int txa = std::min(std::max(tx0, 0), tiles - 1);
        int txb = std::min(std::max(tx0 + 1, 0), tiles - 1);
        size_t v = size_t(quantize255(src[Eigen::Index(y) * W + x]));
        double m = (1 - fy) * ((1 - fx) * luts[size_t(tya * tiles + txa)][v] +
                               fx * luts[size_t(tya * tiles + txb)][v]) +
                   fy * ((1 - fx) * luts[size_t(tyb * tiles + txa)][v] +
                         fx * luts[size_t(tyb * tiles + txb)][v]);
        dst[Eigen::Index(y) * W + x] = float(m);
      }
    }
  }
  return out;
}

}  // namespace detail

inline ClipSequence augment(const ClipSequence& clip, const AugmentationPolicy& policy,
                            uint64_t seed) {
  policy.validate();
  Rng rng(hash_combine(seed, 0xa06e47ULL));
  detail::AugmentSample s =
      detail::sample_augment(policy, rng, int(clip.mask.h), int(clip.mask.w));
  ClipSequence out = clip;
  // Spatial transforms: frames and mask together.
  if (s.do_hflip || s.do_vflip) {
    for (auto& f : out.frames) f = detail::flip_image(f, s.do_hflip, s.do_vflip);
    out.mask = detail::flip_mask(out.mask, s.do_hflip, s.do_vflip);
  }
  if (s.do_ssr) {
    for (auto& f : out.frames) f = detail::ssr_image(f, s);
    out.mask = detail::ssr_mask(out.mask, s);
  }
  // Photometric transforms: frames only.
  for (auto& f : out.frames) {
    if (s.do_sharpen) f = detail::sharpen_image(f, s.sharpen_alpha);
    if (s.do_blur) f = detail::blur_image(f, s.blur_k);
    if (s.do_rbc) f = detail::rbc_image(f, s.rbc_alpha, s.rbc_beta);
    if (s.do_equalize) f = detail::equalize_image(f);
    if (s.do_clahe) f = detail::clahe_image(f, policy.clahe_clip, policy.clahe_tiles);
  }
  return out;
}

}  // namespace lithoseg
