#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <vector>

#include "lithoseg/core/rng.hpp"
#include "lithoseg/data/dataset.hpp"

namespace lithoseg {

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct SceneParams {
  int size = 256;
  double stone_area_mean = 0.3570;  // relative-area targets per clip
  double stone_area_sd = 0.1702;
  double laser_area_mean = 0.0345;
  double laser_area_sd = 0.0107;
  double debris_density = 16.0;  // expected specks per 256x256 frame
  double motion_px = 1.5;        // per-frame-step scene velocity scale
  double illum_jitter = 0.05;    // relative amplitude of per-frame gain
  enum class Background { vitro, vivo } background = Background::vitro;
  double noise_sd = 0.012;  // static sensor noise, fixed per clip
  int distractor_count = 2;

  static SceneParams vitro() { return SceneParams{}; }
  static SceneParams vivo() {
    SceneParams p;
    p.stone_area_mean = 0.1084;
    p.stone_area_sd = 0.0865;
    p.laser_area_mean = 0.0222;
    p.laser_area_sd = 0.0067;
    p.background = Background::vivo;
    p.debris_density = 22.0;
    return p;
  }
};

// Out-of-range parameters are pulled back into their valid ranges; each
// adjustment is reported on the log stream instead of raising.
inline SceneParams sanitize_params(const SceneParams& in, std::ostream& log = std::cerr) {
  SceneParams p = in;
  auto clamp_field = [&](double& v, double lo, double hi, const char* name) {
    double before = v;
    v = std::min(std::max(v, lo), hi);
    if (v != before)
      log << "scene params: clamped " << name << " from " << before << " to " << v << "\n";
  };
  if (p.size < 32) {
    log << "scene params: clamped size from " << p.size << " to 32\n";
    p.size = 32;
  }
  clamp_field(p.stone_area_mean, 0.005, 0.8, "stone_area_mean");
  clamp_field(p.stone_area_sd, 0.0, 0.5, "stone_area_sd");
  clamp_field(p.laser_area_mean, 0.002, 0.3, "laser_area_mean");
  clamp_field(p.laser_area_sd, 0.0, 0.2, "laser_area_sd");
  clamp_field(p.debris_density, 0.0, 400.0, "debris_density");
  clamp_field(p.motion_px, 0.0, 16.0, "motion_px");
  clamp_field(p.illum_jitter, 0.0, 0.5, "illum_jitter");
  clamp_field(p.noise_sd, 0.0, 0.2, "noise_sd");
  if (p.distractor_count < 0) {
    log << "scene params: clamped distractor_count to 0\n";
    p.distractor_count = 0;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Scene description: every shape and motion term is analytic so masks and
// ground-truth flow can be re-derived exactly from this struct.
// ---------------------------------------------------------------------------

struct EllipseShape {
  double cx = 0, cy = 0, ax = 1, ay = 1, phi = 0;
  // Normalized squared radius: <= 1 inside.
  double rho2(double x, double y) const {
    double dx = x - cx, dy = y - cy;
    double c = std::cos(phi), s = std::sin(phi);
    double u = (dx * c + dy * s) / ax;
    double v = (-dx * s + dy * c) / ay;
    return u * u + v * v;
  }
  bool contains(double x, double y) const { return rho2(x, y) <= 1.0; }
};

struct RodShape {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0, r = 1;  // (x1,y1) is the tip
  double dist(double x, double y) const {
    double ex = x1 - x0, ey = y1 - y0;
    double len2 = ex * ex + ey * ey;
    double t = len2 > 0 ? ((x - x0) * ex + (y - y0) * ey) / len2 : 0.0;
    t = std::min(std::max(t, 0.0), 1.0);
    double px = x0 + t * ex, py = y0 + t * ey;
    return std::hypot(x - px, y - py);
  }
  bool contains(double x, double y) const { return dist(x, y) <= r; }
};

// One sinusoidal component of the smooth scene deformation field.
struct FlowWave {
  double ax = 0, ay = 0;  // displacement amplitude per axis (px / frame step)
  double fx = 0, fy = 0;  // spatial frequency (cycles per image)
  double ph = 0;
};

struct DebrisSpeck {
  double cx = 0, cy = 0, r = 1, vx = 0, vy = 0, lum = 0.4;
};

struct SpecularBlob {
  double cx = 0, cy = 0, sigma = 3, amp = 0.2, vx = 0, vy = 0;
};

struct TexWave {
  double amp = 0, fx = 0, fy = 0, ph = 0;
};

struct StoneAppearance {
  double lum = 0.45;             // base brightness
  double tint_r = 1, tint_b = 1; // channel tints around the base
  double tex_amp = 0.06;
  TexWave tex[2];
};

struct SceneDescription {
  int size = 256;
  SceneParams::Background background = SceneParams::Background::vitro;

  // Geometry at the reference frame (frame 5).
  std::vector<EllipseShape> stones;
  std::vector<StoneAppearance> stone_looks;
  std::vector<EllipseShape> distractors;  // unlabeled lookalikes welded to the background
  std::vector<StoneAppearance> distractor_looks;
  RodShape laser;
  std::vector<DebrisSpeck> debris;
  std::vector<SpecularBlob> speculars;

  // Per-frame-step velocities (forward in time). The laser is static.
  double cam_vx = 0, cam_vy = 0;       // global scene translation
  double stone_vx = 0, stone_vy = 0;   // extra drift of the stones
  std::vector<FlowWave> waves;         // smooth deformation added to the translation

  // Appearance.
  double base_r = 0.16, base_g = 0.13, base_b = 0.11;
  double grad_gx = 0, grad_gy = 0;  // linear shading across the scene
  std::vector<TexWave> bg_tex;
  double vignette = 0.12;
  double illum[kFramesPerClip] = {1, 1, 1, 1, 1};    // global gain per frame
  double flicker[kFramesPerClip] = {1, 1, 1, 1, 1};  // laser glow gain per frame
  double glow_sigma = 4.0, glow_amp = 0.45;
  double noise_sd = 0.012;
  uint64_t noise_key = 0;

  // Scene velocity of background-attached content at reference point (x,y).
  void flow_background(double x, double y, double& vx, double& vy) const {
    vx = cam_vx;
    vy = cam_vy;
    for (const auto& wv : waves) {
      double s = std::sin(2.0 * std::numbers::pi * (wv.fx * x / size + wv.fy * y / size) + wv.ph);
      vx += wv.ax * s;
      vy += wv.ay * s;
    }
  }
  void flow_stone(double x, double y, double& vx, double& vy) const {
    flow_background(x, y, vx, vy);
    vx += stone_vx;
    vy += stone_vy;
  }

  int stone_index_at(double x, double y) const {
    for (size_t i = stones.size(); i-- > 0;)
      if (stones[i].contains(x, y)) return int(i);
    return -1;
  }

  // Reference-frame label; the laser sits on top of everything.
  int label_at(double x, double y) const {
    if (laser.contains(x, y)) return 2;
    if (stone_index_at(x, y) >= 0) return 1;
    return 0;
  }
};

// ---------------------------------------------------------------------------
// Scene construction
// ---------------------------------------------------------------------------

namespace detail {

inline StoneAppearance sample_stone_look(Rng& rng, int size) {
  StoneAppearance a;
  a.lum = rng.uniform(0.34, 0.60);
  a.tint_r = 1.0 + rng.uniform(-0.10, 0.14);
  a.tint_b = 1.0 + rng.uniform(-0.14, 0.08);
  a.tex_amp = rng.uniform(0.05, 0.10);
  for (auto& t : a.tex) {
    t.amp = 1.0;
    t.fx = rng.uniform(4.0, 14.0) * (rng.coin(0.5) ? 1 : -1);
    t.fy = rng.uniform(4.0, 14.0);
    t.ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
    (void)size;
  }
  return a;
}

inline EllipseShape sample_ellipse(Rng& rng, double target_px, int size, double clo, double chi) {
  EllipseShape e;
  double aspect = rng.uniform(1.2, 2.6);
  e.ax = std::sqrt(target_px * aspect / std::numbers::pi);
  e.ay = e.ax / aspect;
  e.phi = rng.uniform(0.0, std::numbers::pi);
  e.cx = rng.uniform(clo, chi) * size;
  e.cy = rng.uniform(clo, chi) * size;
  return e;
}

inline Eigen::Index count_label(const SceneDescription& sc, int label) {
  Eigen::Index hits = 0;
  for (int y = 0; y < sc.size; ++y)
    for (int x = 0; x < sc.size; ++x) hits += (sc.label_at(x, y) == label);
  return hits;
}

}  // namespace detail

inline SceneDescription generate_scene(uint64_t seed, const SceneParams& params_in,
                                       std::ostream& log = std::cerr) {
  SceneParams p = sanitize_params(params_in, log);
  Rng rng(hash_combine(seed, 0x5ce27e5cULL));
  SceneDescription sc;
  sc.size = p.size;
  sc.background = p.background;
  sc.noise_sd = p.noise_sd;
  sc.noise_key = hash_combine(seed, 0x701e5eULL);
  const int size = p.size;
  const double total_px = double(size) * double(size);

  // --- Laser: a rod entering from the right image border, tip near center.
  {
    double rel = rng.normal(p.laser_area_mean, p.laser_area_sd);
    rel = std::min(std::max(rel, std::max(0.004, p.laser_area_mean - 2.5 * p.laser_area_sd)),
                   std::min(0.25, p.laser_area_mean + 2.5 * p.laser_area_sd));
    double target = rel * total_px;
    sc.laser.x1 = rng.uniform(0.34, 0.60) * size;
    sc.laser.y1 = rng.uniform(0.38, 0.66) * size;
    sc.laser.x0 = size + 2.0;
    double slope = std::tan(rng.uniform(-0.25, 0.25));
    sc.laser.y0 = sc.laser.y1 + (sc.laser.x0 - sc.laser.x1) * slope;
    // Visible area is nearly linear in the radius; a couple of multiplicative
    // corrections land within a pixel row of the target.
    double approx_len = std::hypot(sc.laser.x1 - sc.laser.x0, sc.laser.y1 - sc.laser.y0);
    sc.laser.r = std::max(1.0, target / std::max(2.0 * approx_len, 1.0));
    for (int it = 0; it < 3; ++it) {
      double actual = double(detail::count_label(sc, 2));
      if (actual <= 0) actual = 1;
      double f = std::min(std::max(target / actual, 0.5), 2.0);
      sc.laser.r = std::min(std::max(sc.laser.r * f, 0.8), 0.2 * size);
    }
  }

  // --- Stones: 1-3 ellipses, axes rescaled until the union area (minus the
  // laser, which wins overlapping pixels) matches the drawn target.
  {
    double rel = rng.normal(p.stone_area_mean, p.stone_area_sd);
    rel = std::min(std::max(rel, std::max(0.02, p.stone_area_mean - 2.5 * p.stone_area_sd)),
                   std::min(0.8, p.stone_area_mean + 2.5 * p.stone_area_sd));
    double target = rel * total_px;
    int count = 1 + int(rng.uniform_int(3));
    std::vector<double> wts(static_cast<size_t>(count));
    double wsum = 0;
    for (auto& w : wts) {
      w = rng.uniform(0.5, 1.5);
      wsum += w;
    }
    for (int i = 0; i < count; ++i) {
      sc.stones.push_back(
          detail::sample_ellipse(rng, target * wts[size_t(i)] / wsum, size, 0.22, 0.78));
      sc.stone_looks.push_back(detail::sample_stone_look(rng, size));
    }
    for (int it = 0; it < 3; ++it) {
      double actual = double(detail::count_label(sc, 1));
      if (actual <= 0) actual = 1;
      double f = std::sqrt(std::min(std::max(target / actual, 0.35), 3.0));
      for (auto& e : sc.stones) {
        e.ax = std::min(e.ax * f, 0.9 * size);
        e.ay = std::min(e.ay * f, 0.9 * size);
      }
    }
  }

  // --- Distractors: stone lookalikes drawn from the same appearance
  // distribution but welded to the background (and unlabeled).
  for (int i = 0; i < p.distractor_count; ++i) {
    double rel = p.stone_area_mean * rng.uniform(0.25, 0.6);
    sc.distractors.push_back(detail::sample_ellipse(rng, rel * total_px, size, 0.08, 0.92));
    sc.distractor_looks.push_back(detail::sample_stone_look(rng, size));
  }

  // --- Motion: global pan, extra stone drift, smooth deformation waves.
  {
    double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
    double mag = p.motion_px * rng.uniform(0.35, 0.65);
    sc.cam_vx = mag * std::cos(ang);
    sc.cam_vy = mag * std::sin(ang);
    ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
    mag = p.motion_px * rng.uniform(0.5, 1.0);
    sc.stone_vx = mag * std::cos(ang);
    sc.stone_vy = mag * std::sin(ang);
    for (int i = 0; i < 2; ++i) {
      FlowWave wv;
      wv.ax = p.motion_px * 0.2 * rng.uniform(0.5, 1.0) * (rng.coin(0.5) ? 1 : -1);
      wv.ay = p.motion_px * 0.2 * rng.uniform(0.5, 1.0) * (rng.coin(0.5) ? 1 : -1);
      wv.fx = rng.uniform(0.5, 1.5);
      wv.fy = rng.uniform(0.5, 1.5);
      wv.ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
      sc.waves.push_back(wv);
    }
  }

  // --- Debris specks drifting semi-independently.
  {
    int count = int(std::lround(p.debris_density * total_px / (256.0 * 256.0)));
    for (int i = 0; i < count; ++i) {
      DebrisSpeck d;
      d.cx = rng.uniform(0.0, 1.0) * size;
      d.cy = rng.uniform(0.0, 1.0) * size;
      d.r = rng.uniform(1.0, 3.5);
      d.lum = rng.uniform(0.25, 0.6);
      double bx, by;
      sc.flow_background(d.cx, d.cy, bx, by);
      d.vx = bx + p.motion_px * 0.7 * rng.normal();
      d.vy = by + p.motion_px * 0.7 * rng.normal();
      sc.debris.push_back(d);
    }
  }

  // --- Specular highlights drifting slowly in the image plane.
  {
    int count = 1 + int(rng.uniform_int(3));
    for (int i = 0; i < count; ++i) {
      SpecularBlob s;
      s.cx = rng.uniform(0.1, 0.9) * size;
      s.cy = rng.uniform(0.1, 0.9) * size;
      s.sigma = rng.uniform(2.0, 5.0);
      s.amp = rng.uniform(0.12, 0.3);
      s.vx = p.motion_px * 0.3 * rng.normal();
      s.vy = p.motion_px * 0.3 * rng.normal();
      sc.speculars.push_back(s);
    }
  }

  // --- Background palette and texture.
  if (p.background == SceneParams::Background::vitro) {
    double g = rng.uniform(0.8, 1.2);
    sc.base_r = 0.16 * g;
    sc.base_g = 0.135 * g;
    sc.base_b = 0.115 * g;
    for (int i = 0; i < 2; ++i) {
      TexWave t;
      t.amp = rng.uniform(0.01, 0.025);
      t.fx = rng.uniform(0.8, 2.5);
      t.fy = rng.uniform(0.8, 2.5);
      t.ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
      sc.bg_tex.push_back(t);
    }
    sc.vignette = rng.uniform(0.08, 0.16);
  } else {
    double g = rng.uniform(0.85, 1.15);
    sc.base_r = 0.44 * g;
    sc.base_g = 0.21 * g;
    sc.base_b = 0.19 * g;
    for (int i = 0; i < 3; ++i) {
      TexWave t;
      t.amp = rng.uniform(0.03, 0.07);
      t.fx = rng.uniform(1.5, 7.0);
      t.fy = rng.uniform(1.5, 7.0);
      t.ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
      sc.bg_tex.push_back(t);
    }
    sc.vignette = rng.uniform(0.12, 0.2);
  }
  {
    double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
    double amp = rng.uniform(0.02, 0.06);
    sc.grad_gx = amp * std::cos(ang) / size;
    sc.grad_gy = amp * std::sin(ang) / size;
  }

  // --- Per-frame illumination and laser-glow flicker, scaled by the jitter knob.
  for (int k = 0; k < kFramesPerClip; ++k) {
    sc.illum[k] = 1.0 + p.illum_jitter * rng.uniform(-1.0, 1.0);
    sc.flicker[k] = 1.0 + p.illum_jitter * 2.0 * rng.uniform(-1.0, 1.0);
  }
  sc.glow_sigma = rng.uniform(3.0, 5.5);
  sc.glow_amp = rng.uniform(0.3, 0.55);
  return sc;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

namespace detail {

inline double smooth_alpha(double signed_dist, double edge) {
  // 0.5 exactly on the analytic boundary, so rendering agrees with the mask.
  double t = 0.5 - signed_dist / (2.0 * edge);
  return std::min(std::max(t, 0.0), 1.0);
}

inline void stone_color(const StoneAppearance& a, double x, double y, int size, double rho2,
                        double out[3]) {
  double tex = 0;
  for (const auto& t : a.tex)
    tex += std::sin(2.0 * std::numbers::pi * (t.fx * x / size + t.fy * y / size) + t.ph);
  double lum = a.lum * (1.0 + a.tex_amp * tex);
  // Darken toward the rim for a rounded look.
  double rim = 1.0 - 0.22 * std::min(std::max((std::sqrt(std::max(rho2, 0.0)) - 0.6) / 0.4, 0.0), 1.0);
  lum *= rim;
  out[0] = lum * a.tint_r;
  out[1] = lum;
  out[2] = lum * a.tint_b;
}

}  // namespace detail

// Renders frame k1 (1-based, frame 5 is the reference). Exposed so tests can
// render frames of a hand-edited scene.
inline ImageF render_frame(const SceneDescription& sc, int k1) {
  check(k1 >= 1 && k1 <= kFramesPerClip, "render_frame: frame index out of range");
  const int size = sc.size;
  const double m = double(kFramesPerClip - k1);  // frame steps back from the reference
  ImageF img(1, 3, size, size);
  float* R = img.plane_ptr(0, 0);
  float* G = img.plane_ptr(0, 1);
  float* B = img.plane_ptr(0, 2);
  const double gain = sc.illum[k1 - 1];
  const double flick = sc.flicker[k1 - 1];

  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double bx, by, sx, sy;
      sc.flow_background(double(x), double(y), bx, by);
      sx = bx + sc.stone_vx;
      sy = by + sc.stone_vy;
      const double qbx = x + m * bx, qby = y + m * by;  // background content lookup
      const double qsx = x + m * sx, qsy = y + m * sy;  // stone content lookup

      // Background shade with texture and a linear gradient.
      double tex = 0;
      for (const auto& t : sc.bg_tex)
        tex += t.amp *
               std::sin(2.0 * std::numbers::pi * (t.fx * qbx / size + t.fy * qby / size) + t.ph);
      double shade = 1.0 + tex + sc.grad_gx * (qbx - size / 2.0) + sc.grad_gy * (qby - size / 2.0);
      double r = sc.base_r * shade, g = sc.base_g * shade, b = sc.base_b * shade;

      // Distractors ride with the background.
      for (size_t i = 0; i < sc.distractors.size(); ++i) {
        const auto& e = sc.distractors[i];
        double rho2 = e.rho2(qbx, qby);
        if (rho2 > 1.8) continue;
        double edge = 1.5 / std::max(1.0, std::min(e.ax, e.ay));
        double alpha = detail::smooth_alpha(std::sqrt(rho2) - 1.0, edge);
        if (alpha <= 0) continue;
        double col[3];
        detail::stone_color(sc.distractor_looks[i], qbx, qby, size, rho2, col);
        r += alpha * (col[0] - r);
        g += alpha * (col[1] - g);
        b += alpha * (col[2] - b);
      }

      // Stones (their own drift on top of the background flow).
      for (size_t i = 0; i < sc.stones.size(); ++i) {
        const auto& e = sc.stones[i];
        double rho2 = e.rho2(qsx, qsy);
        if (rho2 > 1.8) continue;
        double edge = 1.5 / std::max(1.0, std::min(e.ax, e.ay));
        double alpha = detail::smooth_alpha(std::sqrt(rho2) - 1.0, edge);
        if (alpha <= 0) continue;
        double col[3];
        detail::stone_color(sc.stone_looks[i], qsx, qsy, size, rho2, col);
        r += alpha * (col[0] - r);
        g += alpha * (col[1] - g);
        b += alpha * (col[2] - b);
      }

      // Debris specks move with their own velocities in the image plane.
      for (const auto& d : sc.debris) {
        double cx = d.cx - m * d.vx, cy = d.cy - m * d.vy;
        double dist = std::hypot(x - cx, y - cy);
        if (dist > d.r + 2.0) continue;
        double alpha = detail::smooth_alpha(dist - d.r, 0.8);
        if (alpha <= 0) continue;
        r += alpha * (d.lum * 1.02 - r);
        g += alpha * (d.lum - g);
        b += alpha * (d.lum * 0.92 - b);
      }

      // Laser fiber: static rod with a crisp dark outline.
      {
        double dist = sc.laser.dist(double(x), double(y));
        if (dist <= sc.laser.r + 2.5) {
          double alpha = detail::smooth_alpha(dist - sc.laser.r, 0.8);
          if (alpha > 0) {
            double axial = std::min(std::max(dist / std::max(sc.laser.r, 1e-6), 0.0), 1.0);
            double core = 1.0 - 0.35 * axial * axial;
            double lr = 0.70 * core, lg = 0.80 * core, lb = 0.88 * core;
            r += alpha * (lr - r);
            g += alpha * (lg - g);
            b += alpha * (lb - b);
          }
          double band = std::abs(dist - sc.laser.r);
          double outline = 0.35 * std::max(0.0, 1.0 - band / 1.5);
          r *= 1.0 - outline;
          g *= 1.0 - outline;
          b *= 1.0 - outline;
        }
      }

      // Additive glow at the laser tip, flickering with illumination.
      {
        double dx = x - sc.laser.x1, dy = y - sc.laser.y1;
        double s2 = sc.glow_sigma * sc.glow_sigma;
        double d2 = dx * dx + dy * dy;
        if (d2 < 25.0 * s2) {
          double gsh = sc.glow_amp * flick * std::exp(-0.5 * d2 / s2);
          r += gsh;
          g += gsh * 0.9;
          b += gsh * 0.75;
        }
      }

      // Specular highlights, attached to the image plane.
      for (const auto& s : sc.speculars) {
        double cx = s.cx - m * s.vx, cy = s.cy - m * s.vy;
        double dx = x - cx, dy = y - cy;
        double d2 = dx * dx + dy * dy;
        double s2 = s.sigma * s.sigma;
        if (d2 >= 16.0 * s2) continue;
        double a = s.amp * std::exp(-0.5 * d2 / s2);
        r += a;
        g += a;
        b += a;
      }

      // Vignette (lens-attached), global gain, static sensor noise.
      double cxn = (x - size / 2.0) / (size / 2.0);
      double cyn = (y - size / 2.0) / (size / 2.0);
      double vig = 1.0 - sc.vignette * (cxn * cxn + cyn * cyn);
      uint64_t key = sc.noise_key ^ (uint64_t(uint32_t(y)) << 20) ^ uint64_t(uint32_t(x));
      auto noise = [&](int ch) {
        double u1 = std::max(hash_uniform(hash_combine(key, uint64_t(ch) * 2)), 1e-12);
        double u2 = hash_uniform(hash_combine(key, uint64_t(ch) * 2 + 1));
        return sc.noise_sd * std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
      };
      Eigen::Index idx = Eigen::Index(y) * size + x;
      R[idx] = float(std::min(std::max(r * vig * gain + noise(0), 0.0), 1.0));
      G[idx] = float(std::min(std::max(g * vig * gain + noise(1), 0.0), 1.0));
      B[idx] = float(std::min(std::max(b * vig * gain + noise(2), 0.0), 1.0));
    }
  }
  return img;
}

inline MaskI render_mask(const SceneDescription& sc) {
  MaskI m(1, 1, sc.size, sc.size);
  for (int y = 0; y < sc.size; ++y)
    for (int x = 0; x < sc.size; ++x)
      m.at(0, 0, y, x) = sc.label_at(double(x), double(y));
  return m;
}

inline ClipSequence render_clip(const SceneDescription& sc, const std::string& clip_id) {
  ClipSequence clip;
  clip.clip_id = clip_id;
  for (int k = 1; k <= kFramesPerClip; ++k) clip.frames[size_t(k - 1)] = render_frame(sc, k);
  clip.mask = render_mask(sc);
  return clip;
}

inline ClipSequence generate_synthetic_clip(uint64_t seed, const SceneParams& params,
                                            std::ostream& log = std::cerr) {
  SceneDescription sc = generate_scene(seed, params, log);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "clip_%08llx", (unsigned long long)seed);
  return render_clip(sc, buf);
}

// Ground-truth displacement field between two frames of a scene, on frame a's
// pixel grid: fields (dx, dy) such that content at (x,y) in frame a sits at
// (x+dx, y+dy) in frame b. Laser pixels are static; debris is approximated as
// background.
inline Tensor<float> true_flow(const SceneDescription& sc, int frame_a, int frame_b) {
  check(frame_a >= 1 && frame_a <= kFramesPerClip && frame_b >= 1 && frame_b <= kFramesPerClip,
        "true_flow: frame index out of range");
  Tensor<float> flow(1, 2, sc.size, sc.size);
  const double ma = double(kFramesPerClip - frame_a);
  const double db = double(frame_b - frame_a);
  for (int y = 0; y < sc.size; ++y) {
    for (int x = 0; x < sc.size; ++x) {
      double dx = 0, dy = 0;
      if (!sc.laser.contains(double(x), double(y))) {
        double bx, by;
        sc.flow_background(double(x), double(y), bx, by);
        double sx = bx + sc.stone_vx, sy = by + sc.stone_vy;
        if (sc.stone_index_at(x + ma * sx, y + ma * sy) >= 0) {
          dx = db * sx;
          dy = db * sy;
        } else {
          dx = db * bx;
          dy = db * by;
        }
      }
      flow.at(0, 0, y, x) = float(dx);
      flow.at(0, 1, y, x) = float(dy);
    }
  }
  return flow;
}

// ---------------------------------------------------------------------------
// Dataset writer
// ---------------------------------------------------------------------------

struct ManifestRow {
  std::string clip_id;
  std::string split;
  double stone_area = 0;
  double laser_area = 0;
  uint64_t seed = 0;
};

inline void write_manifest(const std::string& root, const std::vector<ManifestRow>& rows) {
  std::ofstream f(std::filesystem::path(root) / "manifest.csv");
  if (!f) throw std::runtime_error("cannot write manifest under " + root);
  f << "clip_id,split,stone_area,laser_area,seed\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f", r.stone_area, r.laser_area);
    f << r.clip_id << "," << r.split << "," << buf << "," << r.seed << "\n";
  }
}

// Writes `count` clips under root/{train,val,test} with 60/20/20 proportions
// plus a manifest.csv; per-clip seeds derive from the master seed.
inline std::vector<ManifestRow> generate_synthetic_dataset(const std::string& root, int count,
                                                           const SceneParams& params,
                                                           uint64_t seed,
                                                           std::ostream& log = std::cerr) {
  check(count > 0, "generate_synthetic_dataset: count must be positive");
  int n_train = count * 3 / 5;
  int n_val = count / 5;
  std::vector<ManifestRow> rows;
  rows.reserve(size_t(count));
  for (int i = 0; i < count; ++i) {
    uint64_t clip_seed = hash_combine(seed, uint64_t(i) + 1);
    SceneDescription sc = generate_scene(clip_seed, params, log);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "clip_%04d", i);
    ClipSequence clip = render_clip(sc, buf);
    std::string split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
    save_clip(root, split, clip);
    ManifestRow row;
    row.clip_id = clip.clip_id;
    row.split = split;
    row.stone_area = label_fraction(clip.mask, 1);
    row.laser_area = label_fraction(clip.mask, 2);
    row.seed = clip_seed;
    rows.push_back(row);
  }
  write_manifest(root, rows);
  return rows;
}

}  // namespace lithoseg
