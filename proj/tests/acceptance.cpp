// Acceptance suite for the framework's quantitative contract. Each numbered
// criterion prints exactly one [PASS]/[FAIL] line with measured values; the
// process exits nonzero if any criterion fails. Pass a criterion number as
// the only argument to run just that criterion.
//
// Tolerances are pinned next to each check. Training-based criteria (6-8, 10)
// use fixed seeds and desk-scale configurations chosen to finish on a single
// CPU core in a few minutes total.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "lithoseg/core/pool.hpp"
#include "lithoseg/core/resample.hpp"
#include "lithoseg/core/warp.hpp"
#include "lithoseg/data/synth.hpp"
#include "lithoseg/loss/losses.hpp"
#include "lithoseg/metrics/metrics.hpp"
#include "lithoseg/nn/adam.hpp"
#include "lithoseg/nn/dvfnet.hpp"
#include "lithoseg/pipeline/pipeline.hpp"
#include "lithoseg/plot/plot.hpp"

#ifndef LITHOSEG_FIXTURE_DIR
#error "LITHOSEG_FIXTURE_DIR must point at the reference CSV directory"
#endif

using namespace lithoseg;
using lithoseg::testing::gradcheck;
using lithoseg::testing::random_tensor;

namespace {

constexpr const char* kScratchDir = "acceptance_scratch";

struct Outcome {
  bool ok = false;
  std::string detail;
};

Outcome pass(std::string d) { return {true, std::move(d)}; }
Outcome fail(std::string d) { return {false, std::move(d)}; }

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

CsvTable load_fixture(const std::string& name) {
  const std::string path = std::string(LITHOSEG_FIXTURE_DIR) + "/" + name;
  std::ifstream is(path);
  if (!is) throw std::runtime_error("missing fixture: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return read_csv_text(ss.str());
}

// ---------------------------------------------------------------------------
// Criterion 1: reference fixture tables parse and are internally consistent.
// The stored scores are regression fixtures (their absolute values depend on
// data this project does not ship); what must hold is the aggregation
// arithmetic and the relative improvements quoted alongside them.
// ---------------------------------------------------------------------------

Outcome criterion_fixtures() {
  CsvTable scores = load_fixture("reference_scores.csv");
  if (scores.rows.size() != 24)
    return fail(fmt("reference_scores.csv: expected 24 rows, got %zu", scores.rows.size()));
  auto sd = scores.numbers("stone_dsc"), ld = scores.numbers("laser_dsc");
  auto sj = scores.numbers("stone_ji"), lj = scores.numbers("laser_ji");
  auto mean = scores.numbers("mean_dsc_ji");
  double worst = 0;
  for (size_t i = 0; i < scores.rows.size(); ++i) {
    const double avg4 = (sd[i] + ld[i] + sj[i] + lj[i]) / 4.0;
    worst = std::max(worst, std::abs(avg4 - mean[i]));
    for (const std::string& col : {"stone_ppv", "laser_ppv", "stone_sens", "laser_sens"}) {
      const double v = scores.numbers(col)[i];
      if (!(v > 0.0 && v < 1.0)) return fail("score outside (0,1) in row " + std::to_string(i));
    }
  }
  if (worst > 1e-4)
    return fail(fmt("mean(DSC,JI) column deviates from the 4-value average by %.2e", worst));

  CsvTable abl = load_fixture("reference_loss_ablation.csv");
  if (abl.rows.size() != 6) return fail("reference_loss_ablation.csv: expected 6 rows");
  auto m = abl.numbers("mean_dsc");
  // Quoted relative improvements: boundary term +5.2% / +9.5%, similarity and
  // smoothness a further +2.6% / +2.3% (vitro rows 0-2, vivo rows 3-5).
  const double quoted[4] = {0.052, 0.026, 0.095, 0.023};
  const double got[4] = {(m[1] - m[0]) / m[0], (m[2] - m[1]) / m[1], (m[4] - m[3]) / m[3],
                         (m[5] - m[4]) / m[4]};
  for (int i = 0; i < 4; ++i)
    if (std::abs(got[i] - quoted[i]) > 1e-3)
      return fail(fmt("ablation improvement %d: %.4f vs quoted %.4f", i, got[i], quoted[i]));

  CsvTable tim = load_fixture("reference_timings.csv");
  auto secs = tim.numbers("seconds_per_10_images");
  if (tim.rows.size() != 4) return fail("reference_timings.csv: expected 4 rows");
  double hyb = -1;
  for (size_t i = 0; i < tim.rows.size(); ++i)
    if (tim.rows[i][0] == "hybresunet") hyb = secs[i];
  if (std::abs(hyb - 0.8623) > 1e-9) return fail("hybresunet timing row mismatch");
  if (std::lround(10.0 / hyb) != 12)
    return fail(fmt("10 images / %.4f s rounds to %ld fps, quoted 12", hyb,
                    std::lround(10.0 / hyb)));
  return pass(fmt("24+6+4 fixture rows; worst mean-column deviation %.1e; "
                  "relative gains match quotes; 10/%.4f s rounds to 12 fps",
                  worst, hyb));
}

// ---------------------------------------------------------------------------
// Criterion 2: loss identity suite.
// ---------------------------------------------------------------------------

Tensor<int32_t> random_labels(Rng& rng, Eigen::Index n, Eigen::Index h, Eigen::Index w,
                              int classes) {
  Tensor<int32_t> lab(n, 1, h, w);
  for (Eigen::Index i = 0; i < lab.size(); ++i) lab.data[i] = int32_t(rng.uniform_int(classes));
  return lab;
}

Tensor<double> onehot_probs(const Tensor<int32_t>& lab, int num_classes) {
  Tensor<double> p(lab.n, num_classes, lab.h, lab.w);
  for (Eigen::Index ni = 0; ni < lab.n; ++ni)
    for (Eigen::Index i = 0; i < lab.plane(); ++i)
      p.plane_ptr(ni, lab.plane_ptr(ni, 0)[i])[i] = 1.0;
  return p;
}

Outcome criterion_loss_identities() {
  Rng rng(211);
  LossConfig<double> lc;

  // focal(gamma = 0) equals mean cross-entropy, via an independent loop.
  auto logits = random_tensor(rng, 2, 3, 8, 8, -1.5, 1.5);
  auto labels = random_labels(rng, 2, 8, 8, 3);
  Graph<double> g1;
  Var probs1 = softmax_c(g1, g1.leaf(logits));
  const double fl0 = g1.val(focal_loss(g1, probs1, labels, 0.0, lc.prob_floor)).data[0];
  const Tensor<double>& pv = g1.val(probs1);
  double ce = 0;
  for (Eigen::Index ni = 0; ni < pv.n; ++ni)
    for (Eigen::Index i = 0; i < pv.plane(); ++i)
      ce -= std::log(pv.plane_ptr(ni, labels.plane_ptr(ni, 0)[i])[i]);
  ce /= double(pv.n * pv.plane());
  if (std::abs(fl0 - ce) > 1e-9) return fail(fmt("focal(0) vs CE: |%.12f - %.12f|", fl0, ce));

  // Perfect one-hot prediction drives focal loss to zero.
  auto hot = onehot_probs(labels, 3);
  Graph<double> g2;
  const double flp = g2.val(focal_loss(g2, g2.leaf(hot), labels, lc.gamma, lc.prob_floor)).data[0];
  if (std::abs(flp) > 1e-12) return fail(fmt("perfect focal = %.2e", flp));

  // Boundary loss is zero on an exact one-hot match.
  auto mask = random_labels(rng, 1, 10, 10, 3);
  Graph<double> g3;
  const double bd = g3.val(boundary_loss(g3, g3.leaf(onehot_probs(mask, 3)), mask, lc)).data[0];
  if (std::abs(bd) > 1e-12) return fail(fmt("boundary on exact match = %.2e", bd));

  // Similarity: zero on identical pairs, tiny under positive affine gain.
  auto a = random_tensor(rng, 2, 1, 8, 8, 0.0, 1.0);
  Tensor<double> b = a;
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data[i] = 1.7 * b.data[i] + 0.3;
  Graph<double> g4;
  const double s_id = g4.val(ncc_pair_loss(g4, g4.leaf(a), g4.leaf(a), lc.epsilon)).data[0];
  const double s_af = g4.val(ncc_pair_loss(g4, g4.leaf(a), g4.leaf(b), lc.epsilon)).data[0];
  if (std::abs(s_id) > 1e-12) return fail(fmt("NCC identical = %.2e", s_id));
  if (std::abs(s_af) > 1e-4) return fail(fmt("NCC affine = %.2e", s_af));

  // Smoothness vanishes on constant fields.
  Tensor<double> flat(1, 2, 8, 8);
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat.data[i] = 0.73;
  Graph<double> g5;
  const double sm = g5.val(smoothness_loss(g5, g5.leaf(flat), g5.leaf(flat))).data[0];
  if (std::abs(sm) > 1e-12) return fail(fmt("smoothness on constant = %.2e", sm));

  // Compound equals the weighted sum of its parts, recomputed independently.
  auto cl = random_tensor(rng, 1, 3, 6, 6, -1.0, 1.0);
  auto clab = random_labels(rng, 1, 6, 6, 3);
  auto s1 = random_tensor(rng, 1, 1, 6, 6, 0.0, 1.0), w1 = random_tensor(rng, 1, 1, 6, 6, 0.0, 1.0);
  auto s2 = random_tensor(rng, 1, 1, 6, 6, 0.0, 1.0), w2 = random_tensor(rng, 1, 1, 6, 6, 0.0, 1.0);
  auto d1 = random_tensor(rng, 1, 2, 6, 6, -2.0, 2.0), d2 = random_tensor(rng, 1, 2, 6, 6, -2.0, 2.0);
  Graph<double> g6;
  CompoundInputs<double> in;
  in.probs = softmax_c(g6, g6.leaf(cl));
  in.labels = clab;
  in.src1 = g6.leaf(s1);
  in.warped1 = g6.leaf(w1);
  in.src2 = g6.leaf(s2);
  in.warped2 = g6.leaf(w2);
  in.dvf1 = g6.leaf(d1);
  in.dvf2 = g6.leaf(d2);
  const double total = g6.val(compound_loss(g6, in, lc).total).data[0];
  Graph<double> g7;
  Var probs7 = softmax_c(g7, g7.leaf(cl));
  const double part =
      g7.val(focal_loss(g7, probs7, clab, lc.gamma, lc.prob_floor)).data[0] +
      lc.alpha * g7.val(boundary_loss(g7, probs7, clab, lc)).data[0] +
      lc.beta * g7.val(ncc_loss(g7, g7.leaf(s1), g7.leaf(w1), g7.leaf(s2), g7.leaf(w2),
                                lc.epsilon)).data[0] +
      lc.zeta * g7.val(smoothness_loss(g7, g7.leaf(d1), g7.leaf(d2))).data[0];
  if (std::abs(total - part) > 1e-6)
    return fail(fmt("compound %.9f vs weighted sum %.9f", total, part));

  return pass(fmt("focal(0)=CE to %.1e; perfect focal/boundary/NCC/smoothness at 0; "
                  "affine NCC %.1e; compound matches weighted sum to %.1e",
                  std::abs(fl0 - ce), s_af, std::abs(total - part)));
}

// ---------------------------------------------------------------------------
// Criterion 3: central-difference gradient checks, double precision.
// ---------------------------------------------------------------------------

Outcome criterion_gradients() {
  Rng rng(62);
  double worst = 0;
  int checked = 0;
  auto track = [&](lithoseg::testing::GradcheckResult r) {
    worst = std::max(worst, r.max_rel_err);
    checked += r.checked;
    return r.max_rel_err;
  };

  // Focal loss through softmax at both gamma values.
  auto logits = random_tensor(rng, 1, 3, 4, 4, -1.5, 1.5);
  auto lab = random_labels(rng, 1, 4, 4, 3);
  for (double gamma : {0.0, 2.0}) {
    const double e = track(gradcheck({logits}, [&](Graph<double>& g, const std::vector<Var>& v) {
      return focal_loss(g, softmax_c(g, v[0]), lab, gamma);
    }));
    if (e > 1e-4) return fail(fmt("focal gamma=%g rel err %.2e", gamma, e));
  }

  // Boundary loss on soft probability maps.
  auto blogits = random_tensor(rng, 1, 3, 6, 6, -1.0, 1.0);
  Tensor<int32_t> bgt(1, 1, 6, 6);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x)
      bgt.plane_ptr(0, 0)[y * 6 + x] = (y > 1 && y < 5 && x > 1 && x < 4) ? 1 : (x == 5 ? 2 : 0);
  LossConfig<double> lc;
  {
    const double e = track(gradcheck({blogits}, [&](Graph<double>& g, const std::vector<Var>& v) {
      return boundary_loss(g, softmax_c(g, v[0]), bgt, lc);
    }));
    if (e > 1e-4) return fail(fmt("boundary rel err %.2e", e));
  }

  // Similarity loss over both inputs.
  auto na = random_tensor(rng, 2, 1, 5, 5, 0.0, 1.0), nb = random_tensor(rng, 2, 1, 5, 5, 0.0, 1.0);
  {
    const double e = track(gradcheck({na, nb}, [&](Graph<double>& g, const std::vector<Var>& v) {
      return ncc_pair_loss(g, v[0], v[1], lc.epsilon);
    }));
    if (e > 1e-4) return fail(fmt("similarity rel err %.2e", e));
  }

  // Smoothness over two displacement fields.
  auto f1 = random_tensor(rng, 1, 2, 5, 5, -1.0, 1.0), f2 = random_tensor(rng, 1, 2, 5, 5, -1.0, 1.0);
  {
    const double e = track(gradcheck({f1, f2}, [&](Graph<double>& g, const std::vector<Var>& v) {
      return smoothness_loss(g, v[0], v[1]);
    }));
    if (e > 1e-4) return fail(fmt("smoothness rel err %.2e", e));
  }

  // Warp: displacements with fractional parts in [0.25, 0.75] keep every probe
  // at least 0.25 px from the bilinear kernel's integer breakpoints.
  auto img = random_tensor(rng, 1, 1, 6, 6, 0.0, 1.0);
  Tensor<double> dvf(1, 2, 6, 6);
  for (Eigen::Index i = 0; i < dvf.size(); ++i)
    dvf.data[i] = (rng.uniform_int(2) ? 1.0 : -1.0) * rng.uniform(0.25, 0.75);
  {
    const double e = track(gradcheck({img, dvf}, [&](Graph<double>& g, const std::vector<Var>& v) {
      return mean_all(g, sq(g, warp_bilinear(g, v[0], v[1])));
    }));
    if (e > 1e-4) return fail(fmt("warp rel err %.2e", e));
  }

  // Compound loss over every differentiable input at once.
  auto cl = random_tensor(rng, 1, 3, 6, 6, -1.0, 1.0);
  auto clab = random_labels(rng, 1, 6, 6, 3);
  auto s1 = random_tensor(rng, 1, 1, 6, 6, 0.0, 1.0), w1 = random_tensor(rng, 1, 1, 6, 6, 0.0, 1.0);
  auto s2 = random_tensor(rng, 1, 1, 6, 6, 0.0, 1.0), w2 = random_tensor(rng, 1, 1, 6, 6, 0.0, 1.0);
  auto d1 = random_tensor(rng, 1, 2, 6, 6, -2.0, 2.0), d2 = random_tensor(rng, 1, 2, 6, 6, -2.0, 2.0);
  {
    const double e = track(
        gradcheck({cl, s1, w1, s2, w2, d1, d2}, [&](Graph<double>& g, const std::vector<Var>& v) {
          CompoundInputs<double> in;
          in.probs = softmax_c(g, v[0]);
          in.labels = clab;
          in.src1 = v[1];
          in.warped1 = v[2];
          in.src2 = v[3];
          in.warped2 = v[4];
          in.dvf1 = v[5];
          in.dvf2 = v[6];
          return compound_loss(g, in, lc).total;
        }));
    if (e > 1e-4) return fail(fmt("compound rel err %.2e", e));
  }

  return pass(fmt("%d coordinates across 7 loss builds + warp, max rel err %.2e (<= 1e-4)",
                  checked, worst));
}

// ---------------------------------------------------------------------------
// Criterion 4: brute-force oracle equivalences.
// ---------------------------------------------------------------------------

std::vector<double> dilate_oracle(const std::vector<double>& m, int H, int W, int win) {
  std::vector<double> out(size_t(H) * W, 0.0);
  const int r = win / 2;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double best = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < H && xx >= 0 && xx < W)
            best = std::max(best, m[size_t(yy) * W + xx]);
        }
      out[size_t(y) * W + x] = best;
    }
  return out;
}

std::vector<double> boundary_map_oracle(const std::vector<double>& y, int H, int W, int th0) {
  std::vector<double> inv(y.size());
  for (size_t i = 0; i < y.size(); ++i) inv[i] = 1.0 - y[i];
  std::vector<double> dil = dilate_oracle(inv, H, W, th0);
  std::vector<double> out(y.size());
  for (size_t i = 0; i < y.size(); ++i) out[i] = dil[i] * y[i];
  return out;
}

double boundary_loss_oracle(const Tensor<double>& probs, const Tensor<int32_t>& labels,
                            const std::vector<int>& classes, int th0, int th) {
  double total = 0;
  const int H = int(probs.h), W = int(probs.w);
  for (Eigen::Index ni = 0; ni < probs.n; ++ni) {
    double acc = 0;
    int cnt = 0;
    for (int cls : classes) {
      std::vector<double> pd(size_t(H) * W), gt(size_t(H) * W);
      bool gt_any = false, pd_any = false;
      for (Eigen::Index i = 0; i < probs.plane(); ++i) {
        pd[size_t(i)] = probs.plane_ptr(ni, cls)[i];
        gt[size_t(i)] = labels.plane_ptr(ni, 0)[i] == cls ? 1.0 : 0.0;
        gt_any = gt_any || gt[size_t(i)] > 0;
        pd_any = pd_any || pd[size_t(i)] > 0;
      }
      if (!gt_any && !pd_any) continue;
      auto pd_b = boundary_map_oracle(pd, H, W, th0);
      auto gt_b = boundary_map_oracle(gt, H, W, th0);
      auto pd_ext = dilate_oracle(pd_b, H, W, th);
      auto gt_ext = dilate_oracle(gt_b, H, W, th);
      double pd_sum = 0, gt_sum = 0, pc_num = 0, rc_num = 0;
      for (size_t i = 0; i < pd_b.size(); ++i) {
        pd_sum += pd_b[i];
        gt_sum += gt_b[i];
        pc_num += pd_b[i] * gt_ext[i];
        rc_num += gt_b[i] * pd_ext[i];
      }
      const double pc = pd_sum > 0 ? pc_num / pd_sum : 0.0;
      const double rc = gt_sum > 0 ? rc_num / gt_sum : 0.0;
      const double bf1 = pc + rc > 0 ? 2 * pc * rc / (pc + rc) : 0.0;
      acc += bf1;
      ++cnt;
    }
    total += cnt > 0 ? 1.0 - acc / cnt : 0.0;
  }
  return total / double(probs.n);
}

ConfusionCounts confusion_oracle(const Tensor<int32_t>& pred, const Tensor<int32_t>& gt, int cls) {
  ConfusionCounts c;
  for (Eigen::Index y = 0; y < pred.h; ++y)
    for (Eigen::Index x = 0; x < pred.w; ++x) {
      const int pv = pred.at(0, 0, y, x), gv = gt.at(0, 0, y, x);
      if (pv == cls)
        gv == cls ? ++c.tp : ++c.fp;
      else
        gv == cls ? ++c.fn : ++c.tn;
    }
  return c;
}

double cr_kernel(double u, int k) {
  const double u2 = u * u, u3 = u2 * u;
  switch (k) {
    case 0: return -0.5 * u3 + u2 - 0.5 * u;
    case 1: return 1.5 * u3 - 2.5 * u2 + 1;
    case 2: return -1.5 * u3 + 2 * u2 + 0.5 * u;
    default: return 0.5 * u3 - 0.5 * u2;
  }
}

double extended_sample(const Tensor<double>& f, Eigen::Index ni, Eigen::Index ci, long jy,
                       long jx) {
  const long H = f.h, W = f.w;
  if (jy < 0)
    return (1.0 - jy) * extended_sample(f, ni, ci, 0, jx) +
           double(jy) * extended_sample(f, ni, ci, 1, jx);
  if (jy > H - 1) {
    const double e = double(jy - (H - 1));
    return (1.0 + e) * extended_sample(f, ni, ci, H - 1, jx) -
           e * extended_sample(f, ni, ci, H - 2, jx);
  }
  if (jx < 0) return (1.0 - jx) * f.at(ni, ci, jy, 0) + double(jx) * f.at(ni, ci, jy, 1);
  if (jx > W - 1) {
    const double e = double(jx - (W - 1));
    return (1.0 + e) * f.at(ni, ci, jy, W - 1) - e * f.at(ni, ci, jy, W - 2);
  }
  return f.at(ni, ci, jy, jx);
}

Outcome criterion_oracles() {
  Rng rng(4001);
  LossConfig<double> lc;

  // Boundary loss vs the exhaustive-loop oracle on 200 random 8x8 hard masks.
  double worst_bd = 0;
  for (int t = 0; t < 200; ++t) {
    auto pd = random_labels(rng, 1, 8, 8, 3);
    auto gt = random_labels(rng, 1, 8, 8, 3);
    Graph<double> g;
    const double impl = g.val(boundary_loss(g, g.leaf(onehot_probs(pd, 3)), gt, lc)).data[0];
    const double orac =
        boundary_loss_oracle(onehot_probs(pd, 3), gt, lc.boundary_classes, lc.theta0, lc.theta);
    worst_bd = std::max(worst_bd, std::abs(impl - orac));
  }
  if (worst_bd > 1e-6) return fail(fmt("boundary vs oracle max |diff| %.2e", worst_bd));

  // Confusion counts vs the pixel-loop oracle on 100 random 16x16 pairs.
  for (int t = 0; t < 100; ++t) {
    auto pd = random_labels(rng, 1, 16, 16, 3);
    auto gt = random_labels(rng, 1, 16, 16, 3);
    for (int cls = 0; cls < 3; ++cls) {
      auto a = confusion(pd, gt, cls);
      auto b = confusion_oracle(pd, gt, cls);
      if (a.tp != b.tp || a.fp != b.fp || a.fn != b.fn || a.tn != b.tn)
        return fail(fmt("confusion mismatch trial %d class %d", t, cls));
    }
  }

  // Catmull-Rom upsampling vs direct kernel-formula evaluation.
  double worst_cr = 0;
  for (auto [n, c, h, w, factor] : {std::tuple{2, 2, 4, 6, 4}, std::tuple{1, 1, 7, 5, 2}}) {
    auto f = random_tensor(rng, n, c, h, w, -2.0, 2.0);
    Graph<double> g;
    const Tensor<double>& got = g.val(catmull_rom_upsample(g, g.leaf(f), factor));
    for (Eigen::Index ni = 0; ni < got.n; ++ni)
      for (Eigen::Index ci = 0; ci < got.c; ++ci)
        for (Eigen::Index oy = 0; oy < got.h; ++oy)
          for (Eigen::Index ox = 0; ox < got.w; ++ox) {
            const double ty = (double(oy) + 0.5) / factor - 0.5;
            const double tx = (double(ox) + 0.5) / factor - 0.5;
            const long iy = long(std::floor(ty)), ix = long(std::floor(tx));
            double acc = 0;
            for (int ky = 0; ky < 4; ++ky)
              for (int kx = 0; kx < 4; ++kx)
                acc += cr_kernel(ty - iy, ky) * cr_kernel(tx - ix, kx) *
                       extended_sample(f, ni, ci, iy - 1 + ky, ix - 1 + kx);
            worst_cr = std::max(worst_cr, std::abs(got.at(ni, ci, oy, ox) - factor * acc));
          }
  }
  if (worst_cr > 1e-6) return fail(fmt("catmull-rom vs formula max |diff| %.2e", worst_cr));

  // Integer-displacement warp vs the index oracle on interior pixels.
  auto img = random_tensor(rng, 1, 1, 8, 8, 0.0, 1.0);
  Tensor<double> dvf(1, 2, 8, 8);
  for (Eigen::Index i = 0; i < 64; ++i) {
    dvf.plane_ptr(0, 0)[i] = 2.0;
    dvf.plane_ptr(0, 1)[i] = 1.0;
  }
  Graph<double> g;
  const Tensor<double>& r = g.val(warp_bilinear(g, g.leaf(img), g.leaf(dvf)));
  for (Eigen::Index y = 0; y + 1 < 8; ++y)
    for (Eigen::Index x = 0; x + 2 < 8; ++x)
      if (r.at(0, 0, y, x) != img.at(0, 0, y + 1, x + 2))
        return fail(fmt("integer-shift warp differs at (%lld,%lld)", (long long)y, (long long)x));

  return pass(fmt("boundary |diff| %.1e over 200 masks; confusion exact over 100 pairs; "
                  "catmull-rom |diff| %.1e; integer-shift warp exact",
                  worst_bd, worst_cr));
}

// ---------------------------------------------------------------------------
// Criterion 5: metric identities plus the stored aggregation anchor.
// ---------------------------------------------------------------------------

Outcome criterion_metric_identities() {
  Rng rng(82);
  double worst = 0;
  for (int t = 0; t < 1000; ++t) {
    ConfusionCounts c;
    c.tp = 1 + (long long)rng.uniform_int(100);
    c.fp = (long long)rng.uniform_int(100);
    c.fn = (long long)rng.uniform_int(100);
    c.tn = (long long)rng.uniform_int(100);
    Scores s = scores(c);
    worst = std::max(worst, std::abs(s.dsc - 2 * s.ji / (1 + s.ji)));
    worst = std::max(worst,
                     std::abs(s.dsc - 2 * s.ppv * s.sensitivity / (s.ppv + s.sensitivity)));
  }
  if (worst > 1e-12) return fail(fmt("identity deviation %.2e", worst));

  CsvTable scores_tab = load_fixture("reference_scores.csv");
  for (size_t i = 0; i < scores_tab.rows.size(); ++i) {
    if (scores_tab.rows[i][0] == "vitro" && scores_tab.rows[i][2] == "hybresunet" &&
        scores_tab.rows[i][1] == "I") {
      const double m = (scores_tab.numbers("stone_dsc")[i] + scores_tab.numbers("laser_dsc")[i] +
                        scores_tab.numbers("stone_ji")[i] + scores_tab.numbers("laser_ji")[i]) /
                       4.0;
      if (std::abs(m - 0.8434) > 1e-4)
        return fail(fmt("anchor row mean %.5f vs 0.8434", m));
      return pass(fmt("1000 confusion tuples, max identity deviation %.1e; anchor mean %.4f", worst,
                      m));
    }
  }
  return fail("anchor row not found in reference_scores.csv");
}

// ---------------------------------------------------------------------------
// Criterion 6: registration recovery.
// ---------------------------------------------------------------------------

Outcome criterion_registration() {
  // Part a: a known 3-px horizontal translation of a smooth periodic pattern
  // must be recovered as the mean interior displacement within +-0.5 px.
  const int n = 64;
  const double shift = 3.0;
  auto f = [](double x, double y) {
    const double pi = std::numbers::pi;
    return 0.5 + 0.2 * std::sin(2 * pi * x / 16.0) + 0.15 * std::cos(2 * pi * y / 16.0) +
           0.1 * std::sin(2 * pi * (x + y) / 32.0);
  };
  Tensor<float> src(1, 1, n, n), tgt(1, 1, n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      src.at(0, 0, y, x) = float(f(x, y));
      tgt.at(0, 0, y, x) = float(f(x + shift, y));
    }
  LossConfig<float> lc;
  DVFNetConfig dc;
  dc.widths = {8, 8, 8, 8};
  dc.refine_width = 8;
  auto net = build_dvfnet<float>(dc, 21);
  Adam<float> opt(net.params, 5e-3);
  for (int s = 0; s < 300; ++s) {
    Graph<float> g;
    Ctx<float> ctx(g, true);
    auto pred = net.predict(ctx, g.leaf(src), g.leaf(tgt));
    Var loss = add(g, ncc_pair_loss(g, g.leaf(tgt), pred.warped, lc.epsilon),
                   scale(g, field_roughness(g, pred.dvf), 2e-4f));
    g.backward(loss);
    ctx.harvest();
    opt.step();
  }
  double mx = 0, my = 0;
  {
    Graph<float> g;
    Ctx<float> ctx(g, false);
    auto pred = net.predict(ctx, g.leaf(src), g.leaf(tgt));
    const Tensor<float>& d = g.val(pred.dvf);
    int cnt = 0;
    for (int y = 8; y < n - 8; ++y)
      for (int x = 8; x < n - 8; ++x) {
        mx += d.at(0, 0, y, x);
        my += d.at(0, 1, y, x);
        ++cnt;
      }
    mx /= cnt;
    my /= cnt;
  }
  if (std::abs(mx - shift) > 0.5 || std::abs(my) > 0.5)
    return fail(fmt("translation recovered as (%.3f, %.3f), want (3+-0.5, 0+-0.5)", mx, my));

  // Part b: per-clip instance optimization on generator-deformed clips must
  // halve the interior endpoint error relative to the zero-field baseline.
  SceneParams sp;
  sp.size = 64;
  sp.distractor_count = 10;
  sp.debris_density = 8;
  sp.motion_px = 1.5;
  std::ostringstream sink;
  const int margin = 4;
  double tot_epe = 0, tot_base = 0;
  std::string per_clip;
  for (int ci = 0; ci < 4; ++ci) {
    SceneDescription sc = generate_scene(hash_combine(1234, uint64_t(ci) + 1), sp, sink);
    ClipSequence clip = render_clip(sc, "reg");
    struct P {
      Tensor<float> src, tgt, flow;
    };
    std::vector<P> prs;
    prs.push_back(
        {to_grayscale(clip.frames[0]), to_grayscale(clip.frames[2]), true_flow(sc, 3, 1)});
    prs.push_back(
        {to_grayscale(clip.frames[2]), to_grayscale(clip.frames[4]), true_flow(sc, 5, 3)});
    auto cnet = build_dvfnet<float>(dc, 77 + uint64_t(ci));
    Adam<float> copt(cnet.params, 5e-3);
    for (int s = 0; s < 400; ++s) {
      auto& p = prs[size_t(s % 2)];
      Graph<float> g;
      Ctx<float> ctx(g, true);
      auto pred = cnet.predict(ctx, g.leaf(p.src), g.leaf(p.tgt));
      Var loss = add(g, ncc_pair_loss(g, g.leaf(p.tgt), pred.warped, lc.epsilon),
                     scale(g, field_roughness(g, pred.dvf), 5e-5f));
      g.backward(loss);
      ctx.harvest();
      copt.step();
    }
    double epe = 0, base = 0;
    for (auto& p : prs) {
      Graph<float> g;
      Ctx<float> ctx(g, false);
      auto pred = cnet.predict(ctx, g.leaf(p.src), g.leaf(p.tgt));
      const Tensor<float>& d = g.val(pred.dvf);
      for (int y = margin; y < int(d.h) - margin; ++y)
        for (int x = margin; x < int(d.w) - margin; ++x) {
          const Eigen::Index i = Eigen::Index(y) * d.w + x;
          epe += std::hypot(d.plane_ptr(0, 0)[i] - p.flow.plane_ptr(0, 0)[i],
                            d.plane_ptr(0, 1)[i] - p.flow.plane_ptr(0, 1)[i]);
          base += std::hypot(double(p.flow.plane_ptr(0, 0)[i]),
                             double(p.flow.plane_ptr(0, 1)[i]));
        }
    }
    per_clip += fmt("%.2f ", epe / base);
    tot_epe += epe;
    tot_base += base;
  }
  const double ratio = tot_epe / tot_base;
  if (ratio > 0.5) return fail(fmt("EPE ratio %.3f > 0.5 (per clip: %s)", ratio, per_clip.c_str()));
  return pass(fmt("translation (%.2f, %.2f) px; clip EPE ratio %.3f <= 0.5 (per clip: %s)", mx, my,
                  ratio, per_clip.c_str()));
}

// ---------------------------------------------------------------------------
// Criteria 7 & 8: desk-scale training runs on generated datasets.
// ---------------------------------------------------------------------------

std::string dataset_dir(const std::string& tag, const SceneParams& sp, int count, uint64_t seed) {
  const std::string root = std::string(kScratchDir) + "/" + tag;
  if (!std::filesystem::exists(root + "/manifest.csv")) {
    std::ostringstream sink;
    generate_synthetic_dataset(root, count, sp, seed, sink);
  }
  return root;
}

struct ArmResult {
  double mean_dsc = 0;  // mean of stone and laser DSC on the test split
  double stone = 0, laser = 0;
};

ArmResult run_arm(const std::string& root, const std::vector<ClipSequence>& test_clips,
                  double alpha, double beta, double zeta, int width, int epochs) {
  PipelineConfig cfg;
  cfg.seg1.base_width = width;
  cfg.seg2.base_width = width;
  cfg.dvfnet.widths = {8, 8, 8, 8};
  cfg.dvfnet.refine_width = 8;
  cfg.epochs = epochs;
  cfg.seed = 7;
  cfg.loss.alpha = alpha;
  cfg.loss.beta = beta;
  cfg.loss.zeta = zeta;
  std::ostringstream log;
  auto out = train<float>(cfg, root, "", log);
  MetricsReport rep = validate_bundle(out.bundle, test_clips);
  ArmResult r;
  r.stone = rep.class_mean(1).dsc;
  r.laser = rep.class_mean(2).dsc;
  r.mean_dsc = 0.5 * (r.stone + r.laser);
  return r;
}

Outcome criterion_loss_ablation() {
  SceneParams sp;
  sp.size = 64;
  sp.debris_density = 96;   // debris-heavy scenes make registration matter
  sp.motion_px = 2.0;
  const std::string root = dataset_dir("ablation", sp, 60, 2025);
  auto test_clips = load_clip_dataset(root, "test");
  ArmResult fl = run_arm(root, test_clips, 0, 0, 0, 8, 15);
  ArmResult flb = run_arm(root, test_clips, 1, 0, 0, 8, 15);
  ArmResult full = run_arm(root, test_clips, 1, 0.5, 1, 8, 15);
  const bool ordered = fl.mean_dsc <= flb.mean_dsc && flb.mean_dsc <= full.mean_dsc;
  const bool margin = full.mean_dsc >= fl.mean_dsc + 0.02;
  if (!ordered || !margin)
    return fail(fmt("FL %.4f, FL+boundary %.4f, full %.4f (ordered=%d, margin %.4f)", fl.mean_dsc,
                    flb.mean_dsc, full.mean_dsc, int(ordered), full.mean_dsc - fl.mean_dsc));
  return pass(fmt("test mean DSC: FL %.4f <= FL+boundary %.4f <= full %.4f; full-FL %.4f >= 0.02",
                  fl.mean_dsc, flb.mean_dsc, full.mean_dsc, full.mean_dsc - fl.mean_dsc));
}

Outcome criterion_end_to_end() {
  SceneParams sp;
  sp.size = 64;
  const std::string root = dataset_dir("segmentation", sp, 60, 2024);
  auto test_clips = load_clip_dataset(root, "test");
  ArmResult full = run_arm(root, test_clips, 1, 0.5, 1, 8, 40);
  if (full.mean_dsc < 0.85)
    return fail(fmt("test mean(DSC stone, laser) %.4f < 0.85 (stone %.4f laser %.4f)",
                    full.mean_dsc, full.stone, full.laser));

  // Overfit-one-batch: the compound loss must collapse on a fixed batch.
  auto train_clips = load_clip_dataset(root, "train");
  PipelineConfig cfg;
  cfg.seg1.base_width = 8;
  cfg.seg2.base_width = 8;
  cfg.dvfnet.widths = {8, 8, 8, 8};
  cfg.dvfnet.refine_width = 8;
  cfg.seed = 11;
  auto b = build_bundle<float>(cfg);
  Trainer<float> tr(b);
  std::vector<const ClipSequence*> batch{&train_clips[0], &train_clips[1]};
  double first = 0, last = 0;
  for (int s = 0; s < 50; ++s) {
    LossBreakdown lb = tr.step(batch);
    if (s == 0) first = lb.total;
    last = lb.total;
  }
  if (!(last <= 0.10 * first))
    return fail(fmt("overfit-one-batch %.4f -> %.4f (ratio %.3f > 0.10)", first, last,
                    last / first));
  return pass(fmt("test stone %.4f laser %.4f mean %.4f >= 0.85; one-batch loss %.4f -> %.4f "
                  "(ratio %.3f <= 0.10)",
                  full.stone, full.laser, full.mean_dsc, first, last, last / first));
}

// ---------------------------------------------------------------------------
// Criterion 9: inference-path purity and the timing report format.
// ---------------------------------------------------------------------------

Outcome criterion_inference_purity() {
  PipelineConfig cfg;
  cfg.seg1.base_width = 8;
  cfg.seg2.base_width = 8;
  cfg.dvfnet.widths = {8, 8, 8, 8};
  cfg.dvfnet.refine_width = 8;
  cfg.seed = 5;
  auto b = build_bundle<float>(cfg);

  Rng rng(905);
  Tensor<float> frame(1, 3, 64, 64);
  for (Eigen::Index i = 0; i < frame.size(); ++i) frame.data[i] = float(rng.uniform(0.0, 1.0));

  for (int i = 0; i < 5; ++i) {
    auto inf = infer_frame(b, frame);
    for (Eigen::Index k = 0; k < inf.mask.size(); ++k)
      if (inf.mask.data[k] < 0 || inf.mask.data[k] > 2) return fail("mask label outside {0,1,2}");
  }
  BenchmarkResult r = benchmark_inference(b, frame, 10);
  if (b.dvf_a.forward_count != 0 || b.dvf_b.forward_count != 0)
    return fail(fmt("registration nets ran during inference (counts %lld, %lld)",
                    (long long)b.dvf_a.forward_count, (long long)b.dvf_b.forward_count));
  if (!(r.frames == 10 && r.seconds > 0))
    return fail(fmt("benchmark returned frames=%d seconds=%.6f", r.frames, r.seconds));
  if (std::abs(r.fps - 10.0 / r.seconds) > 1e-9 * r.fps)
    return fail("fps is not frames/seconds");

  char line[128];
  std::snprintf(line, sizeof line, "%-12s %8.4f s / %d images (%.2f fps)",
                SegNetConfig::variant_name(b.cfg.seg2.variant).c_str(), r.seconds, r.frames,
                r.fps);
  const std::regex pattern(R"(^[a-z0-9-]+\s+\d+\.\d{4} s / 10 images \(\d+\.\d{2} fps\)$)");
  if (!std::regex_match(std::string(line), pattern))
    return fail(std::string("timing line has unexpected shape: ") + line);
  return pass(fmt("15 inferences, both registration counters 0; report \"%s\"", line));
}

// ---------------------------------------------------------------------------
// Criterion 10: determinism of the training loop.
// ---------------------------------------------------------------------------

Outcome criterion_determinism() {
  SceneParams sp;
  sp.size = 32;
  const std::string root = dataset_dir("determinism", sp, 10, 77);
  PipelineConfig cfg;
  cfg.seg1.base_width = 8;
  cfg.seg2.base_width = 8;
  cfg.dvfnet.widths = {4, 4, 4, 4};
  cfg.dvfnet.refine_width = 4;
  cfg.epochs = 3;
  cfg.seed = 9;
  std::ostringstream log1, log2;
  auto a = train<float>(cfg, root, "", log1);
  auto b = train<float>(cfg, root, "", log2);
  if (a.val_curve.size() != b.val_curve.size()) return fail("val curve lengths differ");
  for (size_t i = 0; i < a.val_curve.size(); ++i)
    if (a.val_curve[i] != b.val_curve[i])
      return fail(fmt("val curve differs at epoch %zu: %.17g vs %.17g", i + 1, a.val_curve[i],
                      b.val_curve[i]));
  if (a.losses_csv != b.losses_csv) return fail("per-step loss logs differ");
  if (a.val_csv != b.val_csv) return fail("validation logs differ");

  // The checkpoint header must record the determinism mode.
  const std::string path = std::string(kScratchDir) + "/determinism/bundle.lsb";
  save_bundle(a.bundle, path);
  std::ifstream is(path, std::ios::binary);
  char magic[4];
  uint32_t version = 0;
  uint64_t len = 0;
  is.read(magic, 4);
  is.read(reinterpret_cast<char*>(&version), 4);
  is.read(reinterpret_cast<char*>(&len), 8);
  std::string hs(len, '\0');
  is.read(hs.data(), std::streamsize(len));
  auto header = nlohmann::json::parse(hs);
  if (header.value("deterministic", false) != true)
    return fail("bundle header does not record deterministic mode");
  return pass(fmt("two runs bit-identical over %zu epochs (loss log %zu bytes); "
                  "bundle records deterministic=true",
                  a.val_curve.size(), a.losses_csv.size()));
}

}  // namespace

int main(int argc, char** argv) {
  const int only = argc > 1 ? std::atoi(argv[1]) : 0;
  std::filesystem::remove_all(kScratchDir);
  std::filesystem::create_directories(kScratchDir);

  struct Criterion {
    int id;
    const char* title;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "reference fixture tables", criterion_fixtures},
      {2, "loss identity suite", criterion_loss_identities},
      {3, "gradient checks vs central differences", criterion_gradients},
      {4, "oracle equivalences", criterion_oracles},
      {5, "metric identities", criterion_metric_identities},
      {6, "registration recovery", criterion_registration},
      {7, "loss-ablation ordering", criterion_loss_ablation},
      {8, "end-to-end synthetic segmentation", criterion_end_to_end},
      {9, "inference-path purity and timing report", criterion_inference_purity},
      {10, "training determinism", criterion_determinism},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (only != 0 && c.id != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] %d. %s: %s (%.1fs)\n", o.ok ? "PASS" : "FAIL", c.id, c.title,
                o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.ok) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
