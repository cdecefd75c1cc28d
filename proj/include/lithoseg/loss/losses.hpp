#pragma once

#include <vector>

#include "lithoseg/core/ops.hpp"
#include "lithoseg/core/pool.hpp"

namespace lithoseg {

template <class S>
struct LossConfig {
  S gamma = S(2);          // focal exponent
  S alpha = S(1);          // boundary weight
  S beta = S(0.5);         // similarity weight
  S zeta = S(1);           // smoothness weight
  int theta0 = 3;          // boundary extraction window
  int theta = 5;           // boundary tolerance window
  S epsilon = S(1e-3);     // variance floor inside the NCC denominator
  S prob_floor = S(1e-7);  // probability clamp inside the focal log
  std::vector<int> boundary_classes = {1, 2};  // background excluded by default
};

struct LossBreakdown {
  double focal = 0, boundary = 0, similarity = 0, smoothness = 0, total = 0;
};

// Per-(sample, class) boundary quality, kept for reporting.
struct BoundaryEntry {
  int sample = 0;
  int cls = 0;
  double precision = 0, recall = 0, f_measure = 0;
  bool skipped = false;
};

// (N,1,H,W) map with 1 where labels == cls.
template <class S>
Tensor<S> class_map(const Tensor<int32_t>& labels, int cls) {
  Tensor<S> out(labels.n, 1, labels.h, labels.w);
  for (Eigen::Index i = 0; i < labels.size(); ++i)
    out.data[i] = labels.data[i] == cls ? S(1) : S(0);
  return out;
}

// Focal loss: mean over all pixels of -(1 - p_y)^gamma * log(p_y), where p_y
// is the predicted probability of the true class, clamped away from 0 and 1.
template <class S>
Var focal_loss(Graph<S>& g, Var probs, const Tensor<int32_t>& labels, S gamma,
               S prob_floor = S(1e-7)) {
  Var p = clamp(g, gather_label(g, probs, labels), prob_floor, S(1) - prob_floor);
  Var one_minus = add_scalar(g, neg(g, p), S(1));
  Var term = mul(g, pow_scalar(g, one_minus, gamma), logv(g, p));
  return neg(g, mean_all(g, term));
}

// Boundary of a soft occupancy map: dilate(1 - y, theta0) - (1 - y). The
// dilation clamps its window at the frame edge (replicate padding), so pixels
// of a region touching the border are not counted as boundary.
template <class S>
Var extract_boundary(Graph<S>& g, Var y, int theta0) {
  Var inv = add_scalar(g, neg(g, y), S(1));
  return sub(g, maxpool_same(g, inv, theta0), inv);
}

// Boundary F-measure loss. Per sample and class: precision = overlap of the
// predicted boundary with the tolerance-dilated truth boundary, recall vice
// versa, combined as 2PR/(P+R); the loss is one minus the per-sample mean over
// contributing classes, averaged over the batch. Conventions, frozen together
// with the test oracle: a zero denominator makes the corresponding P or R (or
// B) zero, and a (sample, class) pair whose boundary is empty on both sides is
// skipped; a sample with no contributing class adds loss 0.
template <class S>
Var boundary_loss(Graph<S>& g, Var probs, const Tensor<int32_t>& labels,
                  const LossConfig<S>& cfg, std::vector<BoundaryEntry>* report = nullptr) {
  const Tensor<S>& P = g.val(probs);
  check(labels.n == P.n && labels.h == P.h && labels.w == P.w,
        "boundary_loss: label shape mismatch");
  for (int c : cfg.boundary_classes)
    check(c >= 0 && c < P.c, "boundary_loss: class index " + std::to_string(c) + " out of range");

  std::vector<Var> sample_losses;
  for (Eigen::Index ni = 0; ni < P.n; ++ni) {
    Var probs_n = slice_n(g, probs, ni, 1);
    Tensor<int32_t> lab_n(1, 1, labels.h, labels.w);
    std::copy_n(labels.plane_ptr(ni, 0), labels.plane(), lab_n.plane_ptr(0, 0));

    std::vector<Var> bs;
    for (int c : cfg.boundary_classes) {
      Var y_pd = slice_c(g, probs_n, c, 1);
      Var y_gt = g.leaf(class_map<S>(lab_n, c));
      Var pd_b = extract_boundary(g, y_pd, cfg.theta0);
      Var gt_b = extract_boundary(g, y_gt, cfg.theta0);
      Var pd_ext = maxpool_same(g, pd_b, cfg.theta);
      Var gt_ext = maxpool_same(g, gt_b, cfg.theta);

      Var den_p = sum_all(g, pd_b);
      Var den_r = sum_all(g, gt_b);
      const double dp = double(g.val(den_p).data[0]);
      const double dr = double(g.val(den_r).data[0]);

      BoundaryEntry entry;
      entry.sample = int(ni);
      entry.cls = c;
      if (dp == 0.0 && dr == 0.0) {
        entry.skipped = true;
        if (report) report->push_back(entry);
        continue;
      }
      Var prec = dp > 0.0 ? div(g, sum_all(g, mul(g, pd_b, gt_ext)), den_p)
                          : g.leaf(Tensor<S>::scalar(S(0)));
      Var rec = dr > 0.0 ? div(g, sum_all(g, mul(g, gt_b, pd_ext)), den_r)
                         : g.leaf(Tensor<S>::scalar(S(0)));
      const double pv = double(g.val(prec).data[0]);
      const double rv = double(g.val(rec).data[0]);
      Var bf = (pv + rv) > 0.0
                   ? div(g, scale(g, mul(g, prec, rec), S(2)), add(g, prec, rec))
                   : g.leaf(Tensor<S>::scalar(S(0)));
      entry.precision = pv;
      entry.recall = rv;
      entry.f_measure = double(g.val(bf).data[0]);
      if (report) report->push_back(entry);
      bs.push_back(bf);
    }

    if (bs.empty()) {
      sample_losses.push_back(g.leaf(Tensor<S>::scalar(S(0))));
      continue;
    }
    Var acc = bs[0];
    for (size_t i = 1; i < bs.size(); ++i) acc = add(g, acc, bs[i]);
    Var mean_b = scale(g, acc, S(1) / S(bs.size()));
    sample_losses.push_back(add_scalar(g, neg(g, mean_b), S(1)));
  }

  Var total = sample_losses[0];
  for (size_t i = 1; i < sample_losses.size(); ++i) total = add(g, total, sample_losses[i]);
  return scale(g, total, S(1) / S(sample_losses.size()));
}

// Standardizes per sample: (x - mean) / sqrt(var + epsilon^2), biased variance.
template <class S>
Var standardize(Graph<S>& g, Var x, S epsilon) {
  Var m = mean_per_sample(g, x);
  Var d = sub(g, x, m);
  Var v = mean_per_sample(g, sq(g, d));
  Var den = pow_scalar(g, add_scalar(g, v, epsilon * epsilon), S(0.5));
  return div(g, d, den);
}

// Similarity loss for one registered pair: (1/2N) * sum of squared differences
// of the standardized images, averaged over the batch.
template <class S>
Var ncc_pair_loss(Graph<S>& g, Var source, Var warped, S epsilon) {
  check(g.val(source).same_shape(g.val(warped)), "ncc_pair_loss: shape mismatch");
  Var zs = standardize(g, source, epsilon);
  Var zw = standardize(g, warped, epsilon);
  return scale(g, mean_all(g, mean_per_sample(g, sq(g, sub(g, zs, zw)))), S(0.5));
}

// Total similarity over the two registered pairs.
template <class S>
Var ncc_loss(Graph<S>& g, Var src1, Var warped1, Var src2, Var warped2, S epsilon) {
  return add(g, ncc_pair_loss(g, src1, warped1, epsilon),
             ncc_pair_loss(g, src2, warped2, epsilon));
}

// Unnormalized sum of squared forward differences of one displacement field,
// per sample, averaged over the batch.
template <class S>
Var field_roughness(Graph<S>& g, Var f) {
  Var sx = mean_all(g, sum_per_sample(g, sq(g, diff_x(g, f))));
  Var sy = mean_all(g, sum_per_sample(g, sq(g, diff_y(g, f))));
  return add(g, sx, sy);
}

// Smoothness loss over both displacement fields.
template <class S>
Var smoothness_loss(Graph<S>& g, Var dvf_a, Var dvf_b) {
  return add(g, field_roughness(g, dvf_a), field_roughness(g, dvf_b));
}

// Inputs to the compound objective; the similarity/smoothness terms take the
// registration tensors, the focal/boundary terms the fused probability map.
template <class S>
struct CompoundInputs {
  Var probs;                  // fused (N,num_classes,H,W) probability map
  Tensor<int32_t> labels;     // (N,1,H,W)
  Var src1, warped1;          // first registered pair
  Var src2, warped2;          // second registered pair
  Var dvf1, dvf2;             // displacement fields
};

template <class S>
struct CompoundResult {
  Var total;
  LossBreakdown breakdown;
  std::vector<BoundaryEntry> boundary_report;
};

// total = focal + alpha * boundary + beta * similarity + zeta * smoothness.
template <class S>
CompoundResult<S> compound_loss(Graph<S>& g, const CompoundInputs<S>& in,
                                const LossConfig<S>& cfg) {
  CompoundResult<S> r;
  Var fl = focal_loss(g, in.probs, in.labels, cfg.gamma, cfg.prob_floor);
  Var bd = boundary_loss(g, in.probs, in.labels, cfg, &r.boundary_report);
  Var sim = ncc_loss(g, in.src1, in.warped1, in.src2, in.warped2, cfg.epsilon);
  Var smo = smoothness_loss(g, in.dvf1, in.dvf2);
  r.total = add(g, add(g, fl, scale(g, bd, cfg.alpha)),
                add(g, scale(g, sim, cfg.beta), scale(g, smo, cfg.zeta)));
  r.breakdown.focal = double(g.val(fl).data[0]);
  r.breakdown.boundary = double(g.val(bd).data[0]);
  r.breakdown.similarity = double(g.val(sim).data[0]);
  r.breakdown.smoothness = double(g.val(smo).data[0]);
  r.breakdown.total = double(g.val(r.total).data[0]);
  return r;
}

}  // namespace lithoseg
