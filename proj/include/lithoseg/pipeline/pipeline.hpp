#pragma once

#include <chrono>
#include <iostream>
#include <numeric>
#include <sstream>

#include "lithoseg/data/augment.hpp"
#include "lithoseg/data/dataset.hpp"
#include "lithoseg/metrics/metrics.hpp"
#include "lithoseg/nn/adam.hpp"
#include "lithoseg/pipeline/bundle.hpp"

namespace lithoseg {

inline AugmentationPolicy augmentation_preset(const std::string& name) {
  if (name == "none") return AugmentationPolicy::none();
  if (name == "rbc_equalize") return AugmentationPolicy::rbc_equalize();
  if (name == "rbc_clahe") return AugmentationPolicy::rbc_clahe();
  if (name == "full") return AugmentationPolicy::full();
  throw std::invalid_argument("unknown augmentation preset: " + name);
}

// ---------------------------------------------------------------------------
// One optimization step over a clip batch
// ---------------------------------------------------------------------------

namespace detail {

// Stacks the training-relevant views of a clip batch into batched tensors:
// grayscale frames 1/3/5, the RGB frame 5, and the frame-5 labels.
template <class S>
struct BatchTensors {
  Tensor<S> i1_gray, i3_gray, i5_gray, i5_rgb;
  Tensor<int32_t> labels;
};

template <class S>
BatchTensors<S> stack_batch(const std::vector<const ClipSequence*>& batch) {
  check(!batch.empty(), "train_step: empty batch");
  const Eigen::Index B = Eigen::Index(batch.size());
  const Eigen::Index H = batch[0]->mask.h, W = batch[0]->mask.w;
  BatchTensors<S> t{Tensor<S>(B, 1, H, W), Tensor<S>(B, 1, H, W), Tensor<S>(B, 1, H, W),
                    Tensor<S>(B, 3, H, W), Tensor<int32_t>(B, 1, H, W)};
  for (Eigen::Index bi = 0; bi < B; ++bi) {
    const ClipSequence& clip = *batch[size_t(bi)];
    check(clip.mask.h == H && clip.mask.w == W, "train_step: clip sizes differ within batch");
    auto copy_gray = [&](Tensor<S>& dst, int frame) {
      ImageF g = to_grayscale(clip.frames[size_t(frame)]);
      for (Eigen::Index i = 0; i < H * W; ++i) dst.plane_ptr(bi, 0)[i] = S(g.data[i]);
    };
    copy_gray(t.i1_gray, 0);
    copy_gray(t.i3_gray, 2);
    copy_gray(t.i5_gray, 4);
    for (Eigen::Index c = 0; c < 3; ++c)
      for (Eigen::Index i = 0; i < H * W; ++i)
        t.i5_rgb.plane_ptr(bi, c)[i] = S(clip.frames[4].plane_ptr(0, c)[i]);
    for (Eigen::Index i = 0; i < H * W; ++i)
      t.labels.plane_ptr(bi, 0)[i] = clip.mask.plane_ptr(0, 0)[i];
  }
  return t;
}

}  // namespace detail

// Holds the four optimizers alongside the bundle they update. One step runs
// both registrations, both segmentation branches, the fused compound loss,
// and a joint parameter update.
template <class S>
struct Trainer {
  TrainedBundle<S>& b;
  Adam<S> opt_seg1, opt_seg2, opt_dvf_a, opt_dvf_b;
  int64_t step_count = 0;

  explicit Trainer(TrainedBundle<S>& bundle)
      : b(bundle),
        opt_seg1(bundle.seg1.params, bundle.cfg.lr, bundle.cfg.beta1, bundle.cfg.beta2),
        opt_seg2(bundle.seg2.params, bundle.cfg.lr, bundle.cfg.beta1, bundle.cfg.beta2),
        opt_dvf_a(bundle.dvf_a.params, bundle.cfg.lr, bundle.cfg.beta1, bundle.cfg.beta2),
        opt_dvf_b(bundle.dvf_b.params, bundle.cfg.lr, bundle.cfg.beta1, bundle.cfg.beta2) {}

  // Builds the fused probability map for a batch on the given graph. Exposed
  // separately so invariants about it (probability normalization, wiring
  // effects) are testable without an optimizer step.
  struct ForwardResult {
    Var fused;                      // (B,3,H,W) averaged probability map
    typename DVFNet<S>::Prediction pa, pb;
    Var i1, i3;                     // leaves the similarity terms compare against
  };
  ForwardResult forward(Ctx<S>& ctx, const detail::BatchTensors<S>& t) const {
    Graph<S>& g = ctx.g;
    Var i1 = g.leaf(t.i1_gray), i3 = g.leaf(t.i3_gray), i5g = g.leaf(t.i5_gray);
    auto pa = b.dvf_a.predict(ctx, /*source=*/i3, /*target=*/i1);
    auto pb = b.dvf_b.predict(ctx, /*source=*/i5g, /*target=*/i3);
    Var branch1_in = b.cfg.wiring == PipelineConfig::Wiring::dvf_input
                         ? mean2(g, pa.dvf, pb.dvf)
                         : mean2(g, pa.warped, pb.warped);
    if (!b.cfg.end_to_end) branch1_in = g.leaf(g.val(branch1_in));  // detach
    Var p1 = b.seg1.forward(ctx, branch1_in);
    Var p2 = b.seg2.forward(ctx, g.leaf(t.i5_rgb));
    return {mean2(g, p1, p2), pa, pb, i1, i3};
  }

  LossBreakdown step(const std::vector<const ClipSequence*>& batch) {
    detail::BatchTensors<S> t = detail::stack_batch<S>(batch);
    Graph<S> g;
    Ctx<S> ctx(g, /*training=*/true);
    ForwardResult f = forward(ctx, t);
    CompoundInputs<S> in;
    in.probs = f.fused;
    in.labels = t.labels;
    in.src1 = f.i1;
    in.warped1 = f.pa.warped;
    in.src2 = f.i3;
    in.warped2 = f.pb.warped;
    in.dvf1 = f.pa.dvf;
    in.dvf2 = f.pb.dvf;
    CompoundResult<S> res = compound_loss(g, in, loss_config_cast<S>(b.cfg.loss));
    g.backward(res.total);
    ctx.harvest();
    opt_seg1.step();
    opt_seg2.step();
    opt_dvf_a.step();
    opt_dvf_b.step();
    ++step_count;
    return res.breakdown;
  }
};

// ---------------------------------------------------------------------------
// Frame-wise inference (RGB branch only)
// ---------------------------------------------------------------------------

template <class S>
struct FrameInference {
  MaskI mask;       // argmax labels; ties resolved to the lowest class index
  Tensor<S> probs;  // (1,3,H,W) softmax map
};

template <class S>
FrameInference<S> infer_frame(TrainedBundle<S>& b, const Tensor<S>& frame) {
  check(frame.n == 1 && frame.c == 3, "infer_frame: expected one RGB frame");
  Tensor<S> probs = b.seg2.infer(frame);
  MaskI mask(1, 1, frame.h, frame.w);
  for (Eigen::Index i = 0; i < frame.h * frame.w; ++i) {
    int best = 0;
    for (int c = 1; c < kNumClasses; ++c)
      if (probs.plane_ptr(0, c)[i] > probs.plane_ptr(0, best)[i]) best = c;
    mask.data[i] = best;
  }
  return {std::move(mask), std::move(probs)};
}

struct BenchmarkResult {
  int frames = 0;
  double seconds = 0;
  double fps = 0;
};

// Wall-clock over n sequential frame inferences after 3 warm-up calls.
template <class S>
BenchmarkResult benchmark_inference(TrainedBundle<S>& b, const Tensor<S>& frame, int n) {
  check(n >= 1, "benchmark: need at least one frame");
  for (int i = 0; i < 3; ++i) infer_frame(b, frame);
  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < n; ++i) infer_frame(b, frame);
  auto t1 = std::chrono::steady_clock::now();
  double seconds = std::chrono::duration<double>(t1 - t0).count();
  return {n, seconds, double(n) / std::max(seconds, 1e-12)};
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

// Weight snapshot used to keep the best-validation epoch.
namespace detail {

template <class S>
struct WeightSnapshot {
  std::vector<Tensor<S>> values;

  template <class Net>
  void grab(const Net& net) {
    for (const auto& p : net.params.items) values.push_back(p.value);
    for (const auto& s : net.bn) {
      values.push_back(s.stats.running_mean);
      values.push_back(s.stats.running_var);
    }
  }
  template <class Net>
  size_t put(Net& net, size_t i) const {
    for (auto& p : net.params.items) p.value = values[i++];
    for (auto& s : net.bn) {
      s.stats.running_mean = values[i++];
      s.stats.running_var = values[i++];
    }
    return i;
  }
};

template <class S>
WeightSnapshot<S> take_snapshot(const TrainedBundle<S>& b) {
  WeightSnapshot<S> snap;
  snap.grab(b.seg1);
  snap.grab(b.seg2);
  snap.grab(b.dvf_a);
  snap.grab(b.dvf_b);
  return snap;
}

template <class S>
void restore_snapshot(TrainedBundle<S>& b, const WeightSnapshot<S>& snap) {
  size_t i = 0;
  i = snap.put(b.seg1, i);
  i = snap.put(b.seg2, i);
  i = snap.put(b.dvf_a, i);
  i = snap.put(b.dvf_b, i);
  check(i == snap.values.size(), "snapshot: tensor count mismatch");
}

}  // namespace detail

// Per-epoch validation: frame-wise inference on frame 5 of every clip,
// scored against the clip mask for the stone and laser classes.
template <class S>
MetricsReport validate_bundle(TrainedBundle<S>& b, const std::vector<ClipSequence>& clips) {
  check(!clips.empty(), "validate: empty clip list");
  std::vector<Tensor<int32_t>> pred, gt;
  std::vector<std::string> ids;
  for (const auto& clip : clips) {
    Tensor<S> frame = clip.frames[4].template cast<S>();
    pred.push_back(infer_frame(b, frame).mask);
    gt.push_back(clip.mask);
    ids.push_back(clip.clip_id);
  }
  return evaluate_masks(pred, gt, ids);
}

template <class S>
struct TrainOutput {
  TrainedBundle<S> bundle;
  std::vector<double> val_curve;  // validation mean(DSC,JI) per epoch
  std::string losses_csv;         // step,focal,boundary,similarity,smoothness,total
  std::string val_csv;            // epoch,stone_dsc,stone_ji,laser_dsc,laser_ji,mean
};

// Full training run: per-epoch shuffled batches with seeded augmentation,
// per-epoch validation, and best-epoch weight selection (ties keep the
// earlier epoch). CSV logs are written under out_dir when it is non-empty.
template <class S>
TrainOutput<S> train(const PipelineConfig& cfg_in, const std::string& dataset_root,
                     const std::string& out_dir = "", std::ostream& log = std::cerr) {
  TrainOutput<S> out;
  out.bundle = build_bundle<S>(cfg_in);
  TrainedBundle<S>& b = out.bundle;
  const PipelineConfig& cfg = b.cfg;

  std::vector<ClipSequence> train_clips = load_clip_dataset(dataset_root, "train");
  std::vector<ClipSequence> val_clips = load_clip_dataset(dataset_root, "val");
  AugmentationPolicy policy = augmentation_preset(cfg.augmentation);

  std::ostringstream losses_csv, val_csv;
  losses_csv << "step,focal,boundary,similarity,smoothness,total\n";
  val_csv << "epoch,stone_dsc,stone_ji,laser_dsc,laser_ji,mean\n";

  Trainer<S> trainer(b);
  Rng shuffle_rng(hash_combine(cfg.seed, 0x5f0f1eULL));
  double best_mean = -1.0;
  int best_epoch = 0;
  detail::WeightSnapshot<S> best_weights;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<size_t> order(train_clips.size());
    std::iota(order.begin(), order.end(), size_t(0));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[size_t(shuffle_rng.uniform_int(uint64_t(i)))]);

    double epoch_loss = 0;
    int epoch_steps = 0;
    for (size_t start = 0; start < order.size(); start += size_t(cfg.batch_size)) {
      std::vector<ClipSequence> aug;
      for (size_t k = start; k < std::min(order.size(), start + size_t(cfg.batch_size)); ++k)
        aug.push_back(augment(train_clips[order[k]], policy,
                              hash_combine(hash_combine(cfg.seed, uint64_t(epoch)),
                                           uint64_t(order[k] + 1))));
      std::vector<const ClipSequence*> ptrs;
      for (const auto& clip : aug) ptrs.push_back(&clip);
      LossBreakdown lb = trainer.step(ptrs);
      char row[192];
      std::snprintf(row, sizeof row, "%lld,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                    static_cast<long long>(trainer.step_count), lb.focal, lb.boundary,
                    lb.similarity, lb.smoothness, lb.total);
      losses_csv << row;
      epoch_loss += lb.total;
      ++epoch_steps;
    }

    MetricsReport rep = validate_bundle(b, val_clips);
    Scores stone = rep.class_mean(1), laser = rep.class_mean(2);
    double mean = rep.mean_dsc_ji();
    out.val_curve.push_back(mean);
    char row[192];
    std::snprintf(row, sizeof row, "%d,%.6f,%.6f,%.6f,%.6f,%.6f\n", epoch, stone.dsc, stone.ji,
                  laser.dsc, laser.ji, mean);
    val_csv << row;
    log << "epoch " << epoch << "/" << cfg.epochs << "  train loss "
        << (epoch_loss / std::max(epoch_steps, 1)) << "  val mean(DSC,JI) " << mean << "\n";

    if (mean > best_mean) {
      best_mean = mean;
      best_epoch = epoch;
      best_weights = detail::take_snapshot(b);
    }
  }

  detail::restore_snapshot(b, best_weights);
  b.best_epoch = best_epoch;
  out.losses_csv = losses_csv.str();
  out.val_csv = val_csv.str();

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream(out_dir + "/losses.csv") << out.losses_csv;
    std::ofstream(out_dir + "/val_metrics.csv") << out.val_csv;
  }
  return out;
}

}  // namespace lithoseg
