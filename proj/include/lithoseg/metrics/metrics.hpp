#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lithoseg/core/tensor.hpp"

namespace lithoseg {

struct ConfusionCounts {
  long long tp = 0, fp = 0, fn = 0, tn = 0;
};

// One-vs-rest confusion counts for a single class over one mask pair.
inline ConfusionCounts confusion(const Tensor<int32_t>& pred, const Tensor<int32_t>& gt,
                                 int cls) {
  check(pred.same_shape(gt), "confusion: mask shapes differ " + pred.shape_str() + " vs " +
                                 gt.shape_str());
  ConfusionCounts c;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const bool p = pred.data[i] == cls, g = gt.data[i] == cls;
    if (p && g)
      ++c.tp;
    else if (p && !g)
      ++c.fp;
    else if (!p && g)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

struct Scores {
  double dsc = 0, ji = 0, ppv = 0, sensitivity = 0;
};

// Score conventions, frozen: when the class is absent from both masks
// (tp+fp+fn == 0) every score is 1; otherwise any score with a zero
// denominator is 0.
inline Scores scores(const ConfusionCounts& c) {
  Scores s;
  if (c.tp + c.fp + c.fn == 0) {
    s.dsc = s.ji = s.ppv = s.sensitivity = 1.0;
    return s;
  }
  const double tp = double(c.tp);
  s.dsc = (2 * c.tp + c.fp + c.fn) > 0 ? 2 * tp / double(2 * c.tp + c.fp + c.fn) : 0.0;
  s.ji = tp / double(c.tp + c.fp + c.fn);
  s.ppv = (c.tp + c.fp) > 0 ? tp / double(c.tp + c.fp) : 0.0;
  s.sensitivity = (c.tp + c.fn) > 0 ? tp / double(c.tp + c.fn) : 0.0;
  return s;
}

struct MetricsRow {
  std::string image;
  int cls = 0;
  Scores s;
};

struct MetricsReport {
  std::vector<int> classes;
  std::vector<MetricsRow> rows;

  // Mean score per class over all images.
  Scores class_mean(int cls) const {
    Scores m;
    int n = 0;
    for (const auto& r : rows)
      if (r.cls == cls) {
        m.dsc += r.s.dsc;
        m.ji += r.s.ji;
        m.ppv += r.s.ppv;
        m.sensitivity += r.s.sensitivity;
        ++n;
      }
    if (n > 0) {
      m.dsc /= n;
      m.ji /= n;
      m.ppv /= n;
      m.sensitivity /= n;
    }
    return m;
  }

  // Mean over the per-class DSC and JI means: the scalar used for model
  // selection and the headline quality number.
  double mean_dsc_ji() const {
    double acc = 0;
    int n = 0;
    for (int c : classes) {
      Scores m = class_mean(c);
      acc += m.dsc + m.ji;
      n += 2;
    }
    return n > 0 ? acc / n : 0.0;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "image,class,dsc,ji,ppv,sensitivity\n";
    auto line = [&os](const std::string& img, int cls, const Scores& s) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s,%d,%.6f,%.6f,%.6f,%.6f\n", img.c_str(), cls, s.dsc, s.ji,
                    s.ppv, s.sensitivity);
      os << buf;
    };
    for (const auto& r : rows) line(r.image, r.cls, r.s);
    for (int c : classes) line("mean", c, class_mean(c));
    char buf[80];
    std::snprintf(buf, sizeof buf, "mean_dsc_ji,,%.6f,,,\n", mean_dsc_ji());
    os << buf;
    return os.str();
  }
};

// Scores every (mask pair, class); ids name the rows.
inline MetricsReport evaluate_masks(const std::vector<Tensor<int32_t>>& pred,
                                    const std::vector<Tensor<int32_t>>& gt,
                                    const std::vector<std::string>& ids,
                                    std::vector<int> classes = {1, 2}) {
  check(pred.size() == gt.size() && pred.size() == ids.size(),
        "evaluate_masks: prediction/truth/id counts differ");
  check(!pred.empty(), "evaluate_masks: empty evaluation set");
  MetricsReport rep;
  rep.classes = std::move(classes);
  for (size_t i = 0; i < pred.size(); ++i)
    for (int c : rep.classes)
      rep.rows.push_back({ids[i], c, scores(confusion(pred[i], gt[i], c))});
  return rep;
}

}  // namespace lithoseg
