#pragma once

#include <functional>
#include <vector>

#include "lithoseg/core/graph.hpp"
#include "lithoseg/core/rng.hpp"

namespace lithoseg::testing {

inline Tensor<double> random_tensor(Rng& rng, Eigen::Index n, Eigen::Index c, Eigen::Index h,
                                    Eigen::Index w, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(n, c, h, w);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = rng.uniform(lo, hi);
  return t;
}

struct GradcheckResult {
  double max_rel_err = 0.0;
  int checked = 0;
};

// Central-difference gradient check in double precision. `build` receives the
// graph plus one leaf Var per input tensor (in order) and must return a scalar
// root. `coords` coordinates per input are probed.
inline GradcheckResult gradcheck(
    std::vector<Tensor<double>> inputs,
    const std::function<Var(Graph<double>&, const std::vector<Var>&)>& build, int coords = 20,
    uint64_t seed = 99) {
  auto eval = [&](const std::vector<Tensor<double>>& ins, bool want_grads,
                  std::vector<Tensor<double>>* grads) {
    Graph<double> g;
    std::vector<Var> vars;
    vars.reserve(ins.size());
    for (const auto& t : ins) vars.push_back(g.leaf(t, want_grads));
    Var root = build(g, vars);
    double v = g.val(root).data[0];
    if (want_grads) {
      g.backward(root);
      grads->clear();
      for (size_t i = 0; i < ins.size(); ++i) {
        if (g.has_grad(vars[i])) {
          grads->push_back(g.grad(vars[i]));
        } else {
          const auto& t = ins[i];
          grads->push_back(Tensor<double>::zeros(t.n, t.c, t.h, t.w));
        }
      }
    }
    return v;
  };

  std::vector<Tensor<double>> analytic;
  eval(inputs, true, &analytic);

  Rng rng(seed);
  GradcheckResult res;
  for (size_t ii = 0; ii < inputs.size(); ++ii) {
    const Eigen::Index sz = inputs[ii].size();
    for (int k = 0; k < coords; ++k) {
      const Eigen::Index at = Eigen::Index(rng.uniform_int(uint64_t(sz)));
      const double x0 = inputs[ii].data[at];
      const double h = 1e-5 * std::max(1.0, std::abs(x0));
      inputs[ii].data[at] = x0 + h;
      const double fp = eval(inputs, false, nullptr);
      inputs[ii].data[at] = x0 - h;
      const double fm = eval(inputs, false, nullptr);
      inputs[ii].data[at] = x0;
      const double num = (fp - fm) / (2 * h);
      const double ana = analytic[ii].data[at];
      const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-6});
      res.max_rel_err = std::max(res.max_rel_err, rel);
      ++res.checked;
    }
  }
  return res;
}

}  // namespace lithoseg::testing
