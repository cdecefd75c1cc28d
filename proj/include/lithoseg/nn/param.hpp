#pragma once

#include <cmath>
#include <deque>
#include <string>
#include <unordered_map>

#include "lithoseg/core/batchnorm.hpp"
#include "lithoseg/core/graph.hpp"
#include "lithoseg/core/rng.hpp"

namespace lithoseg {

template <class S>
struct Parameter {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;
  bool has_grad = false;
};

// Owns network parameters. A deque keeps addresses stable, so layers hold
// plain pointers to their parameters.
template <class S>
struct ParamSet {
  std::deque<Parameter<S>> items;

  Parameter<S>* add(std::string name, Tensor<S> value) {
    items.push_back(Parameter<S>{std::move(name), std::move(value), {}, false});
    return &items.back();
  }

  Eigen::Index scalar_count() const {
    Eigen::Index n = 0;
    for (const auto& p : items) n += p.value.size();
    return n;
  }

  Parameter<S>* find(const std::string& name) {
    for (auto& p : items)
      if (p.name == name) return &p;
    return nullptr;
  }
};

// Named batch-norm running statistics, owned alongside the parameters so
// checkpoints can serialize them.
template <class S>
struct NamedBnStats {
  std::string name;
  BnStats<S> stats;
};

// Per-forward context: binds parameters to graph leaves exactly once per
// graph, and copies gradients back after backward().
template <class S>
struct Ctx {
  Graph<S>& g;
  bool training = false;
  std::unordered_map<const Parameter<S>*, Var> bound;

  Ctx(Graph<S>& graph, bool train) : g(graph), training(train) {}

  Var bind(Parameter<S>* p) {
    auto it = bound.find(p);
    if (it != bound.end()) return it->second;
    Var v = g.leaf(p->value, training);
    bound.emplace(p, v);
    return v;
  }

  // Pulls gradients out of the graph into the parameters (assign semantics).
  void harvest() {
    for (auto& [p, v] : bound) {
      auto* param = const_cast<Parameter<S>*>(p);
      if (g.has_grad(v)) {
        param->grad = g.grad(v);
        param->has_grad = true;
      } else {
        param->has_grad = false;
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Initializers
// ---------------------------------------------------------------------------

// He-normal initialization for a conv weight (cout, cin, k, k).
template <class S>
Tensor<S> he_conv_init(Rng& rng, Eigen::Index cout, Eigen::Index cin, Eigen::Index k) {
  Tensor<S> w(cout, cin, k, k);
  double std_dev = std::sqrt(2.0 / double(cin * k * k));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data[i] = S(rng.normal(0.0, std_dev));
  return w;
}

// Builder-side helpers shared by the network constructors.
template <class S>
struct NetBuilder {
  ParamSet<S>& params;
  std::deque<NamedBnStats<S>>& bn;
  Rng& rng;

  Parameter<S>* conv_weight(const std::string& name, Eigen::Index cout, Eigen::Index cin,
                            Eigen::Index k) {
    return params.add(name, he_conv_init<S>(rng, cout, cin, k));
  }
  Parameter<S>* zero_conv_weight(const std::string& name, Eigen::Index cout, Eigen::Index cin,
                                 Eigen::Index k) {
    return params.add(name, Tensor<S>::zeros(cout, cin, k, k));
  }
  Parameter<S>* bias(const std::string& name, Eigen::Index c) {
    return params.add(name, Tensor<S>::zeros(1, c, 1, 1));
  }
  Parameter<S>* bn_gamma(const std::string& name, Eigen::Index c) {
    return params.add(name, Tensor<S>::full(1, c, 1, 1, S(1)));
  }
  Parameter<S>* bn_beta(const std::string& name, Eigen::Index c) {
    return params.add(name, Tensor<S>::zeros(1, c, 1, 1));
  }
  BnStats<S>* bn_stats(const std::string& name, Eigen::Index c) {
    bn.push_back(NamedBnStats<S>{name, {}});
    bn.back().stats.init(c);
    return &bn.back().stats;
  }
};

}  // namespace lithoseg
