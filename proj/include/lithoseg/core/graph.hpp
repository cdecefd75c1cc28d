#pragma once

#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "lithoseg/core/tensor.hpp"

namespace lithoseg {

// Handle to a node on a Graph tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Eager reverse-mode tape. Every op computes its value immediately and, when
// gradients are enabled and some parent requires them, records a closure that
// scatters the node's gradient into its parents. backward() walks the tape in
// reverse; topological order is free because nodes only reference earlier ids.
template <class S>
class Graph {
 public:
  using BackFn = std::function<void(Graph&)>;

  struct Node {
    Tensor<S> value;
    Tensor<S> grad;  // empty until first accumulation
    BackFn back;
    bool needs_grad = false;
  };

  Var leaf(Tensor<S> v, bool needs_grad = false) {
    nodes_.push_back(Node{std::move(v), {}, nullptr, needs_grad && grad_enabled_});
    return Var{int(nodes_.size()) - 1};
  }

  // Records a computed value. needs_grad is inherited from the parents; the
  // closure is dropped entirely when no parent wants gradients.
  Var record(Tensor<S> value, std::initializer_list<Var> parents, BackFn back) {
    bool needs = false;
    if (grad_enabled_) {
      for (Var p : parents) needs = needs || nodes_[p.id].needs_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(back) : BackFn{}, needs});
    return Var{int(nodes_.size()) - 1};
  }

  const Tensor<S>& val(Var v) const { return nodes_[v.id].value; }
  Tensor<S>& val_mut(Var v) { return nodes_[v.id].value; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  bool has_grad(Var v) const { return nodes_[v.id].grad.size() > 0; }
  const Tensor<S>& grad(Var v) const { return nodes_[v.id].grad; }

  // Gradient buffer for accumulation, allocated to the value's shape on first
  // use. Callers must += into it.
  Tensor<S>& grad_acc(Var v) {
    Node& nd = nodes_[v.id];
    if (nd.grad.size() == 0) {
      const Tensor<S>& t = nd.value;
      nd.grad = Tensor<S>::zeros(t.n, t.c, t.h, t.w);
    }
    return nd.grad;
  }

  // Runs reverse accumulation from a scalar root.
  void backward(Var root) {
    check(val(root).size() == 1, "backward: root must be a scalar");
    grad_acc(root).data.setConstant(S(1));
    for (int i = root.id; i >= 0; --i) {
      Node& nd = nodes_[i];
      if (nd.back && nd.grad.size() > 0) nd.back(*this);
    }
  }

  Var detach(Var v) { return leaf(val(v), false); }

  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

  size_t node_count() const { return nodes_.size(); }

 private:
  // deque keeps references returned by val()/grad() stable while later ops
  // append nodes; callers routinely hold them across op calls.
  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
};

template <class S>
struct NoGradGuard {
  Graph<S>& g;
  bool prev;
  explicit NoGradGuard(Graph<S>& g_) : g(g_), prev(g_.grad_enabled()) { g.set_grad_enabled(false); }
  ~NoGradGuard() { g.set_grad_enabled(prev); }
};

}  // namespace lithoseg
