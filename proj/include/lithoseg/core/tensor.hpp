#pragma once

#include <Eigen/Core>
#include <cassert>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace lithoseg {

// Dense 4-D tensor in NCHW layout backed by a flat Eigen array.
// Linear index of (n, c, y, x) is ((n*C + c)*H + y)*W + x, so a single
// (channel) plane is contiguous and can be mapped as an H*W block.
template <class S>
struct Tensor {
  using Array = Eigen::Array<S, Eigen::Dynamic, 1>;
  using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapRM = Eigen::Map<MatRM>;
  using ConstMapRM = Eigen::Map<const MatRM>;

  Eigen::Index n = 0, c = 0, h = 0, w = 0;
  Array data;

  Tensor() = default;
  Tensor(Eigen::Index n_, Eigen::Index c_, Eigen::Index h_, Eigen::Index w_)
      : n(n_), c(c_), h(h_), w(w_) {
    data = Array::Zero(n * c * h * w);
  }

  static Tensor zeros(Eigen::Index n, Eigen::Index c, Eigen::Index h, Eigen::Index w) {
    return Tensor(n, c, h, w);
  }
  static Tensor full(Eigen::Index n, Eigen::Index c, Eigen::Index h, Eigen::Index w, S v) {
    Tensor t(n, c, h, w);
    t.data.setConstant(v);
    return t;
  }
  static Tensor scalar(S v) { return full(1, 1, 1, 1, v); }

  Eigen::Index size() const { return n * c * h * w; }
  Eigen::Index plane() const { return h * w; }
  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  std::string shape_str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }

  S& at(Eigen::Index ni, Eigen::Index ci, Eigen::Index yi, Eigen::Index xi) {
    return data[((ni * c + ci) * h + yi) * w + xi];
  }
  S at(Eigen::Index ni, Eigen::Index ci, Eigen::Index yi, Eigen::Index xi) const {
    return data[((ni * c + ci) * h + yi) * w + xi];
  }

  S* plane_ptr(Eigen::Index ni, Eigen::Index ci) {
    return data.data() + (ni * c + ci) * h * w;
  }
  const S* plane_ptr(Eigen::Index ni, Eigen::Index ci) const {
    return data.data() + (ni * c + ci) * h * w;
  }

  // Maps the n-th sample as a (C) x (H*W) row-major matrix.
  MapRM sample_mat(Eigen::Index ni) {
    return MapRM(data.data() + ni * c * h * w, c, h * w);
  }
  ConstMapRM sample_mat(Eigen::Index ni) const {
    return ConstMapRM(data.data() + ni * c * h * w, c, h * w);
  }

  // Maps the whole buffer with a caller-chosen 2-D factorization.
  MapRM as_mat(Eigen::Index rows, Eigen::Index cols) {
    assert(rows * cols == size());
    return MapRM(data.data(), rows, cols);
  }
  ConstMapRM as_mat(Eigen::Index rows, Eigen::Index cols) const {
    assert(rows * cols == size());
    return ConstMapRM(data.data(), rows, cols);
  }

  template <class T>
  Tensor<T> cast() const {
    Tensor<T> out(n, c, h, w);
    out.data = data.template cast<T>();
    return out;
  }
};

inline void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace lithoseg
