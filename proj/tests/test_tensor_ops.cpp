#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "lithoseg/core/ops.hpp"

using namespace lithoseg;
using lithoseg::testing::gradcheck;
using lithoseg::testing::random_tensor;

TEST_CASE("binary ops broadcast forward values") {
  Graph<double> g;
  Tensor<double> a(2, 3, 2, 2);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data[i] = double(i);
  Var va = g.leaf(a);

  SUBCASE("same shape") {
    Var r = mul(g, va, va);
    CHECK(g.val(r).data[5] == doctest::Approx(25.0));
  }
  SUBCASE("scalar") {
    Var s = g.leaf(Tensor<double>::scalar(2.0));
    Var r = add(g, va, s);
    CHECK(g.val(r).data[7] == doctest::Approx(9.0));
  }
  SUBCASE("per-sample") {
    Tensor<double> b(2, 1, 1, 1);
    b.data[0] = 10.0;
    b.data[1] = 100.0;
    Var r = add(g, va, g.leaf(b));
    CHECK(g.val(r).data[0] == doctest::Approx(10.0));
    CHECK(g.val(r).data[12] == doctest::Approx(112.0));
  }
  SUBCASE("per-pixel channel broadcast") {
    Tensor<double> b(2, 1, 2, 2);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data[i] = double(i + 1);
    Var r = mul(g, va, g.leaf(b));
    // a(0, 1, 0, 1) = 5, b(0, 0, 0, 1) = 2
    CHECK(g.val(r).data[5] == doctest::Approx(10.0));
    // a(1, 2, 1, 1) = 23, b(1, 0, 1, 1) = 8
    CHECK(g.val(r).data[23] == doctest::Approx(184.0));
  }
  SUBCASE("incompatible shapes throw") {
    Tensor<double> b(2, 2, 2, 2);
    CHECK_THROWS_AS((void)add(g, va, g.leaf(b)), std::invalid_argument);
  }
}

TEST_CASE("reductions") {
  Graph<double> g;
  Tensor<double> a(2, 1, 2, 2);
  for (Eigen::Index i = 0; i < 8; ++i) a.data[i] = double(i + 1);
  Var va = g.leaf(a);
  CHECK(g.val(sum_all(g, va)).data[0] == doctest::Approx(36.0));
  CHECK(g.val(mean_all(g, va)).data[0] == doctest::Approx(4.5));
  Var ps = sum_per_sample(g, va);
  CHECK(g.val(ps).data[0] == doctest::Approx(10.0));
  CHECK(g.val(ps).data[1] == doctest::Approx(26.0));
  Var pm = mean_per_sample(g, va);
  CHECK(g.val(pm).data[1] == doctest::Approx(6.5));
}

TEST_CASE("softmax sums to one and is shift-invariant") {
  Rng rng(7);
  Graph<double> g;
  Tensor<double> x = random_tensor(rng, 2, 3, 4, 4, -5.0, 5.0);
  Tensor<double> shifted = x;
  for (Eigen::Index ni = 0; ni < 2; ++ni)
    for (Eigen::Index ci = 0; ci < 3; ++ci)
      for (Eigen::Index i = 0; i < 16; ++i) shifted.plane_ptr(ni, ci)[i] += 100.0;
  Var a = softmax_c(g, g.leaf(x));
  Var b = softmax_c(g, g.leaf(shifted));
  const auto&A = g.val(a), &B = g.val(b);
  for (Eigen::Index ni = 0; ni < 2; ++ni)
    for (Eigen::Index p = 0; p < 16; ++p) {
      double s = 0;
      for (Eigen::Index ci = 0; ci < 3; ++ci) s += A.plane_ptr(ni, ci)[p];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  for (Eigen::Index i = 0; i < A.size(); ++i)
    CHECK(A.data[i] == doctest::Approx(B.data[i]).epsilon(1e-9));
}

TEST_CASE("gather_label picks the labelled channel and rejects bad labels") {
  Graph<double> g;
  Tensor<double> p(1, 3, 2, 2);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data[i] = double(i);
  Tensor<int32_t> lab(1, 1, 2, 2);
  lab.data[0] = 0;
  lab.data[1] = 1;
  lab.data[2] = 2;
  lab.data[3] = 1;
  Var r = gather_label(g, g.leaf(p), lab);
  CHECK(g.val(r).data[0] == doctest::Approx(0.0));
  CHECK(g.val(r).data[1] == doctest::Approx(5.0));
  CHECK(g.val(r).data[2] == doctest::Approx(10.0));
  CHECK(g.val(r).data[3] == doctest::Approx(7.0));

  lab.data[3] = 3;
  CHECK_THROWS_AS((void)gather_label(g, g.leaf(p), lab), std::invalid_argument);
  lab.data[3] = -1;
  CHECK_THROWS_AS((void)gather_label(g, g.leaf(p), lab), std::invalid_argument);
}

TEST_CASE("spatial forward differences") {
  Graph<double> g;
  Tensor<double> x(1, 1, 2, 3);
  // rows: [1 2 4; 8 16 32]
  x.data[0] = 1;
  x.data[1] = 2;
  x.data[2] = 4;
  x.data[3] = 8;
  x.data[4] = 16;
  x.data[5] = 32;
  Var vx = g.leaf(x);
  Var dx = diff_x(g, vx);
  CHECK(g.val(dx).w == 2);
  CHECK(g.val(dx).data[0] == doctest::Approx(1.0));
  CHECK(g.val(dx).data[1] == doctest::Approx(2.0));
  CHECK(g.val(dx).data[2] == doctest::Approx(8.0));
  CHECK(g.val(dx).data[3] == doctest::Approx(16.0));
  Var dy = diff_y(g, vx);
  CHECK(g.val(dy).h == 1);
  CHECK(g.val(dy).data[0] == doctest::Approx(7.0));
  CHECK(g.val(dy).data[2] == doctest::Approx(28.0));
}

TEST_CASE("concat/slice round trip") {
  Rng rng(3);
  Graph<double> g;
  Tensor<double> a = random_tensor(rng, 2, 2, 3, 3);
  Tensor<double> b = random_tensor(rng, 2, 1, 3, 3);
  Var va = g.leaf(a), vb = g.leaf(b);
  Var cat = concat_c(g, va, vb);
  CHECK(g.val(cat).c == 3);
  Var sa = slice_c(g, cat, 0, 2);
  Var sb = slice_c(g, cat, 2, 1);
  for (Eigen::Index i = 0; i < a.size(); ++i) CHECK(g.val(sa).data[i] == a.data[i]);
  for (Eigen::Index i = 0; i < b.size(); ++i) CHECK(g.val(sb).data[i] == b.data[i]);

  Var sn = slice_n(g, va, 1, 1);
  CHECK(g.val(sn).n == 1);
  CHECK(g.val(sn).data[0] == a.data[2 * 9]);
}

TEST_CASE("unary op values") {
  Graph<double> g;
  Tensor<double> x(1, 1, 1, 4);
  x.data[0] = -2.0;
  x.data[1] = -0.5;
  x.data[2] = 0.5;
  x.data[3] = 2.0;
  Var vx = g.leaf(x);
  CHECK(g.val(relu(g, vx)).data[0] == 0.0);
  CHECK(g.val(relu(g, vx)).data[3] == 2.0);
  CHECK(g.val(elu(g, vx)).data[0] == doctest::Approx(std::expm1(-2.0)));
  CHECK(g.val(elu(g, vx)).data[3] == 2.0);
  CHECK(g.val(sigmoid(g, vx)).data[2] == doctest::Approx(1.0 / (1.0 + std::exp(-0.5))));
  CHECK(g.val(clamp(g, vx, -1.0, 1.0)).data[0] == -1.0);
  CHECK(g.val(clamp(g, vx, -1.0, 1.0)).data[2] == 0.5);
  Tensor<double> pos(1, 1, 1, 1);
  pos.data[0] = 0.25;
  CHECK(g.val(pow_scalar(g, g.leaf(pos), 0.5)).data[0] == doctest::Approx(0.5));
  CHECK(g.val(pow_scalar(g, g.leaf(pos), 0.0)).data[0] == doctest::Approx(1.0));
}

TEST_CASE("gradcheck: arithmetic and broadcasts") {
  Rng rng(11);
  auto a = random_tensor(rng, 2, 3, 3, 3, 0.5, 2.0);
  auto b = random_tensor(rng, 2, 3, 3, 3, 0.5, 2.0);
  auto s = random_tensor(rng, 2, 1, 1, 1, 0.5, 2.0);
  auto px = random_tensor(rng, 2, 1, 3, 3, 0.5, 2.0);

  auto res = gradcheck({a, b}, [](Graph<double>& g, const std::vector<Var>& v) {
    return sum_all(g, div(g, mul(g, v[0], v[1]), add(g, v[0], v[1])));
  });
  CHECK(res.max_rel_err < 1e-6);

  res = gradcheck({a, s}, [](Graph<double>& g, const std::vector<Var>& v) {
    return sum_all(g, div(g, v[0], v[1]));
  });
  CHECK(res.max_rel_err < 1e-6);

  res = gradcheck({a, px}, [](Graph<double>& g, const std::vector<Var>& v) {
    return mean_all(g, mul(g, sq(g, v[0]), v[1]));
  });
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("gradcheck: unaries, softmax, gather, diffs") {
  Rng rng(13);
  auto x = random_tensor(rng, 1, 3, 4, 4, -2.0, 2.0);

  auto res = gradcheck({x}, [](Graph<double>& g, const std::vector<Var>& v) {
    return mean_all(g, sigmoid(g, elu(g, scale(g, v[0], 1.3))));
  });
  CHECK(res.max_rel_err < 1e-6);

  Tensor<int32_t> lab(1, 1, 4, 4);
  Rng lrng(5);
  for (Eigen::Index i = 0; i < 16; ++i) lab.data[i] = int32_t(lrng.uniform_int(3));
  res = gradcheck({x}, [lab](Graph<double>& g, const std::vector<Var>& v) {
    Var p = softmax_c(g, v[0]);
    return mean_all(g, logv(g, gather_label(g, p, lab)));
  });
  CHECK(res.max_rel_err < 1e-6);

  res = gradcheck({x}, [](Graph<double>& g, const std::vector<Var>& v) {
    return add(g, sum_all(g, sq(g, diff_x(g, v[0]))), sum_all(g, sq(g, diff_y(g, v[0]))));
  });
  CHECK(res.max_rel_err < 1e-6);

  auto pos = random_tensor(rng, 1, 2, 3, 3, 0.1, 0.9);
  res = gradcheck({pos}, [](Graph<double>& g, const std::vector<Var>& v) {
    return sum_all(g, pow_scalar(g, v[0], 2.0));
  });
  CHECK(res.max_rel_err < 1e-6);

  res = gradcheck({x}, [](Graph<double>& g, const std::vector<Var>& v) {
    Var c = concat_c(g, v[0], sq(g, v[0]));
    return sum_all(g, mul(g, slice_c(g, c, 1, 3), slice_c(g, c, 3, 3)));
  });
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("backward accumulates into reused nodes") {
  // f(x) = sum(x*x + x) uses x twice; df/dx = 2x + 1.
  Graph<double> g;
  Tensor<double> x(1, 1, 1, 3);
  x.data[0] = 1.0;
  x.data[1] = -2.0;
  x.data[2] = 3.0;
  Var vx = g.leaf(x, true);
  Var f = sum_all(g, add(g, mul(g, vx, vx), vx));
  g.backward(f);
  CHECK(g.grad(vx).data[0] == doctest::Approx(3.0));
  CHECK(g.grad(vx).data[1] == doctest::Approx(-3.0));
  CHECK(g.grad(vx).data[2] == doctest::Approx(7.0));
}

TEST_CASE("no-grad mode records no closures") {
  Graph<double> g;
  g.set_grad_enabled(false);
  Var vx = g.leaf(Tensor<double>::full(1, 1, 2, 2, 2.0), true);
  Var y = mul(g, vx, vx);
  CHECK(!g.needs_grad(y));
  CHECK(g.val(y).data[0] == doctest::Approx(4.0));
}

TEST_CASE("detach blocks gradient flow") {
  Graph<double> g;
  Var vx = g.leaf(Tensor<double>::full(1, 1, 1, 1, 3.0), true);
  Var d = g.detach(mul(g, vx, vx));
  Var f = sum_all(g, mul(g, d, vx));  // f = 9*x with d treated as constant 9
  g.backward(f);
  CHECK(g.grad(vx).data[0] == doctest::Approx(9.0));
}
