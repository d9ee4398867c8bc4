#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "bcsi/tensor.hpp"

using namespace bcsi;

namespace {

Tensor leaf(Shape s, std::vector<double> v) {
  Tensor t = Tensor::from_vector(std::move(s), std::move(v));
  t.set_requires_grad();
  return t;
}

// deterministic filler in a harmless range, away from relu/max kinks
std::vector<double> ramp(int64_t n, double lo = -1.1, double step = 0.177) {
  std::vector<double> v(static_cast<size_t>(n));
  double x = lo;
  for (auto& e : v) {
    e = x;
    x += step;
    if (x > 1.9) x -= 3.73;
  }
  return v;
}

constexpr double kTol = 1e-7;  // grad_check threshold, central diff is O(h^2)

}  // namespace

// ---- the oracle itself ---------------------------------------------------------

TEST_CASE("grad_check agrees with a closed-form gradient") {
  // f(x) = sum(x^2): grad = 2x, verifiable by hand
  Tensor x = leaf({3}, {1.0, -2.0, 0.5});
  auto f = [](const std::vector<Tensor>& in) { return sum(mul(in[0], in[0])); };
  GradMap gm = backward(f({x}));
  Tensor g = gm.grad(x);
  CHECK(g.data()[0] == doctest::Approx(2.0));
  CHECK(g.data()[1] == doctest::Approx(-4.0));
  CHECK(g.data()[2] == doctest::Approx(1.0));
  CHECK(grad_check(f, {x}) < kTol);
}

TEST_CASE("grad_check flags a wrong gradient") {
  // mean reports itself as sum: finite differences must disagree
  Tensor x = leaf({4}, ramp(4));
  auto wrong = [](const std::vector<Tensor>& in) {
    return mul(sum(in[0]), 0.25);  // == mean
  };
  auto right = [](const std::vector<Tensor>& in) { return sum(in[0]); };
  // sanity: the discrepancy detector sees sum vs mean apart
  Tensor loss = right({x});
  GradMap gm = backward(loss);
  double worst = 0.0;
  Tensor g = gm.grad(x);
  for (int64_t j = 0; j < x.numel(); ++j) {
    // central difference of the *wrong* function against sum's analytic grad
    std::vector<double> vp = x.values(), vm = x.values();
    vp[static_cast<size_t>(j)] += 1e-5;
    vm[static_cast<size_t>(j)] -= 1e-5;
    const double cd = (wrong({Tensor::from_vector(x.shape(), vp)}).item() -
                       wrong({Tensor::from_vector(x.shape(), vm)}).item()) /
                      2e-5;
    worst = std::max(worst, std::abs(g.data()[j] - cd));
  }
  CHECK(worst > 0.5);  // 1 vs 0.25 per coordinate
}

// ---- construction and core semantics ---------------------------------------------

TEST_CASE("construction validates shape against data") {
  CHECK_THROWS_AS(Tensor::from_vector({2, 3}, {1.0}), ShapeError);
  CHECK_THROWS_AS(Tensor::from_vector({0}, {}), ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({2, -1}), ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({1, 1, 1, 1, 1, 1}), ShapeError);
  Tensor t = Tensor::full({2, 2}, 3.5);
  CHECK(t.numel() == 4);
  for (int i = 0; i < 4; ++i) CHECK(t.data()[i] == 3.5);
  CHECK(Tensor::scalar(2.0).item() == 2.0);
  CHECK_THROWS_AS(Tensor::zeros({2}).item(), ShapeError);
}

TEST_CASE("detach shares values but blocks gradient flow") {
  Tensor x = leaf({2}, {3.0, 4.0});
  Tensor d = x.detach();
  CHECK_FALSE(d.requires_grad());
  CHECK(d.data()[0] == 3.0);

  Tensor loss = sum(mul(x, d));  // d treated as constant
  GradMap gm = backward(loss);
  Tensor g = gm.grad(x);
  CHECK(g.data()[0] == doctest::Approx(3.0));
  CHECK(g.data()[1] == doctest::Approx(4.0));
}

TEST_CASE("unreachable leaves get zero gradient, off-tape tensors throw") {
  Tensor x = leaf({2}, {1.0, 2.0});
  Tensor y = leaf({2}, {5.0, 6.0});
  GradMap gm = backward(sum(x));
  CHECK_FALSE(gm.reached(y));
  Tensor gy = gm.grad(y);
  CHECK(gy.data()[0] == 0.0);
  CHECK(gy.data()[1] == 0.0);

  Tensor plain = Tensor::zeros({2});
  CHECK_THROWS_AS(gm.grad(plain), ShapeError);
}

TEST_CASE("gradient accumulates through shared subexpressions") {
  // f = sum(x*x + x*x) = 2*sum(x^2): grad 4x
  Tensor x = leaf({2}, {1.5, -0.5});
  Tensor sq = mul(x, x);
  GradMap gm = backward(sum(add(sq, sq)));
  Tensor g = gm.grad(x);
  CHECK(g.data()[0] == doctest::Approx(6.0));
  CHECK(g.data()[1] == doctest::Approx(-2.0));
}

TEST_CASE("backward requires a scalar that needs grad") {
  Tensor x = leaf({2}, {1.0, 2.0});
  CHECK_THROWS_AS(backward(mul(x, 2.0)), ShapeError);      // not scalar
  CHECK_THROWS_AS(backward(Tensor::scalar(1.0)), ShapeError);  // off tape
}

TEST_CASE("op outputs on the tape refuse in-place mutation") {
  Tensor x = leaf({2}, {1.0, 2.0});
  Tensor y = mul(x, 2.0);
  CHECK_THROWS_AS(y.mutable_data(), ShapeError);
  CHECK(x.mutable_data() != nullptr);  // leaves stay writable
}

// ---- elementwise -----------------------------------------------------------------

TEST_CASE("binary elementwise forward values") {
  Tensor a = Tensor::from_vector({2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tensor b = Tensor::from_vector({2, 2}, {5.0, 6.0, 7.0, 8.0});
  CHECK(add(a, b).values() == std::vector<double>{6.0, 8.0, 10.0, 12.0});
  CHECK(sub(a, b).values() == std::vector<double>{-4.0, -4.0, -4.0, -4.0});
  CHECK(mul(a, b).values() == std::vector<double>{5.0, 12.0, 21.0, 32.0});
  Tensor q = div(a, b);
  CHECK(q.data()[0] == doctest::Approx(0.2));
  CHECK(q.data()[3] == doctest::Approx(0.5));
  CHECK_THROWS_AS(div(a, Tensor::zeros({2, 2})), DomainError);
  CHECK_THROWS_AS(div(a, 0.0), DomainError);
}

TEST_CASE("broadcasting follows trailing-axis rules") {
  Tensor a = Tensor::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor row = Tensor::from_vector({3}, {10, 20, 30});
  Tensor col = Tensor::from_vector({2, 1}, {100, 200});
  CHECK(add(a, row).values() == std::vector<double>{11, 22, 33, 14, 25, 36});
  CHECK(add(a, col).values() == std::vector<double>{101, 102, 103, 204, 205, 206});
  CHECK(add(row, col).values() == std::vector<double>{110, 120, 130, 210, 220, 230});
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({2, 2})), ShapeError);
}

TEST_CASE("broadcast gradients reduce over stretched axes") {
  Tensor a = leaf({2, 3}, ramp(6));
  Tensor bias = leaf({3}, {0.1, 0.2, 0.3});
  auto f = [](const std::vector<Tensor>& in) {
    return sum(mul(add(in[0], in[1]), add(in[0], in[1])));
  };
  CHECK(grad_check(f, {a, bias}) < kTol);

  // hand check: d/dbias sum((a+bias)^2) = 2*sum_rows(a+bias)
  GradMap gm = backward(f({a, bias}));
  Tensor gb = gm.grad(bias);
  for (int j = 0; j < 3; ++j) {
    double expect = 0.0;
    for (int i = 0; i < 2; ++i)
      expect += 2.0 * (a.data()[i * 3 + j] + bias.data()[j]);
    CHECK(gb.data()[j] == doctest::Approx(expect));
  }
}

TEST_CASE("binary op gradients pass finite differences") {
  Tensor a = leaf({2, 3}, ramp(6, 0.3));
  Tensor b = leaf({2, 3}, ramp(6, 0.7, 0.31));
  auto via = [&](Tensor (*op)(const Tensor&, const Tensor&)) {
    return grad_check(
        [op](const std::vector<Tensor>& in) { return sum(op(in[0], in[1])); }, {a, b});
  };
  CHECK(via(&add) < kTol);
  CHECK(via(&sub) < kTol);
  CHECK(via(&mul) < kTol);
  CHECK(via(&div) < kTol);
}

TEST_CASE("scalar variants and operators") {
  Tensor a = leaf({3}, {1.0, 2.0, 3.0});
  CHECK((a + 1.0).values() == std::vector<double>{2.0, 3.0, 4.0});
  CHECK((a * 2.0).values() == std::vector<double>{2.0, 4.0, 6.0});
  CHECK(sub(10.0, a).values() == std::vector<double>{9.0, 8.0, 7.0});
  CHECK(div(a, 2.0).values() == std::vector<double>{0.5, 1.0, 1.5});
  CHECK((-a).values() == std::vector<double>{-1.0, -2.0, -3.0});
  CHECK(grad_check(
            [](const std::vector<Tensor>& in) {
              return sum(mul(sub(1.0, in[0]), div(add(in[0], 2.0), 4.0)));
            },
            {a}) < kTol);
}

TEST_CASE("mask_mul treats the mask as constant") {
  Tensor x = leaf({4}, {1.0, 2.0, 3.0, 4.0});
  Tensor m = leaf({4}, {1.0, 0.0, 1.0, 0.0});  // grad should NOT flow here
  Tensor loss = sum(mask_mul(x, m));
  GradMap gm = backward(loss);
  CHECK(gm.grad(x).values() == std::vector<double>{1.0, 0.0, 1.0, 0.0});
  CHECK_FALSE(gm.reached(m));
}

TEST_CASE("unary forward values") {
  Tensor x = Tensor::from_vector({5}, {-2.0, -0.5, 0.0, 0.5, 2.0});
  CHECK(relu(x).values() == std::vector<double>{0.0, 0.0, 0.0, 0.5, 2.0});
  Tensor s = sigmoid(x);
  CHECK(s.data()[2] == doctest::Approx(0.5));
  CHECK(s.data()[4] == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))));
  CHECK(s.data()[0] == doctest::Approx(1.0 - s.data()[4]));
  CHECK(bcsi::exp(Tensor::scalar(1.0)).item() == doctest::Approx(std::exp(1.0)));
  CHECK(bcsi::log(Tensor::scalar(std::exp(2.0))).item() == doctest::Approx(2.0));
  CHECK_THROWS_AS(bcsi::log(Tensor::scalar(0.0)), DomainError);
  CHECK_THROWS_AS(bcsi::log(Tensor::scalar(-1.0)), DomainError);
  CHECK(power(Tensor::scalar(3.0), 2.0).item() == doctest::Approx(9.0));
  CHECK(clamp(x, -1.0, 1.0).values() == std::vector<double>{-1.0, -0.5, 0.0, 0.5, 1.0});
  CHECK_THROWS_AS(clamp(x, 1.0, -1.0), DomainError);
}

TEST_CASE("sigmoid is stable at extreme inputs") {
  Tensor x = Tensor::from_vector({2}, {-800.0, 800.0});
  Tensor s = sigmoid(x);
  CHECK(s.data()[0] == doctest::Approx(0.0));
  CHECK(s.data()[1] == doctest::Approx(1.0));
  CHECK(std::isfinite(s.data()[0]));
  CHECK(std::isfinite(s.data()[1]));
}

TEST_CASE("unary gradients pass finite differences") {
  // points kept away from the relu/clamp kinks
  Tensor x = leaf({6}, {-1.7, -0.9, -0.2, 0.3, 0.8, 1.6});
  auto check = [&](std::function<Tensor(const Tensor&)> op) {
    return grad_check(
        [&op](const std::vector<Tensor>& in) { return sum(op(in[0])); }, {x});
  };
  CHECK(check([](const Tensor& t) { return relu(t); }) < kTol);
  CHECK(check([](const Tensor& t) { return sigmoid(t); }) < kTol);
  CHECK(check([](const Tensor& t) { return bcsi::exp(t); }) < kTol);
  CHECK(check([](const Tensor& t) { return clamp(t, -1.0, 1.0); }) < kTol);
  CHECK(check([](const Tensor& t) { return mul(t, -3.5); }) < kTol);

  Tensor pos = leaf({4}, {0.3, 0.9, 1.7, 2.5});
  CHECK(grad_check(
            [](const std::vector<Tensor>& in) { return sum(bcsi::log(in[0])); }, {pos}) < kTol);
  CHECK(grad_check(
            [](const std::vector<Tensor>& in) { return sum(power(in[0], 3.0)); }, {pos}) < kTol);
  CHECK(grad_check(
            [](const std::vector<Tensor>& in) { return sum(power(in[0], 0.5)); }, {pos}) < kTol);
}

TEST_CASE("relu gradient is exactly zero at the kink and below") {
  Tensor x = leaf({3}, {-1.0, 0.0, 2.0});
  GradMap gm = backward(sum(relu(x)));
  CHECK(gm.grad(x).values() == std::vector<double>{0.0, 0.0, 1.0});
}

// ---- reductions -------------------------------------------------------------------

TEST_CASE("sum over axes and keepdims") {
  Tensor x = Tensor::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(sum(x).item() == 21.0);
  CHECK(sum(x).shape() == Shape{1});
  CHECK(sum(x, {0}).shape() == Shape{3});
  CHECK(sum(x, {0}).values() == std::vector<double>{5, 7, 9});
  CHECK(sum(x, {1}).values() == std::vector<double>{6, 15});
  CHECK(sum(x, {1}, true).shape() == Shape{2, 1});
  CHECK(sum(x, {0, 1}, true).shape() == Shape{1, 1});
  CHECK_THROWS_AS(sum(x, {2}), ShapeError);
  CHECK_THROWS_AS(sum(x, {0, 0}), ShapeError);
}

TEST_CASE("mean matches sum/count") {
  Tensor x = Tensor::from_vector({2, 2}, {1, 2, 3, 4});
  CHECK(mean(x).item() == doctest::Approx(2.5));
  CHECK(mean(x, {0}).values() == std::vector<double>{2, 3});
}

TEST_CASE("max forward and tie handling") {
  Tensor x = Tensor::from_vector({2, 3}, {3, 1, 3, 2, 5, 5});
  CHECK(max(x).item() == 5.0);
  CHECK(max(x, {1}).values() == std::vector<double>{3, 5});

  // ties: gradient goes to the lowest linear index only
  Tensor t = leaf({4}, {2.0, 7.0, 7.0, 1.0});
  GradMap gm = backward(max(t));
  CHECK(gm.grad(t).values() == std::vector<double>{0.0, 1.0, 0.0, 0.0});
}

TEST_CASE("reduction gradients pass finite differences") {
  Tensor x = leaf({2, 3, 2}, ramp(12, 0.11, 0.23));
  auto gc = [&](std::vector<int> axes, bool keep) {
    return grad_check(
        [axes, keep](const std::vector<Tensor>& in) {
          return sum(mul(sum(in[0], axes, keep), 1.7));
        },
        {x});
  };
  CHECK(gc({}, false) < kTol);
  CHECK(gc({0}, false) < kTol);
  CHECK(gc({1}, true) < kTol);
  CHECK(gc({0, 2}, false) < kTol);
  CHECK(grad_check(
            [](const std::vector<Tensor>& in) { return mean(in[0]); }, {x}) < kTol);
  CHECK(grad_check(
            [](const std::vector<Tensor>& in) { return sum(max(in[0], {1})); }, {x}) < kTol);
}

TEST_CASE("softmax rows sum to one and match direct computation") {
  Tensor x = Tensor::from_vector({2, 3}, {1.0, 2.0, 3.0, -1.0, 0.0, 1.0});
  Tensor y = softmax(x, 1);
  for (int r = 0; r < 2; ++r) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) s += y.data()[r * 3 + c];
    CHECK(s == doctest::Approx(1.0));
  }
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(y.data()[0] == doctest::Approx(std::exp(1.0) / z));
  CHECK(y.data()[2] == doctest::Approx(std::exp(3.0) / z));

  // stability: huge logits must not produce nan/inf
  Tensor big = softmax(Tensor::from_vector({1, 2}, {1000.0, 999.0}), 1);
  CHECK(std::isfinite(big.data()[0]));
  CHECK(big.data()[0] > big.data()[1]);

  CHECK_THROWS_AS(softmax(x, 2), ShapeError);
}

TEST_CASE("softmax gradient passes finite differences on both axes") {
  Tensor x = leaf({2, 4}, ramp(8, -0.9, 0.37));
  for (int axis : {0, 1}) {
    CHECK(grad_check(
              [axis](const std::vector<Tensor>& in) {
                Tensor w = Tensor::from_vector({2, 4}, {0.9, -0.3, 0.4, 1.2, -0.7, 0.2, 0.5, -1.0});
                return sum(mul(softmax(in[0], axis), w));
              },
              {x}) < kTol);
  }
}

// ---- shape ops --------------------------------------------------------------------

TEST_CASE("reshape round-trips and validates numel") {
  Tensor x = leaf({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor y = reshape(x, {3, 2});
  CHECK(y.shape() == Shape{3, 2});
  CHECK(y.values() == x.values());
  CHECK_THROWS_AS(reshape(x, {4, 2}), ShapeError);
  CHECK(grad_check(
            [](const std::vector<Tensor>& in) {
              return sum(mul(reshape(in[0], {6}), reshape(in[0], {6})));
            },
            {x}) < kTol);
}

TEST_CASE("transpose2d swaps axes and its gradient transposes back") {
  Tensor x = leaf({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor t = transpose2d(x);
  CHECK(t.shape() == Shape{3, 2});
  CHECK(t.values() == std::vector<double>{1, 4, 2, 5, 3, 6});
  CHECK(transpose2d(t).values() == x.values());
  CHECK_THROWS_AS(transpose2d(Tensor::zeros({2, 2, 2})), ShapeError);
  CHECK(grad_check(
            [](const std::vector<Tensor>& in) {
              Tensor w = Tensor::from_vector({3, 2}, {1, -2, 3, 0.5, -1, 2});
              return sum(mul(transpose2d(in[0]), w));
            },
            {x}) < kTol);
}

TEST_CASE("slice extracts the window and routes gradient back") {
  Tensor x = leaf({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  Tensor y = slice(x, {0, 1}, {2, 2});
  CHECK(y.shape() == Shape{2, 2});
  CHECK(y.values() == std::vector<double>{2, 3, 6, 7});
  CHECK_THROWS_AS(slice(x, {0, 3}, {1, 2}), ShapeError);
  CHECK_THROWS_AS(slice(x, {0}, {1}), ShapeError);

  GradMap gm = backward(sum(y));
  CHECK(gm.grad(x).values() == std::vector<double>{0, 1, 1, 0, 0, 1, 1, 0});
}

TEST_CASE("pad inserts zeros and is the adjoint of slice") {
  Tensor x = leaf({1, 2}, {3.0, 4.0});
  Tensor y = pad(x, {1, 0}, {0, 1});
  CHECK(y.shape() == Shape{2, 3});
  CHECK(y.values() == std::vector<double>{0, 0, 0, 3, 4, 0});
  CHECK_THROWS_AS(pad(x, {-1, 0}, {0, 0}), ShapeError);
  CHECK(grad_check(
            [](const std::vector<Tensor>& in) {
              Tensor p = pad(in[0], {1, 1}, {0, 2});
              return sum(mul(p, p));
            },
            {x}) < kTol);
}

TEST_CASE("concat joins along the axis and splits gradients") {
  Tensor a = leaf({2, 1}, {1, 2});
  Tensor b = leaf({2, 2}, {3, 4, 5, 6});
  Tensor y = concat({a, b}, 1);
  CHECK(y.shape() == Shape{2, 3});
  CHECK(y.values() == std::vector<double>{1, 3, 4, 2, 5, 6});
  CHECK_THROWS_AS(concat({a, Tensor::zeros({3, 1})}, 1), ShapeError);
  CHECK_THROWS_AS(concat({}, 0), ShapeError);

  Tensor w = Tensor::from_vector({2, 3}, {1, 10, 100, 2, 20, 200});
  GradMap gm = backward(sum(mul(concat({a, b}, 1), w)));
  CHECK(gm.grad(a).values() == std::vector<double>{1, 2});
  CHECK(gm.grad(b).values() == std::vector<double>{10, 100, 20, 200});

  CHECK(concat({a}, 0).values() == a.values());
  Tensor c0 = concat({a, a}, 0);
  CHECK(c0.shape() == Shape{4, 1});
  CHECK(c0.values() == std::vector<double>{1, 2, 1, 2});
}

TEST_CASE("upsample_nearest replicates blocks; downsample picks corners") {
  Tensor x = leaf({1, 1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor up = upsample_nearest(x, 2);
  CHECK(up.shape() == Shape{1, 1, 2, 4, 4});
  // each source voxel becomes a 2x2x2 block
  const std::vector<double> expect{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4,
                                   1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  CHECK(up.values() == expect);

  Tensor down = downsample_nearest(up, 2);
  CHECK(down.shape() == x.shape());
  CHECK(down.values() == x.values());
  CHECK_THROWS_AS(downsample_nearest(leaf({1, 1, 1, 3, 3}, ramp(9)), 2), ShapeError);
  CHECK_THROWS_AS(upsample_nearest(leaf({2, 2}, ramp(4)), 2), ShapeError);

  GradMap gm = backward(sum(up));
  // every source voxel feeds 8 outputs
  CHECK(gm.grad(x).values() == std::vector<double>{8, 8, 8, 8});

  Tensor big = leaf({1, 2, 2, 2, 2}, ramp(16, 0.4, 0.21));
  CHECK(grad_check(
            [](const std::vector<Tensor>& in) {
              Tensor u = upsample_nearest(in[0], 2);
              return sum(mul(u, u));
            },
            {big}) < kTol);
  CHECK(grad_check(
            [](const std::vector<Tensor>& in) {
              Tensor d = downsample_nearest(in[0], 2);
              return sum(mul(d, d));
            },
            {big}) < kTol);
}

TEST_CASE("gather_channels selects per-sample channels") {
  // [B=2, C=3, spatial=2]
  Tensor x = leaf({2, 3, 2}, {0, 1, 10, 11, 20, 21, 30, 31, 40, 41, 50, 51});
  Tensor g = gather_channels(x, {{2, 0}, {1, 1}});
  CHECK(g.shape() == Shape{2, 2, 2});
  CHECK(g.values() == std::vector<double>{20, 21, 0, 1, 40, 41, 40, 41});
  CHECK_THROWS_AS(gather_channels(x, {{0}}), ShapeError);          // wrong batch count
  CHECK_THROWS_AS(gather_channels(x, {{3}, {0}}), ShapeError);     // out of range
  CHECK_THROWS_AS(gather_channels(x, {{0, 1}, {0}}), ShapeError);  // ragged

  // duplicated gather accumulates gradient into the source channel
  GradMap gm = backward(sum(g));
  CHECK(gm.grad(x).values() ==
        std::vector<double>{1, 1, 0, 0, 1, 1, 0, 0, 2, 2, 0, 0});
}

TEST_CASE("scatter_channels overwrites rows and splits gradients") {
  Tensor base = leaf({1, 3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor sub = leaf({1, 2, 2}, {10, 20, 30, 40});
  Tensor y = scatter_channels(base, sub, {{2, 0}});
  CHECK(y.values() == std::vector<double>{30, 40, 3, 4, 10, 20});
  CHECK_THROWS_AS(scatter_channels(base, sub, {{0, 0}}), ShapeError);  // duplicates
  CHECK_THROWS_AS(scatter_channels(base, Tensor::zeros({1, 1, 2}), {{0, 1}}), ShapeError);

  Tensor w = Tensor::from_vector({1, 3, 2}, {1, 2, 4, 8, 16, 32});
  GradMap gm = backward(sum(mul(y, w)));
  // overwritten channels contribute nothing to base's gradient
  CHECK(gm.grad(base).values() == std::vector<double>{0, 0, 4, 8, 0, 0});
  CHECK(gm.grad(sub).values() == std::vector<double>{16, 32, 1, 2});

  Tensor b2 = leaf({1, 3, 2}, ramp(6, 0.2, 0.3));
  Tensor s2 = leaf({1, 2, 2}, ramp(4, -0.4, 0.27));
  CHECK(grad_check(
            [](const std::vector<Tensor>& in) {
              Tensor m = scatter_channels(in[0], in[1], {{1, 2}});
              return sum(mul(m, m));
            },
            {b2, s2}) < kTol);
}

// ---- linear algebra ----------------------------------------------------------------

TEST_CASE("matmul matches a hand-computed product") {
  Tensor a = leaf({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = leaf({3, 2}, {7, 8, 9, 10, 11, 12});
  Tensor c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 2});
  CHECK(c.values() == std::vector<double>{58, 64, 139, 154});
  CHECK_THROWS_AS(matmul(a, Tensor::zeros({2, 2})), ShapeError);
  CHECK_THROWS_AS(matmul(a, Tensor::zeros({2})), ShapeError);
  CHECK(grad_check(
            [](const std::vector<Tensor>& in) {
              Tensor m = matmul(in[0], in[1]);
              return sum(mul(m, m));
            },
            {a, b}) < kTol);
}

TEST_CASE("matmul handles sizes past the blocking boundaries") {
  // m not divisible by 4, k and n straddle panel edges
  const int m = 7, k = 9, n = 5;
  std::vector<double> av = ramp(m * k, 0.05, 0.13), bv = ramp(k * n, -0.4, 0.29);
  Tensor a = Tensor::from_vector({m, k}, av);
  Tensor b = Tensor::from_vector({k, n}, bv);
  Tensor c = matmul(a, b);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int l = 0; l < k; ++l) s += av[static_cast<size_t>(i * k + l)] * bv[static_cast<size_t>(l * n + j)];
      CHECK(c.data()[i * n + j] == doctest::Approx(s).epsilon(1e-12));
    }
}

namespace {

// direct convolution, the slow reference the fast path must reproduce
std::vector<double> conv_reference(const std::vector<double>& x, const std::vector<double>& w,
                                   int B, int Ci, int D, int H, int W, int Co, int kd, int kh,
                                   int kw, int s, int p, int Do, int Ho, int Wo) {
  std::vector<double> out(static_cast<size_t>(B) * Co * Do * Ho * Wo, 0.0);
  for (int b = 0; b < B; ++b)
    for (int co = 0; co < Co; ++co)
      for (int zo = 0; zo < Do; ++zo)
        for (int yo = 0; yo < Ho; ++yo)
          for (int xo = 0; xo < Wo; ++xo) {
            double acc = 0.0;
            for (int ci = 0; ci < Ci; ++ci)
              for (int kz = 0; kz < kd; ++kz)
                for (int ky = 0; ky < kh; ++ky)
                  for (int kx = 0; kx < kw; ++kx) {
                    const int z = zo * s - p + kz, y = yo * s - p + ky, u = xo * s - p + kx;
                    if (z < 0 || z >= D || y < 0 || y >= H || u < 0 || u >= W) continue;
                    acc += x[static_cast<size_t>((((b * Ci + ci) * D + z) * H + y) * W + u)] *
                           w[static_cast<size_t>((((co * Ci + ci) * kd + kz) * kh + ky) * kw + kx)];
                  }
            out[static_cast<size_t>((((b * Co + co) * Do + zo) * Ho + yo) * Wo + xo)] = acc;
          }
  return out;
}

}  // namespace

TEST_CASE("conv3d matches the direct reference") {
  const int B = 2, Ci = 2, D = 4, H = 5, W = 4, Co = 3, K = 3;
  auto xv = ramp(B * Ci * D * H * W, -0.8, 0.173);
  auto wv = ramp(Co * Ci * K * K * K, 0.1, 0.071);
  Tensor x = Tensor::from_vector({B, Ci, D, H, W}, xv);
  Tensor w = Tensor::from_vector({Co, Ci, K, K, K}, wv);

  for (auto [s, p] : std::vector<std::pair<int, int>>{{1, 1}, {2, 1}, {1, 0}}) {
    Tensor y = conv3d(x, w, s, p);
    const int Do = (D + 2 * p - K) / s + 1, Ho = (H + 2 * p - K) / s + 1,
              Wo = (W + 2 * p - K) / s + 1;
    CHECK(y.shape() == Shape{B, Co, Do, Ho, Wo});
    auto ref = conv_reference(xv, wv, B, Ci, D, H, W, Co, K, K, K, s, p, Do, Ho, Wo);
    for (size_t i = 0; i < ref.size(); ++i)
      CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
  CHECK_THROWS_AS(conv3d(x, Tensor::zeros({3, 9, 3, 3, 3}), 1, 1), ShapeError);
  CHECK_THROWS_AS(conv3d(x, w, 0, 1), ShapeError);
  CHECK_THROWS_AS(conv3d(x, w, 1, -1), ShapeError);
}

TEST_CASE("conv3d gradients pass finite differences") {
  Tensor x = leaf({1, 2, 3, 3, 3}, ramp(54, -0.5, 0.19));
  Tensor w = leaf({2, 2, 2, 2, 2}, ramp(32, 0.2, 0.11));
  for (auto [s, p] : std::vector<std::pair<int, int>>{{1, 0}, {1, 1}, {2, 1}}) {
    CHECK(grad_check(
              [s, p](const std::vector<Tensor>& in) {
                Tensor y = conv3d(in[0], in[1], s, p);
                return sum(mul(y, y));
              },
              {x, w}, 1e-4) < 1e-6);
  }
}

TEST_CASE("conv_transpose3d is the adjoint of conv3d") {
  // <conv(x), y> == <x, convT(y)> for every x, y: the defining identity.
  // Geometry must be exact (stride divides the padded span) for the round trip.
  const int B = 1, Ci = 2, D = 5, H = 5, W = 3, Co = 3, K = 3, s = 2, p = 1;
  bcsi::Rng r(17);
  Tensor x = bcsi::gaussian(r, 0.0, 1.0, {B, Ci, D, H, W});
  Tensor w = bcsi::gaussian(r, 0.0, 1.0, {Co, Ci, K, K, K});
  Tensor cx = conv3d(x, w, s, p);
  Tensor y = bcsi::gaussian(r, 0.0, 1.0, cx.shape());
  Tensor cty = conv_transpose3d(y, w, s, p);
  CHECK(cty.shape() == x.shape());
  CHECK(sum(mul(cx, y)).item() == doctest::Approx(sum(mul(x, cty)).item()).epsilon(1e-10));
}

TEST_CASE("conv_transpose3d inverts the downsampling geometry") {
  Tensor x = Tensor::zeros({1, 4, 3, 3, 3});
  Tensor w = Tensor::zeros({4, 2, 2, 2, 2});
  Tensor y = conv_transpose3d(x, w, 2, 0);
  CHECK(y.shape() == Shape{1, 2, 6, 6, 6});
  CHECK_THROWS_AS(conv_transpose3d(x, Tensor::zeros({3, 2, 2, 2, 2}), 2, 0), ShapeError);
}

TEST_CASE("conv_transpose3d gradients pass finite differences") {
  Tensor x = leaf({1, 2, 2, 2, 2}, ramp(16, -0.3, 0.23));
  Tensor w = leaf({2, 2, 2, 2, 2}, ramp(32, 0.15, 0.13));
  for (auto [s, p] : std::vector<std::pair<int, int>>{{1, 0}, {2, 0}, {2, 1}}) {
    CHECK(grad_check(
              [s, p](const std::vector<Tensor>& in) {
                Tensor y = conv_transpose3d(in[0], in[1], s, p);
                return sum(mul(y, y));
              },
              {x, w}, 1e-4) < 1e-6);
  }
}

// ---- group norm --------------------------------------------------------------------

TEST_CASE("group_norm normalizes each group to zero mean, unit variance") {
  bcsi::Rng r(23);
  Tensor x = bcsi::gaussian(r, 3.0, 2.0, {2, 4, 2, 2, 2});
  Tensor gamma = Tensor::full({4}, 1.0);
  Tensor beta = Tensor::zeros({4});
  Tensor y = group_norm(x, gamma, beta, 2);
  // each (sample, group) slab: mean 0, var 1 up to eps
  const int64_t slab = 2 * 8;
  for (int64_t sl = 0; sl < 4; ++sl) {
    double m = 0.0, v = 0.0;
    for (int64_t i = 0; i < slab; ++i) m += y.data()[sl * slab + i];
    m /= slab;
    for (int64_t i = 0; i < slab; ++i) {
      const double e = y.data()[sl * slab + i] - m;
      v += e * e;
    }
    v /= slab;
    CHECK(m == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(v == doctest::Approx(1.0).epsilon(1e-3));  // eps shifts variance slightly
  }

  // gamma/beta apply per channel
  Tensor g2 = Tensor::from_vector({4}, {2.0, 3.0, 4.0, 5.0});
  Tensor b2 = Tensor::from_vector({4}, {10.0, 20.0, 30.0, 40.0});
  Tensor y2 = group_norm(x, g2, b2, 2);
  const int64_t ch = 8;
  for (int64_t i = 0; i < ch; ++i)
    CHECK(y2.data()[i] == doctest::Approx(2.0 * y.data()[i] + 10.0));

  CHECK_THROWS_AS(group_norm(x, gamma, beta, 3), ShapeError);
  CHECK_THROWS_AS(group_norm(x, Tensor::zeros({3}), beta, 2), ShapeError);
  CHECK_THROWS_AS(group_norm(x, gamma, beta, 2, 0.0), DomainError);
}

TEST_CASE("group_norm gradients pass finite differences") {
  Tensor x = leaf({2, 4, 2, 1, 2}, ramp(32, -0.9, 0.217));
  Tensor gamma = leaf({4}, {1.1, 0.9, 1.3, 0.7});
  Tensor beta = leaf({4}, {0.1, -0.2, 0.3, 0.0});
  for (int groups : {1, 2, 4}) {
    CHECK(grad_check(
              [groups](const std::vector<Tensor>& in) {
                Tensor y = group_norm(in[0], in[1], in[2], groups);
                return sum(mul(y, y));
              },
              {x, gamma, beta}, 1e-5) < 1e-6);
  }
}

// ---- random tensors -----------------------------------------------------------------

TEST_CASE("random tensors draw from the stream in linear order") {
  bcsi::Rng a(99), b(99);
  Tensor t = bcsi::gaussian(a, 0.5, 2.0, {2, 3});
  for (int i = 0; i < 6; ++i) CHECK(t.data()[i] == b.gaussian(0.5, 2.0));
  Tensor u = bcsi::uniform(a, -1.0, 1.0, {4});
  for (int i = 0; i < 4; ++i) {
    CHECK(u.data()[i] >= -1.0);
    CHECK(u.data()[i] < 1.0);
  }
  CHECK_FALSE(t.requires_grad());
}

// ---- composite sanity: a small network end to end -----------------------------------

TEST_CASE("composite graph gradient (conv + norm + relu + reduce)") {
  bcsi::Rng r(31);
  Tensor x = bcsi::gaussian(r, 0.0, 1.0, {1, 2, 3, 3, 3});
  Tensor w = bcsi::gaussian(r, 0.0, 0.5, {2, 2, 3, 3, 3}).set_requires_grad();
  Tensor gamma = Tensor::full({2}, 1.0).set_requires_grad();
  Tensor beta = Tensor::zeros({2}).set_requires_grad();
  Tensor wh = bcsi::gaussian(r, 0.0, 0.5, {1, 2, 1, 1, 1}).set_requires_grad();

  auto f = [&x](const std::vector<Tensor>& in) {
    Tensor h = conv3d(x, in[0], 1, 1);
    h = group_norm(h, in[1], in[2], 2);
    h = relu(h);
    h = conv3d(h, in[3], 1, 0);
    Tensor p = sigmoid(h);
    return mean(mul(p, p));
  };
  CHECK(grad_check(f, {w, gamma, beta, wh}, 1e-4) < 1e-6);
}
