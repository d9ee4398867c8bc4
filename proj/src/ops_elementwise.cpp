#include <cmath>

#include "op_common.hpp"

namespace bcsi {

using detail::broadcast_shape;
using detail::broadcast_strides;
using detail::for_each_2off;
using detail::GradStore;
using detail::row_major_strides;

namespace {

// Shared driver for broadcasting binary ops. `fwd(a,b)` produces the value,
// `dfa`/`dfb` produce the local partials at (a,b). Gradients accumulate through
// the same offset walk, which also performs the reduction over stretched axes.
template <typename F, typename Da, typename Db>
Tensor binary_op(const Tensor& a, const Tensor& b, F fwd, Da dfa, Db dfb) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const auto sa = broadcast_strides(a.shape(), out_shape);
  const auto sb = broadcast_strides(b.shape(), out_shape);
  const int64_t n = numel_of(out_shape);
  std::vector<double> out(static_cast<size_t>(n));
  {
    const double* pa = a.data();
    const double* pb = b.data();
    for_each_2off(out_shape, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) {
      out[static_cast<size_t>(i)] = fwd(pa[oa], pb[ob]);
    });
  }

  auto na = a.node();
  auto nb = b.node();
  // detached captures share storage without retaining tape nodes (no cycles)
  const Tensor ad = a.detach(), bd = b.detach();
  const int64_t an = a.numel(), bn = b.numel();

  return Tensor::make_op(
      out_shape, std::move(out), {a, b},
      [=](const double* g, GradStore& gs) {
        double* ga = na ? gs.buf_for(na.get(), an).data() : nullptr;
        double* gb = nb ? gs.buf_for(nb.get(), bn).data() : nullptr;
        const double* pa = ad.data();
        const double* pb = bd.data();
        for_each_2off(out_shape, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) {
          const double gi = g[i];
          if (ga) ga[oa] += gi * dfa(pa[oa], pb[ob]);
          if (gb) gb[ob] += gi * dfb(pa[oa], pb[ob]);
        });
      });
}

template <typename F, typename D>
Tensor unary_op(const Tensor& x, F fwd, D dfdx) {
  const int64_t n = x.numel();
  std::vector<double> out(static_cast<size_t>(n));
  const double* px = x.data();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = fwd(px[i]);

  auto nx = x.node();
  const Tensor xd = x.detach();
  return Tensor::make_op(x.shape(), std::move(out), {x},
                         [=](const double* g, GradStore& gs) {
                           double* gx = gs.buf_for(nx.get(), n).data();
                           const double* p = xd.data();
                           for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * dfdx(p[i]);
                         });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (int64_t i = 0; i < b.numel(); ++i)
    if (b.data()[i] == 0.0) throw DomainError("div: zero divisor");
  return binary_op(
      a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor add(const Tensor& a, double c) {
  return unary_op(
      a, [c](double x) { return x + c; }, [](double) { return 1.0; });
}

Tensor sub(double c, const Tensor& a) {
  return unary_op(
      a, [c](double x) { return c - x; }, [](double) { return -1.0; });
}

Tensor mul(const Tensor& a, double c) {
  return unary_op(
      a, [c](double x) { return x * c; }, [c](double) { return c; });
}

Tensor div(const Tensor& a, double c) {
  if (c == 0.0) throw DomainError("div: zero divisor");
  return mul(a, 1.0 / c);
}

Tensor mask_mul(const Tensor& x, const Tensor& mask) {
  const Shape out_shape = broadcast_shape(x.shape(), mask.shape());
  const auto sx = broadcast_strides(x.shape(), out_shape);
  const auto sm = broadcast_strides(mask.shape(), out_shape);
  const int64_t n = numel_of(out_shape);
  std::vector<double> out(static_cast<size_t>(n));
  const double* px = x.data();
  const double* pm = mask.data();
  for_each_2off(out_shape, sx, sm, [&](int64_t i, int64_t ox, int64_t om) {
    out[static_cast<size_t>(i)] = px[ox] * pm[om];
  });

  auto nx = x.node();
  const Tensor md = mask.detach();
  const int64_t xn = x.numel();
  return Tensor::make_op(out_shape, std::move(out), {x},
                         [=](const double* g, GradStore& gs) {
                           double* gx = gs.buf_for(nx.get(), xn).data();
                           const double* m = md.data();
                           for_each_2off(out_shape, sx, sm,
                                         [&](int64_t i, int64_t ox, int64_t om) {
                                           gx[ox] += g[i] * m[om];
                                         });
                         });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  // symmetric form avoids overflow for large |v|
  auto sg = [](double v) {
    return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  };
  return unary_op(x, sg, [sg](double v) {
    const double s = sg(v);
    return s * (1.0 - s);
  });
}

Tensor exp(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Tensor log(const Tensor& x) {
  for (int64_t i = 0; i < x.numel(); ++i)
    if (x.data()[i] <= 0.0) throw DomainError("log: input <= 0");
  return unary_op(
      x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Tensor power(const Tensor& x, double p) {
  return unary_op(
      x, [p](double v) { return std::pow(v, p); },
      [p](double v) { return p * std::pow(v, p - 1.0); });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw DomainError("clamp: lo > hi");
  return unary_op(
      x, [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); },
      [lo, hi](double v) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

}  // namespace bcsi
