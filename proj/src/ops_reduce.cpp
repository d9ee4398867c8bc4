#include <cmath>
#include <limits>

#include "op_common.hpp"

namespace bcsi {

using detail::broadcast_strides;
using detail::for_each_2off;
using detail::GradStore;
using detail::normalize_axes;
using detail::reduced_shape;
using detail::row_major_strides;

namespace {

// per-element offset map from x's linear order into the (keepdims) output
struct ReducePlan {
  Shape out_shape;            // as requested (keepdims honored)
  Shape keep_shape;           // keepdims=true variant, same numel as out
  std::vector<int64_t> sx;    // full strides of x
  std::vector<int64_t> so;    // output strides with 0 on reduced axes
  int64_t group = 1;          // elements folded into each output cell
};

ReducePlan plan_reduce(const Shape& in, const std::vector<int>& axes_in, bool keepdims) {
  ReducePlan p;
  const auto axes = normalize_axes(axes_in, static_cast<int>(in.size()));
  p.out_shape = reduced_shape(in, axes, keepdims);
  p.keep_shape = reduced_shape(in, axes, true);
  if (p.out_shape.empty()) p.out_shape = {1};
  if (p.keep_shape.empty()) p.keep_shape = {1};
  p.sx = row_major_strides(in);
  p.so = broadcast_strides(p.keep_shape, in);
  for (int a : axes) p.group *= in[static_cast<size_t>(a)];
  return p;
}

}  // namespace

Tensor sum(const Tensor& x, const std::vector<int>& axes, bool keepdims) {
  const ReducePlan p = plan_reduce(x.shape(), axes, keepdims);
  std::vector<double> out(static_cast<size_t>(numel_of(p.out_shape)), 0.0);
  const double* px = x.data();
  for_each_2off(x.shape(), p.sx, p.so,
                [&](int64_t, int64_t ox, int64_t oo) { out[static_cast<size_t>(oo)] += px[ox]; });

  auto nx = x.node();
  const Shape in_shape = x.shape();
  const int64_t xn = x.numel();
  return Tensor::make_op(p.out_shape, std::move(out), {x},
                         [=](const double* g, GradStore& gs) {
                           double* gx = gs.buf_for(nx.get(), xn).data();
                           for_each_2off(in_shape, p.sx, p.so,
                                         [&](int64_t, int64_t ox, int64_t oo) {
                                           gx[ox] += g[oo];
                                         });
                         });
}

Tensor mean(const Tensor& x, const std::vector<int>& axes, bool keepdims) {
  const ReducePlan p = plan_reduce(x.shape(), axes, keepdims);
  return mul(sum(x, axes, keepdims), 1.0 / static_cast<double>(p.group));
}

Tensor max(const Tensor& x, const std::vector<int>& axes, bool keepdims) {
  const ReducePlan p = plan_reduce(x.shape(), axes, keepdims);
  const int64_t on = numel_of(p.out_shape);
  std::vector<double> out(static_cast<size_t>(on), -std::numeric_limits<double>::infinity());
  // ties keep the lowest linear index: strict > while walking in linear order
  auto arg = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(on), int64_t{-1});
  const double* px = x.data();
  for_each_2off(x.shape(), p.sx, p.so, [&](int64_t, int64_t ox, int64_t oo) {
    if (px[ox] > out[static_cast<size_t>(oo)]) {
      out[static_cast<size_t>(oo)] = px[ox];
      (*arg)[static_cast<size_t>(oo)] = ox;
    }
  });

  auto nx = x.node();
  const int64_t xn = x.numel();
  return Tensor::make_op(p.out_shape, std::move(out), {x},
                         [=](const double* g, GradStore& gs) {
                           double* gx = gs.buf_for(nx.get(), xn).data();
                           for (int64_t o = 0; o < on; ++o)
                             gx[(*arg)[static_cast<size_t>(o)]] += g[o];
                         });
}

Tensor softmax(const Tensor& x, int axis) {
  const int rank = x.rank();
  if (axis < 0 || axis >= rank) throw ShapeError("softmax: axis out of range");
  const Shape& s = x.shape();
  const auto st = row_major_strides(s);
  const int64_t len = s[static_cast<size_t>(axis)];
  const int64_t step = st[static_cast<size_t>(axis)];
  const int64_t n = x.numel();
  const int64_t rows = n / len;

  // enumerate row base offsets: all index combinations with axis pinned to 0
  std::vector<int64_t> bases;
  bases.reserve(static_cast<size_t>(rows));
  {
    Shape outer = s;
    outer[static_cast<size_t>(axis)] = 1;
    std::vector<int64_t> zero(s.size(), 0);
    for_each_2off(outer, st, zero, [&](int64_t, int64_t off, int64_t) { bases.push_back(off); });
  }

  std::vector<double> out(static_cast<size_t>(n));
  const double* px = x.data();
  for (int64_t base : bases) {
    double m = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < len; ++j) m = std::max(m, px[base + j * step]);
    double z = 0.0;
    for (int64_t j = 0; j < len; ++j) {
      const double e = std::exp(px[base + j * step] - m);
      out[static_cast<size_t>(base + j * step)] = e;
      z += e;
    }
    for (int64_t j = 0; j < len; ++j) out[static_cast<size_t>(base + j * step)] /= z;
  }

  auto nx = x.node();
  auto y = std::make_shared<std::vector<double>>(out);
  return Tensor::make_op(s, std::move(out), {x}, [=](const double* g, GradStore& gs) {
    double* gx = gs.buf_for(nx.get(), n).data();
    const double* py = y->data();
    for (int64_t base : bases) {
      double dot = 0.0;
      for (int64_t j = 0; j < len; ++j) {
        const int64_t o = base + j * step;
        dot += g[o] * py[o];
      }
      for (int64_t j = 0; j < len; ++j) {
        const int64_t o = base + j * step;
        gx[o] += py[o] * (g[o] - dot);
      }
    }
  });
}

}  // namespace bcsi
