#include <algorithm>

#include "op_common.hpp"

namespace bcsi {

using detail::for_each_2off;
using detail::GradStore;
using detail::row_major_strides;

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (numel_of(new_shape) != x.numel())
    throw ShapeError("reshape: numel mismatch " + shape_str(x.shape()) + " -> " +
                     shape_str(new_shape));
  auto nx = x.node();
  const int64_t n = x.numel();
  return Tensor::make_op(std::move(new_shape), x.values(), {x},
                         [=](const double* g, GradStore& gs) {
                           gs.accumulate(nx, n, g);
                         });
}

Tensor transpose2d(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("transpose2d: expects rank-2, got " + shape_str(x.shape()));
  const int m = x.dim(0), n = x.dim(1);
  std::vector<double> out(static_cast<size_t>(x.numel()));
  const double* px = x.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = px[static_cast<int64_t>(i) * n + j];

  auto nx = x.node();
  const int64_t xn = x.numel();
  return Tensor::make_op({n, m}, std::move(out), {x},
                         [=](const double* g, GradStore& gs) {
                           double* gx = gs.buf_for(nx.get(), xn).data();
                           for (int j = 0; j < n; ++j)
                             for (int i = 0; i < m; ++i)
                               gx[static_cast<int64_t>(i) * n + j] += g[static_cast<int64_t>(j) * m + i];
                         });
}

Tensor slice(const Tensor& x, const std::vector<int>& starts, const std::vector<int>& sizes) {
  const Shape& s = x.shape();
  const size_t rank = s.size();
  if (starts.size() != rank || sizes.size() != rank)
    throw ShapeError("slice: starts/sizes rank mismatch");
  Shape out_shape(rank);
  for (size_t i = 0; i < rank; ++i) {
    if (sizes[i] < 1 || starts[i] < 0 || starts[i] + sizes[i] > s[i])
      throw ShapeError("slice: window out of bounds on axis " + std::to_string(i));
    out_shape[i] = sizes[i];
  }
  const auto sx = row_major_strides(s);
  int64_t base = 0;
  for (size_t i = 0; i < rank; ++i) base += static_cast<int64_t>(starts[i]) * sx[i];

  const int64_t n = numel_of(out_shape);
  std::vector<double> out(static_cast<size_t>(n));
  const double* px = x.data();
  const std::vector<int64_t> zero(rank, 0);
  for_each_2off(out_shape, sx, zero, [&](int64_t i, int64_t off, int64_t) {
    out[static_cast<size_t>(i)] = px[base + off];
  });

  auto nx = x.node();
  const int64_t xn = x.numel();
  return Tensor::make_op(out_shape, std::move(out), {x},
                         [=](const double* g, GradStore& gs) {
                           double* gx = gs.buf_for(nx.get(), xn).data();
                           for_each_2off(out_shape, sx, zero,
                                         [&](int64_t i, int64_t off, int64_t) {
                                           gx[base + off] += g[i];
                                         });
                         });
}

Tensor pad(const Tensor& x, const std::vector<int>& before, const std::vector<int>& after) {
  const Shape& s = x.shape();
  const size_t rank = s.size();
  if (before.size() != rank || after.size() != rank)
    throw ShapeError("pad: before/after rank mismatch");
  Shape out_shape(rank);
  for (size_t i = 0; i < rank; ++i) {
    if (before[i] < 0 || after[i] < 0) throw ShapeError("pad: negative padding");
    out_shape[i] = s[i] + before[i] + after[i];
  }
  const auto so = row_major_strides(out_shape);
  int64_t base = 0;
  for (size_t i = 0; i < rank; ++i) base += static_cast<int64_t>(before[i]) * so[i];

  std::vector<double> out(static_cast<size_t>(numel_of(out_shape)), 0.0);
  const double* px = x.data();
  const std::vector<int64_t> zero(rank, 0);
  for_each_2off(s, so, zero, [&](int64_t i, int64_t off, int64_t) {
    out[static_cast<size_t>(base + off)] = px[i];
  });

  auto nx = x.node();
  const int64_t xn = x.numel();
  const Shape in_shape = s;
  return Tensor::make_op(out_shape, std::move(out), {x},
                         [=](const double* g, GradStore& gs) {
                           double* gx = gs.buf_for(nx.get(), xn).data();
                           for_each_2off(in_shape, so, zero,
                                         [&](int64_t i, int64_t off, int64_t) {
                                           gx[i] += g[base + off];
                                         });
                         });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  const int rank = static_cast<int>(s0.size());
  if (axis < 0 || axis >= rank) throw ShapeError("concat: axis out of range");
  Shape out_shape = s0;
  for (size_t p = 1; p < parts.size(); ++p) {
    const Shape& sp = parts[p].shape();
    if (static_cast<int>(sp.size()) != rank) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < rank; ++i)
      if (i != axis && sp[static_cast<size_t>(i)] != s0[static_cast<size_t>(i)])
        throw ShapeError("concat: dim mismatch off the concat axis");
    out_shape[static_cast<size_t>(axis)] += sp[static_cast<size_t>(axis)];
  }

  // copy block-wise: outer = dims before axis, inner = dims after (contiguous)
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s0[static_cast<size_t>(i)];
  for (int i = axis + 1; i < rank; ++i) inner *= s0[static_cast<size_t>(i)];
  const int64_t out_axis = out_shape[static_cast<size_t>(axis)];

  std::vector<double> out(static_cast<size_t>(numel_of(out_shape)));
  std::vector<int64_t> axis_offsets(parts.size());
  {
    int64_t off = 0;
    for (size_t p = 0; p < parts.size(); ++p) {
      axis_offsets[p] = off;
      off += parts[p].dim(axis);
    }
  }
  for (size_t p = 0; p < parts.size(); ++p) {
    const double* src = parts[p].data();
    const int64_t len = parts[p].dim(axis);
    for (int64_t o = 0; o < outer; ++o)
      std::copy(src + o * len * inner, src + (o + 1) * len * inner,
                out.begin() + (o * out_axis + axis_offsets[p]) * inner);
  }

  std::vector<detail::NodePtr> nodes;
  std::vector<int64_t> lens, numels;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    lens.push_back(p.dim(axis));
    numels.push_back(p.numel());
  }
  return Tensor::make_op(
      out_shape, std::move(out), parts, [=](const double* g, GradStore& gs) {
        for (size_t p = 0; p < nodes.size(); ++p) {
          if (!nodes[p]) continue;
          double* gp = gs.buf_for(nodes[p].get(), numels[p]).data();
          for (int64_t o = 0; o < outer; ++o) {
            const double* src = g + (o * out_axis + axis_offsets[p]) * inner;
            double* dst = gp + o * lens[p] * inner;
            for (int64_t i = 0; i < lens[p] * inner; ++i) dst[i] += src[i];
          }
        }
      });
}

namespace {

void require_rank5(const Tensor& x, const char* op) {
  if (x.rank() != 5) throw ShapeError(std::string(op) + ": expects rank-5 [B,C,D,H,W]");
}

}  // namespace

Tensor upsample_nearest(const Tensor& x, int factor) {
  require_rank5(x, "upsample_nearest");
  if (factor < 1) throw ShapeError("upsample_nearest: factor < 1");
  const Shape& s = x.shape();
  const int B = s[0], C = s[1], D = s[2], H = s[3], W = s[4];
  const Shape out_shape{B, C, D * factor, H * factor, W * factor};
  std::vector<double> out(static_cast<size_t>(numel_of(out_shape)));
  const double* px = x.data();
  const int64_t Do = D * factor, Ho = H * factor, Wo = W * factor;
  for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
    const double* src = px + bc * D * H * W;
    double* dst = out.data() + bc * Do * Ho * Wo;
    for (int64_t z = 0; z < Do; ++z)
      for (int64_t y = 0; y < Ho; ++y) {
        const double* row = src + ((z / factor) * H + (y / factor)) * W;
        double* orow = dst + (z * Ho + y) * Wo;
        for (int64_t u = 0; u < Wo; ++u) orow[u] = row[u / factor];
      }
  }

  auto nx = x.node();
  const int64_t xn = x.numel();
  return Tensor::make_op(
      out_shape, std::move(out), {x}, [=](const double* g, GradStore& gs) {
        double* gx = gs.buf_for(nx.get(), xn).data();
        for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
          double* dst = gx + bc * D * H * W;
          const double* src = g + bc * Do * Ho * Wo;
          for (int64_t z = 0; z < Do; ++z)
            for (int64_t y = 0; y < Ho; ++y) {
              double* row = dst + ((z / factor) * H + (y / factor)) * W;
              const double* orow = src + (z * Ho + y) * Wo;
              for (int64_t u = 0; u < Wo; ++u) row[u / factor] += orow[u];
            }
        }
      });
}

Tensor downsample_nearest(const Tensor& x, int factor) {
  require_rank5(x, "downsample_nearest");
  if (factor < 1) throw ShapeError("downsample_nearest: factor < 1");
  const Shape& s = x.shape();
  const int B = s[0], C = s[1], D = s[2], H = s[3], W = s[4];
  if (D % factor || H % factor || W % factor)
    throw ShapeError("downsample_nearest: dims not divisible by factor");
  const int Do = D / factor, Ho = H / factor, Wo = W / factor;
  const Shape out_shape{B, C, Do, Ho, Wo};
  std::vector<double> out(static_cast<size_t>(numel_of(out_shape)));
  const double* px = x.data();
  for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
    const double* src = px + bc * D * H * W;
    double* dst = out.data() + bc * Do * Ho * Wo;
    for (int64_t z = 0; z < Do; ++z)
      for (int64_t y = 0; y < Ho; ++y)
        for (int64_t u = 0; u < Wo; ++u)
          dst[(z * Ho + y) * Wo + u] = src[((z * factor) * H + y * factor) * W + u * factor];
  }

  auto nx = x.node();
  const int64_t xn = x.numel();
  return Tensor::make_op(
      out_shape, std::move(out), {x}, [=](const double* g, GradStore& gs) {
        double* gx = gs.buf_for(nx.get(), xn).data();
        for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
          double* dst = gx + bc * D * H * W;
          const double* src = g + bc * Do * Ho * Wo;
          for (int64_t z = 0; z < Do; ++z)
            for (int64_t y = 0; y < Ho; ++y)
              for (int64_t u = 0; u < Wo; ++u)
                dst[((z * factor) * H + y * factor) * W + u * factor] +=
                    src[(z * Ho + y) * Wo + u];
        }
      });
}

namespace {

// [B,C,...] -> per-sample channel count and trailing block size
void split_bc(const Tensor& x, int& B, int& C, int64_t& block) {
  if (x.rank() < 2) throw ShapeError("channel gather/scatter: rank must be >= 2");
  B = x.dim(0);
  C = x.dim(1);
  block = x.numel() / (static_cast<int64_t>(B) * C);
}

void validate_indices(const std::vector<std::vector<int>>& idx, int B, int C, bool distinct) {
  if (static_cast<int>(idx.size()) != B)
    throw ShapeError("channel indices: need one row per batch sample");
  const size_t K = idx.empty() ? 0 : idx[0].size();
  for (const auto& row : idx) {
    if (row.size() != K) throw ShapeError("channel indices: ragged rows");
    if (row.empty()) throw ShapeError("channel indices: empty row");
    for (int c : row)
      if (c < 0 || c >= C) throw ShapeError("channel index out of range");
    if (distinct) {
      auto sorted = row;
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw ShapeError("channel indices: duplicates not allowed");
    }
  }
}

}  // namespace

Tensor gather_channels(const Tensor& x, const std::vector<std::vector<int>>& indices) {
  int B, C;
  int64_t block;
  split_bc(x, B, C, block);
  validate_indices(indices, B, C, /*distinct=*/false);
  const int K = static_cast<int>(indices[0].size());

  Shape out_shape = x.shape();
  out_shape[1] = K;
  std::vector<double> out(static_cast<size_t>(numel_of(out_shape)));
  const double* px = x.data();
  for (int b = 0; b < B; ++b)
    for (int k = 0; k < K; ++k)
      std::copy(px + (static_cast<int64_t>(b) * C + indices[b][k]) * block,
                px + (static_cast<int64_t>(b) * C + indices[b][k] + 1) * block,
                out.begin() + (static_cast<int64_t>(b) * K + k) * block);

  auto nx = x.node();
  const int64_t xn = x.numel();
  const auto idx = indices;
  return Tensor::make_op(
      out_shape, std::move(out), {x}, [=](const double* g, GradStore& gs) {
        double* gx = gs.buf_for(nx.get(), xn).data();
        for (int b = 0; b < B; ++b)
          for (int k = 0; k < K; ++k) {
            double* dst = gx + (static_cast<int64_t>(b) * C + idx[b][k]) * block;
            const double* src = g + (static_cast<int64_t>(b) * K + k) * block;
            for (int64_t i = 0; i < block; ++i) dst[i] += src[i];
          }
      });
}

Tensor scatter_channels(const Tensor& base, const Tensor& sub,
                        const std::vector<std::vector<int>>& indices) {
  int B, C;
  int64_t block;
  split_bc(base, B, C, block);
  validate_indices(indices, B, C, /*distinct=*/true);
  const int K = static_cast<int>(indices[0].size());
  Shape sub_expected = base.shape();
  sub_expected[1] = K;
  if (sub.shape() != sub_expected)
    throw ShapeError("scatter_channels: sub shape " + shape_str(sub.shape()) +
                     " does not match " + shape_str(sub_expected));

  std::vector<double> out = base.values();
  const double* ps = sub.data();
  for (int b = 0; b < B; ++b)
    for (int k = 0; k < K; ++k)
      std::copy(ps + (static_cast<int64_t>(b) * K + k) * block,
                ps + (static_cast<int64_t>(b) * K + k + 1) * block,
                out.begin() + (static_cast<int64_t>(b) * C + indices[b][k]) * block);

  auto nb = base.node();
  auto ns = sub.node();
  const int64_t bn = base.numel(), sn = sub.numel();
  const auto idx = indices;
  return Tensor::make_op(
      base.shape(), std::move(out), {base, sub}, [=](const double* g, GradStore& gs) {
        if (ns) {
          double* gsub = gs.buf_for(ns.get(), sn).data();
          for (int b = 0; b < B; ++b)
            for (int k = 0; k < K; ++k) {
              double* dst = gsub + (static_cast<int64_t>(b) * K + k) * block;
              const double* src = g + (static_cast<int64_t>(b) * C + idx[b][k]) * block;
              for (int64_t i = 0; i < block; ++i) dst[i] += src[i];
            }
        }
        if (nb) {
          // overwritten rows contribute nothing to the base gradient
          auto& gbase = gs.buf_for(nb.get(), bn);
          std::vector<double> masked(g, g + bn);
          for (int b = 0; b < B; ++b)
            for (int k = 0; k < K; ++k)
              std::fill(masked.begin() + (static_cast<int64_t>(b) * C + idx[b][k]) * block,
                        masked.begin() + (static_cast<int64_t>(b) * C + idx[b][k] + 1) * block,
                        0.0);
          for (int64_t i = 0; i < bn; ++i) gbase[static_cast<size_t>(i)] += masked[static_cast<size_t>(i)];
        }
      });
}

}  // namespace bcsi
