#include <algorithm>
#include <cstring>

#include "op_common.hpp"

namespace bcsi {
namespace detail {

// Register-blocked kernels tuned for a single core: k-panels sized to L1,
// j-panels to L2, rows unrolled by 4 so the inner j loop vectorizes.
namespace {
constexpr int64_t kNB = 1024;  // columns per panel
constexpr int64_t kKB = 240;   // depth per panel
}  // namespace

void gemm_nn(int64_t m, int64_t n, int64_t k, const double* A, const double* B, double* C) {
  for (int64_t j0 = 0; j0 < n; j0 += kNB) {
    const int64_t jl = std::min(j0 + kNB, n);
    for (int64_t k0 = 0; k0 < k; k0 += kKB) {
      const int64_t kl = std::min(k0 + kKB, k);
      int64_t i = 0;
      for (; i + 4 <= m; i += 4) {
        double* c0 = C + i * n;
        double* c1 = c0 + n;
        double* c2 = c1 + n;
        double* c3 = c2 + n;
        for (int64_t l = k0; l < kl; ++l) {
          const double a0 = A[i * k + l];
          const double a1 = A[(i + 1) * k + l];
          const double a2 = A[(i + 2) * k + l];
          const double a3 = A[(i + 3) * k + l];
          const double* b = B + l * n;
          for (int64_t j = j0; j < jl; ++j) {
            const double bv = b[j];
            c0[j] += a0 * bv;
            c1[j] += a1 * bv;
            c2[j] += a2 * bv;
            c3[j] += a3 * bv;
          }
        }
      }
      for (; i < m; ++i) {
        double* c0 = C + i * n;
        for (int64_t l = k0; l < kl; ++l) {
          const double a0 = A[i * k + l];
          const double* b = B + l * n;
          for (int64_t j = j0; j < jl; ++j) c0[j] += a0 * b[j];
        }
      }
    }
  }
}

void gemm_nt(int64_t m, int64_t n, int64_t k, const double* A, const double* B, double* C) {
  // dot-product form; 4 accumulators fix the summation order and let the
  // compiler vectorize without reassociation flags
  for (int64_t i = 0; i < m; ++i) {
    const double* a = A + i * k;
    for (int64_t j = 0; j < n; ++j) {
      const double* b = B + j * k;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      int64_t l = 0;
      for (; l + 4 <= k; l += 4) {
        s0 += a[l] * b[l];
        s1 += a[l + 1] * b[l + 1];
        s2 += a[l + 2] * b[l + 2];
        s3 += a[l + 3] * b[l + 3];
      }
      double s = (s0 + s1) + (s2 + s3);
      for (; l < k; ++l) s += a[l] * b[l];
      C[i * n + j] += s;
    }
  }
}

void gemm_tn(int64_t m, int64_t n, int64_t k, const double* A, const double* B, double* C) {
  for (int64_t j0 = 0; j0 < n; j0 += kNB) {
    const int64_t jl = std::min(j0 + kNB, n);
    for (int64_t k0 = 0; k0 < k; k0 += kKB) {
      const int64_t kl = std::min(k0 + kKB, k);
      int64_t i = 0;
      for (; i + 4 <= m; i += 4) {
        double* c0 = C + i * n;
        double* c1 = c0 + n;
        double* c2 = c1 + n;
        double* c3 = c2 + n;
        for (int64_t l = k0; l < kl; ++l) {
          const double a0 = A[l * m + i];
          const double a1 = A[l * m + i + 1];
          const double a2 = A[l * m + i + 2];
          const double a3 = A[l * m + i + 3];
          const double* b = B + l * n;
          for (int64_t j = j0; j < jl; ++j) {
            const double bv = b[j];
            c0[j] += a0 * bv;
            c1[j] += a1 * bv;
            c2[j] += a2 * bv;
            c3[j] += a3 * bv;
          }
        }
      }
      for (; i < m; ++i) {
        double* c0 = C + i * n;
        for (int64_t l = k0; l < kl; ++l) {
          const double a0 = A[l * m + i];
          const double* b = B + l * n;
          for (int64_t j = j0; j < jl; ++j) c0[j] += a0 * b[j];
        }
      }
    }
  }
}

}  // namespace detail

using detail::gemm_nn;
using detail::gemm_nt;
using detail::gemm_tn;
using detail::GradStore;

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul: expects rank-2 operands");
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul: inner dims differ " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  std::vector<double> out(static_cast<size_t>(m * n), 0.0);
  gemm_nn(m, n, k, a.data(), b.data(), out.data());

  auto na = a.node();
  auto nb = b.node();
  const Tensor ad = a.detach(), bd = b.detach();
  return Tensor::make_op(
      {static_cast<int>(m), static_cast<int>(n)}, std::move(out), {a, b},
      [=](const double* g, GradStore& gs) {
        if (na) gemm_nt(m, k, n, g, bd.data(), gs.buf_for(na.get(), m * k).data());
        if (nb) gemm_tn(k, n, m, ad.data(), g, gs.buf_for(nb.get(), k * n).data());
      });
}

namespace {

struct ConvDims {
  int B, Ci, D, H, W;        // input volume
  int Co, kd, kh, kw;        // kernel
  int s, p;                  // stride, padding
  int Do, Ho, Wo;            // output volume
  int64_t Q;                 // Ci*kd*kh*kw, im2col rows
  int64_t P;                 // Do*Ho*Wo, im2col columns
};

ConvDims conv_dims(const Shape& xs, const Shape& ws, int stride, int padding) {
  if (xs.size() != 5 || ws.size() != 5)
    throw ShapeError("conv3d: x and w must be rank-5");
  if (stride < 1) throw ShapeError("conv3d: stride < 1");
  if (padding < 0) throw ShapeError("conv3d: negative padding");
  ConvDims d;
  d.B = xs[0]; d.Ci = xs[1]; d.D = xs[2]; d.H = xs[3]; d.W = xs[4];
  d.Co = ws[0]; d.kd = ws[2]; d.kh = ws[3]; d.kw = ws[4];
  if (ws[1] != d.Ci)
    throw ShapeError("conv3d: weight expects " + std::to_string(ws[1]) + " input channels, x has " +
                     std::to_string(d.Ci));
  d.s = stride; d.p = padding;
  auto out_len = [&](int in, int kk) {
    const int span = in + 2 * padding - kk;
    if (span < 0) throw ShapeError("conv3d: kernel larger than padded input");
    return span / stride + 1;
  };
  d.Do = out_len(d.D, d.kd);
  d.Ho = out_len(d.H, d.kh);
  d.Wo = out_len(d.W, d.kw);
  d.Q = static_cast<int64_t>(d.Ci) * d.kd * d.kh * d.kw;
  d.P = static_cast<int64_t>(d.Do) * d.Ho * d.Wo;
  return d;
}

// col[q][p]: q runs over (ci,kz,ky,kx), p over (do,ho,wo)
void im2col(const ConvDims& d, const double* x, double* col) {
  int64_t q = 0;
  for (int ci = 0; ci < d.Ci; ++ci)
    for (int kz = 0; kz < d.kd; ++kz)
      for (int ky = 0; ky < d.kh; ++ky)
        for (int kx = 0; kx < d.kw; ++kx, ++q) {
          double* row = col + q * d.P;
          const double* src = x + static_cast<int64_t>(ci) * d.D * d.H * d.W;
          int64_t p = 0;
          for (int zo = 0; zo < d.Do; ++zo) {
            const int z = zo * d.s - d.p + kz;
            for (int yo = 0; yo < d.Ho; ++yo) {
              const int y = yo * d.s - d.p + ky;
              if (z < 0 || z >= d.D || y < 0 || y >= d.H) {
                for (int xo = 0; xo < d.Wo; ++xo, ++p) row[p] = 0.0;
                continue;
              }
              const double* srow = src + (static_cast<int64_t>(z) * d.H + y) * d.W;
              for (int xo = 0; xo < d.Wo; ++xo, ++p) {
                const int u = xo * d.s - d.p + kx;
                row[p] = (u < 0 || u >= d.W) ? 0.0 : srow[u];
              }
            }
          }
        }
}

// adjoint of im2col: accumulates col back into the (unpadded) volume
void col2im(const ConvDims& d, const double* col, double* x) {
  int64_t q = 0;
  for (int ci = 0; ci < d.Ci; ++ci)
    for (int kz = 0; kz < d.kd; ++kz)
      for (int ky = 0; ky < d.kh; ++ky)
        for (int kx = 0; kx < d.kw; ++kx, ++q) {
          const double* row = col + q * d.P;
          double* dst = x + static_cast<int64_t>(ci) * d.D * d.H * d.W;
          int64_t p = 0;
          for (int zo = 0; zo < d.Do; ++zo) {
            const int z = zo * d.s - d.p + kz;
            for (int yo = 0; yo < d.Ho; ++yo) {
              const int y = yo * d.s - d.p + ky;
              if (z < 0 || z >= d.D || y < 0 || y >= d.H) {
                p += d.Wo;
                continue;
              }
              double* drow = dst + (static_cast<int64_t>(z) * d.H + y) * d.W;
              for (int xo = 0; xo < d.Wo; ++xo, ++p) {
                const int u = xo * d.s - d.p + kx;
                if (u >= 0 && u < d.W) drow[u] += row[p];
              }
            }
          }
        }
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& w, int stride, int padding) {
  const ConvDims d = conv_dims(x.shape(), w.shape(), stride, padding);
  const Shape out_shape{d.B, d.Co, d.Do, d.Ho, d.Wo};
  std::vector<double> out(static_cast<size_t>(numel_of(out_shape)), 0.0);
  std::vector<double> col(static_cast<size_t>(d.Q * d.P));
  const int64_t x_bs = static_cast<int64_t>(d.Ci) * d.D * d.H * d.W;
  const int64_t o_bs = static_cast<int64_t>(d.Co) * d.P;
  for (int b = 0; b < d.B; ++b) {
    im2col(d, x.data() + b * x_bs, col.data());
    gemm_nn(d.Co, d.P, d.Q, w.data(), col.data(), out.data() + b * o_bs);
  }

  auto nx = x.node();
  auto nw = w.node();
  const Tensor xd = x.detach(), wd = w.detach();
  const int64_t xn = x.numel(), wn = w.numel();
  return Tensor::make_op(
      out_shape, std::move(out), {x, w}, [=](const double* g, GradStore& gs) {
        std::vector<double> colbuf(static_cast<size_t>(d.Q * d.P));
        double* gx = nx ? gs.buf_for(nx.get(), xn).data() : nullptr;
        double* gw = nw ? gs.buf_for(nw.get(), wn).data() : nullptr;
        for (int b = 0; b < d.B; ++b) {
          const double* gb = g + b * o_bs;
          if (gw) {
            im2col(d, xd.data() + b * x_bs, colbuf.data());
            gemm_nt(d.Co, d.Q, d.P, gb, colbuf.data(), gw);
          }
          if (gx) {
            std::fill(colbuf.begin(), colbuf.end(), 0.0);
            gemm_tn(d.Q, d.P, d.Co, wd.data(), gb, colbuf.data());
            col2im(d, colbuf.data(), gx + b * x_bs);
          }
        }
      });
}

Tensor conv_transpose3d(const Tensor& x, const Tensor& w, int stride, int padding) {
  // exact adjoint of conv3d in x: x plays the conv output role
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 5 || ws.size() != 5)
    throw ShapeError("conv_transpose3d: x and w must be rank-5");
  if (xs[1] != ws[0])
    throw ShapeError("conv_transpose3d: channel mismatch " + shape_str(xs) + " vs " +
                     shape_str(ws));
  if (stride < 1) throw ShapeError("conv_transpose3d: stride < 1");
  if (padding < 0) throw ShapeError("conv_transpose3d: negative padding");
  auto in_len = [&](int o, int kk) {
    const int v = (o - 1) * stride + kk - 2 * padding;
    if (v < 1) throw ShapeError("conv_transpose3d: output would be empty");
    return v;
  };
  const int D = in_len(xs[2], ws[2]), H = in_len(xs[3], ws[3]), W = in_len(xs[4], ws[4]);
  Shape vol_shape{xs[0], ws[1], D, H, W};
  const ConvDims d = conv_dims(vol_shape, ws, stride, padding);
  // round-trip consistency: conv of the result must give x's spatial dims
  if (d.Do != xs[2] || d.Ho != xs[3] || d.Wo != xs[4])
    throw ShapeError("conv_transpose3d: geometry mismatch");

  std::vector<double> out(static_cast<size_t>(numel_of(vol_shape)), 0.0);
  std::vector<double> col(static_cast<size_t>(d.Q * d.P));
  const int64_t v_bs = static_cast<int64_t>(d.Ci) * D * H * W;
  const int64_t x_bs = static_cast<int64_t>(d.Co) * d.P;
  for (int b = 0; b < d.B; ++b) {
    std::fill(col.begin(), col.end(), 0.0);
    gemm_tn(d.Q, d.P, d.Co, w.data(), x.data() + b * x_bs, col.data());
    col2im(d, col.data(), out.data() + b * v_bs);
  }

  auto nx = x.node();
  auto nw = w.node();
  const Tensor xd = x.detach(), wd = w.detach();
  const int64_t xn = x.numel(), wn = w.numel();
  return Tensor::make_op(
      vol_shape, std::move(out), {x, w}, [=](const double* g, GradStore& gs) {
        std::vector<double> colbuf(static_cast<size_t>(d.Q * d.P));
        double* gx = nx ? gs.buf_for(nx.get(), xn).data() : nullptr;
        double* gw = nw ? gs.buf_for(nw.get(), wn).data() : nullptr;
        for (int b = 0; b < d.B; ++b) {
          im2col(d, g + b * v_bs, colbuf.data());
          if (gx) gemm_nn(d.Co, d.P, d.Q, wd.data(), colbuf.data(), gx + b * x_bs);
          if (gw) gemm_nt(d.Co, d.Q, d.P, xd.data() + b * x_bs, colbuf.data(), gw);
        }
      });
}

}  // namespace bcsi
