#include <cmath>

#include "op_common.hpp"

namespace bcsi {

using detail::GradStore;

// Normalizes over each (sample, channel-group) slab; gamma/beta are per-channel.
// Biased variance, like the usual formulation.
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups,
                  double eps) {
  if (x.rank() < 2) throw ShapeError("group_norm: x must be rank >= 2 [B,C,...]");
  const int B = x.dim(0), C = x.dim(1);
  if (groups < 1 || C % groups != 0)
    throw ShapeError("group_norm: channels " + std::to_string(C) + " not divisible by groups " +
                     std::to_string(groups));
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
    throw ShapeError("group_norm: gamma/beta must be shape [C]");
  if (eps <= 0.0) throw DomainError("group_norm: eps must be positive");

  const int64_t spatial = x.numel() / (static_cast<int64_t>(B) * C);
  const int cg = C / groups;                       // channels per group
  const int64_t slab = cg * spatial;               // elements normalized together

  const int64_t n = x.numel();
  std::vector<double> out(static_cast<size_t>(n));
  const int64_t n_slabs = static_cast<int64_t>(B) * groups;
  auto mu = std::make_shared<std::vector<double>>(static_cast<size_t>(n_slabs));
  auto inv = std::make_shared<std::vector<double>>(static_cast<size_t>(n_slabs));

  const double* px = x.data();
  const double* pg = gamma.data();
  const double* pb = beta.data();
  for (int64_t sl = 0; sl < n_slabs; ++sl) {
    const double* src = px + sl * slab;
    double m = 0.0;
    for (int64_t i = 0; i < slab; ++i) m += src[i];
    m /= static_cast<double>(slab);
    double v = 0.0;
    for (int64_t i = 0; i < slab; ++i) {
      const double e = src[i] - m;
      v += e * e;
    }
    v /= static_cast<double>(slab);
    const double iv = 1.0 / std::sqrt(v + eps);
    (*mu)[static_cast<size_t>(sl)] = m;
    (*inv)[static_cast<size_t>(sl)] = iv;
    const int g0 = static_cast<int>(sl % groups) * cg;
    double* dst = out.data() + sl * slab;
    for (int c = 0; c < cg; ++c) {
      const double ga = pg[g0 + c], be = pb[g0 + c];
      for (int64_t i = 0; i < spatial; ++i) {
        const int64_t o = c * spatial + i;
        dst[o] = ga * (src[o] - m) * iv + be;
      }
    }
  }

  auto nx = x.node();
  auto ng = gamma.node();
  auto nb = beta.node();
  const Tensor xd = x.detach(), gd = gamma.detach();
  const int64_t xn = n;
  return Tensor::make_op(
      x.shape(), std::move(out), {x, gamma, beta}, [=](const double* g, GradStore& gs) {
        double* gx = nx ? gs.buf_for(nx.get(), xn).data() : nullptr;
        double* gga = ng ? gs.buf_for(ng.get(), C).data() : nullptr;
        double* gbe = nb ? gs.buf_for(nb.get(), C).data() : nullptr;
        const double* src_all = xd.data();
        const double* pga = gd.data();
        std::vector<double> xhat(static_cast<size_t>(slab));
        std::vector<double> dxhat(static_cast<size_t>(slab));
        for (int64_t sl = 0; sl < n_slabs; ++sl) {
          const double m = (*mu)[static_cast<size_t>(sl)];
          const double iv = (*inv)[static_cast<size_t>(sl)];
          const double* src = src_all + sl * slab;
          const double* gsl = g + sl * slab;
          const int g0 = static_cast<int>(sl % groups) * cg;

          for (int c = 0; c < cg; ++c)
            for (int64_t i = 0; i < spatial; ++i) {
              const int64_t o = c * spatial + i;
              xhat[static_cast<size_t>(o)] = (src[o] - m) * iv;
              dxhat[static_cast<size_t>(o)] = gsl[o] * pga[g0 + c];
            }

          if (gga || gbe)
            for (int c = 0; c < cg; ++c) {
              double sg = 0.0, sb = 0.0;
              for (int64_t i = 0; i < spatial; ++i) {
                const int64_t o = c * spatial + i;
                sg += gsl[o] * xhat[static_cast<size_t>(o)];
                sb += gsl[o];
              }
              if (gga) gga[g0 + c] += sg;
              if (gbe) gbe[g0 + c] += sb;
            }

          if (gx) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (int64_t o = 0; o < slab; ++o) {
              mean_d += dxhat[static_cast<size_t>(o)];
              mean_dx += dxhat[static_cast<size_t>(o)] * xhat[static_cast<size_t>(o)];
            }
            mean_d /= static_cast<double>(slab);
            mean_dx /= static_cast<double>(slab);
            double* dst = gx + sl * slab;
            for (int64_t o = 0; o < slab; ++o)
              dst[o] += iv * (dxhat[static_cast<size_t>(o)] - mean_d -
                              xhat[static_cast<size_t>(o)] * mean_dx);
          }
        }
      });
}

}  // namespace bcsi
