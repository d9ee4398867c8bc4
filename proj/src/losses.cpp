#include "bcsi/losses.hpp"

#include <cmath>
#include <iostream>

namespace bcsi {

namespace {

constexpr double kProbEps = 1e-7;

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

void require_binary(const Tensor& t, const char* what) {
  const double* d = t.data();
  for (int64_t i = 0; i < t.numel(); ++i)
    if (d[i] != 0.0 && d[i] != 1.0)
      throw DomainError(std::string(what) + ": values must be exactly 0 or 1");
}

// constant holding the product of the weight map with the optional region
Tensor effective_weights(const Tensor& W, const Tensor* region) {
  if (!region) return W.detach();
  require_same_shape(W, *region, "seg_loss region");
  require_binary(*region, "seg_loss region");
  std::vector<double> w(static_cast<size_t>(W.numel()));
  const double* wd = W.data();
  const double* rd = region->data();
  for (int64_t i = 0; i < W.numel(); ++i)
    w[static_cast<size_t>(i)] = wd[i] * rd[i];
  return Tensor::from_vector(W.shape(), std::move(w));
}

}  // namespace

double lambda_u(double t, double t_max, double beta) {
  if (t_max <= 0.0) throw DomainError("lambda_u: t_max must be positive");
  if (t < 0.0) throw DomainError("lambda_u: t must be >= 0");
  if (t > t_max) t = t_max;
  const double r = 1.0 - t / t_max;
  return beta * std::exp(-5.0 * r * r);
}

Tensor uncertainty_weights(const Tensor& p) {
  std::vector<double> w(static_cast<size_t>(p.numel()));
  const double* d = p.data();
  const double inv_log2 = 1.0 / std::log(2.0);
  for (int64_t i = 0; i < p.numel(); ++i) {
    const double q = std::min(std::max(d[i], kProbEps), 1.0 - kProbEps);
    w[static_cast<size_t>(i)] = 1.0 + (-q * std::log(q) - (1.0 - q) * std::log(1.0 - q)) * inv_log2;
  }
  return Tensor::from_vector(p.shape(), std::move(w));
}

Tensor seg_loss(const Tensor& p, const Tensor& y, const Tensor& W, const Tensor* region) {
  require_same_shape(p, y, "seg_loss");
  require_same_shape(p, W, "seg_loss weights");
  require_binary(y, "seg_loss target");

  Tensor w_eff = effective_weights(W, region);
  double w_total = 0.0;
  for (double v : w_eff.values()) w_total += v;
  if (w_total == 0.0) {
    std::cerr << "seg_loss: empty region, returning 0\n";
    return Tensor::scalar(0.0);
  }

  Tensor y_c = y.detach();
  Tensor ph = clamp(p, kProbEps, 1.0 - kProbEps);
  Tensor bce = mul(add(mul(y_c, log(ph)), mul(sub(1.0, y_c), log(sub(1.0, ph)))), -1.0);
  Tensor bce_term = mul(sum(mul(w_eff, bce)), 1.0 / w_total);

  constexpr double kIouEps = 1.0;
  Tensor inter = mul(p, y_c);
  Tensor uni = sub(add(p, y_c), inter);
  Tensor num = add(sum(mul(w_eff, inter)), kIouEps);
  Tensor den = add(sum(mul(w_eff, uni)), kIouEps);
  Tensor iou_term = sub(1.0, div(num, den));

  return add(bce_term, iou_term);
}

Tensor unsup_loss(const Tensor& p_col, const Tensor& p_mix, const Tensor& p_w,
                  const Tensor& mix_region) {
  require_same_shape(p_col, p_mix, "unsup_loss");
  require_same_shape(p_col, p_w, "unsup_loss");

  std::vector<double> hard(static_cast<size_t>(p_w.numel()));
  const double* d = p_w.data();
  for (int64_t i = 0; i < p_w.numel(); ++i)
    hard[static_cast<size_t>(i)] = d[i] >= 0.5 ? 1.0 : 0.0;
  Tensor y_hat = Tensor::from_vector(p_w.shape(), std::move(hard));

  Tensor col_term = seg_loss(p_col, y_hat, uncertainty_weights(p_col));
  Tensor mix_term = seg_loss(p_mix, y_hat, uncertainty_weights(p_mix), &mix_region);
  return add(col_term, mix_term);
}

Tensor cons_loss(const Tensor& p_col, const Tensor& p_mix, const Tensor& mix_region) {
  require_same_shape(p_col, p_mix, "cons_loss");
  require_same_shape(p_col, mix_region, "cons_loss region");
  require_binary(mix_region, "cons_loss region");
  double count = 0.0;
  for (double v : mix_region.values()) count += v;
  if (count == 0.0) {
    std::cerr << "cons_loss: empty region, returning 0\n";
    return Tensor::scalar(0.0);
  }
  Tensor diff = sub(p_col, p_mix);
  Tensor masked = mul(mul(diff, diff), mix_region.detach());
  return mul(sum(masked), 1.0 / count);
}

Tensor sup_loss(const Tensor& p_col, const Tensor& p_mix, const Tensor& p_w, const Tensor& y,
                const Tensor& y_mix) {
  Tensor a = seg_loss(p_col, y, uncertainty_weights(p_col));
  Tensor b = seg_loss(p_mix, y_mix, uncertainty_weights(p_mix));
  Tensor c = seg_loss(p_w, y, uncertainty_weights(p_w));
  return add(add(a, b), c);
}

LossBreakdown total_loss(const Tensor& l_sup, const Tensor& l_cons, const Tensor& l_unsup,
                         double t, double t_max) {
  LossBreakdown out;
  out.lambda = lambda_u(t, t_max);
  out.l_sup = l_sup.item();
  out.l_cons = l_cons.item();
  out.l_unsup = l_unsup.item();
  out.total = add(add(l_sup, l_cons), mul(l_unsup, out.lambda));
  out.total_value = out.total.item();
  return out;
}

}  // namespace bcsi
