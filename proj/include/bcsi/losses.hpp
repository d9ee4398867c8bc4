#pragma once

#include "bcsi/tensor.hpp"

// The training objective: uncertainty-weighted segmentation loss (BCE + soft
// IoU), weak-to-strong losses with spatial restoration, strong-strong
// consistency, and the Gaussian warm-up schedule combining them.

namespace bcsi {

// beta * exp(-5 * (1 - t/t_max)^2); t beyond t_max clamps to beta
double lambda_u(double t, double t_max, double beta = 0.1);

// W = 1 + binary entropy of p normalized to [0,1]; constant (off the tape),
// values in [1,2], computed from the scored view's own detached prediction
Tensor uncertainty_weights(const Tensor& p_detached);

// weighted BCE + weighted soft IoU (eps = 1). `region` (binary, optional)
// restricts both terms; an all-zero region returns 0 and warns on stderr.
// p is differentiable; y, W, region enter as constants.
Tensor seg_loss(const Tensor& p, const Tensor& y, const Tensor& W,
                const Tensor* region = nullptr);

// hard pseudo-label 1[p_w >= 0.5] scores both strong views; the mix term is
// restricted to mix_region = the voxels whose content is the view's own
Tensor unsup_loss(const Tensor& p_col, const Tensor& p_mix, const Tensor& p_w_detached,
                  const Tensor& mix_region);

// mean squared difference of the strong predictions over mix_region
Tensor cons_loss(const Tensor& p_col, const Tensor& p_mix, const Tensor& mix_region);

// three labeled views against their ground truths; y_mix is the blended label
Tensor sup_loss(const Tensor& p_col, const Tensor& p_mix, const Tensor& p_w, const Tensor& y,
                const Tensor& y_mix);

struct LossBreakdown {
  Tensor total;  // scalar on the tape: l_sup + l_cons + lambda_u * l_unsup
  double l_sup = 0.0, l_cons = 0.0, l_unsup = 0.0, lambda = 0.0, total_value = 0.0;
};

LossBreakdown total_loss(const Tensor& l_sup, const Tensor& l_cons, const Tensor& l_unsup,
                         double t, double t_max);

}  // namespace bcsi
