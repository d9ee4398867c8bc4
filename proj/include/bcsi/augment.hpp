#pragma once

#include <array>

#include "bcsi/tensor.hpp"
#include "bcsi/volume.hpp"

// One weak and two strong views per case. Strong views are built ON TOP of the
// weak view's crop+flip geometry, so all three views of a case are voxel-aligned
// and weak predictions can serve directly as targets for the strong ones.

namespace bcsi {

enum class ViewKind { weak, strong_col, strong_mix };

struct AugmentedView {
  Tensor data;  // [D,H,W] crop, intensities
  ViewKind kind = ViewKind::weak;
  std::array<int, 3> crop_origin{0, 0, 0};
  std::array<bool, 3> flips{false, false, false};
  Tensor label;     // [D,H,W] binary, defined iff the source case had one
  Tensor mix_mask;  // binary box mask, defined iff kind == strong_mix
  int partner_id = -1;
  double alpha = 1.0, beta = 0.0, sigma = 0.0;  // jitter draw, strong_col only
};

struct JitterConfig {
  double alpha_lo = 0.8, alpha_hi = 1.2;
  double beta_lo = -0.1, beta_hi = 0.1;
  double mu = 0.0;
  double sigma = 0.05;
};

// Random crop plus independent per-axis flips; label follows the same
// geometry when given. Draw order: origin z,y,x then flips z,y,x.
AugmentedView weak_augment(const Volume& vol, const LabelVolume* label,
                           const std::array<int, 3>& crop_size, Rng& gen);

// clamp(alpha*x + beta + noise, 0, 1); geometry untouched.
// Draw order: alpha, beta, then one gaussian per voxel (skipped when sigma=0).
AugmentedView color_jitter(const AugmentedView& weak, const JitterConfig& cfg, Rng& gen);

// Binary box mask: per-axis extent a uniform draw in ratio_range * crop extent,
// origin uniform among valid positions. Draws: 3 extents then 3 origins.
Tensor make_mix_mask(const std::array<int, 3>& crop_size, double ratio_lo, double ratio_hi,
                     Rng& gen);

// target := mask*source + (1-mask)*target. Labels are NOT blended here; use
// mix_labels so callers decide which label pair applies.
AugmentedView copy_paste(const AugmentedView& target_weak, const AugmentedView& source_weak,
                         const Tensor& mix_mask, int partner_id);

Tensor mix_labels(const Tensor& y_target, const Tensor& y_source, const Tensor& mix_mask);

// (1 - mix_mask): the voxels whose content came from the view's own stream
Tensor restoration_region(const AugmentedView& view);

}  // namespace bcsi
