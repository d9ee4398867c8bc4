#include "bcsi/augment.hpp"

#include <algorithm>

namespace bcsi {

namespace {

// crop + flip into a fresh buffer; works for both intensity and label data
template <typename Src>
std::vector<double> crop_flip(const Src* src, int D, int H, int W,
                              const std::array<int, 3>& origin, const std::array<int, 3>& size,
                              const std::array<bool, 3>& flips) {
  std::vector<double> out(static_cast<size_t>(size[0]) * size[1] * size[2]);
  size_t o = 0;
  for (int z = 0; z < size[0]; ++z) {
    const int sz = origin[0] + (flips[0] ? size[0] - 1 - z : z);
    for (int y = 0; y < size[1]; ++y) {
      const int sy = origin[1] + (flips[1] ? size[1] - 1 - y : y);
      for (int x = 0; x < size[2]; ++x, ++o) {
        const int sx = origin[2] + (flips[2] ? size[2] - 1 - x : x);
        out[o] = static_cast<double>(src[(static_cast<size_t>(sz) * H + sy) * W + sx]);
      }
    }
  }
  return out;
}

}  // namespace

AugmentedView weak_augment(const Volume& vol, const LabelVolume* label,
                           const std::array<int, 3>& crop_size, Rng& gen) {
  const std::array<int, 3> dims{vol.D, vol.H, vol.W};
  for (int i = 0; i < 3; ++i) {
    if (crop_size[i] < 1 || crop_size[i] > dims[i])
      throw ShapeError("weak_augment: crop size exceeds volume on axis " + std::to_string(i));
  }
  if (label && (label->D != vol.D || label->H != vol.H || label->W != vol.W))
    throw ShapeError("weak_augment: label dims do not match volume");

  AugmentedView v;
  v.kind = ViewKind::weak;
  for (int i = 0; i < 3; ++i)
    v.crop_origin[i] =
        static_cast<int>(gen.next_below(static_cast<uint64_t>(dims[i] - crop_size[i]) + 1));
  for (int i = 0; i < 3; ++i) v.flips[i] = gen.next_bool();

  v.data = Tensor::from_vector({crop_size[0], crop_size[1], crop_size[2]},
                               crop_flip(vol.voxels.data(), vol.D, vol.H, vol.W, v.crop_origin,
                                         crop_size, v.flips));
  if (label)
    v.label = Tensor::from_vector({crop_size[0], crop_size[1], crop_size[2]},
                                  crop_flip(label->mask.data(), vol.D, vol.H, vol.W,
                                            v.crop_origin, crop_size, v.flips));
  return v;
}

AugmentedView color_jitter(const AugmentedView& weak, const JitterConfig& cfg, Rng& gen) {
  if (cfg.alpha_lo <= 0.0) throw DomainError("color_jitter: alpha range must be positive");
  if (cfg.alpha_lo > cfg.alpha_hi || cfg.beta_lo > cfg.beta_hi)
    throw DomainError("color_jitter: inverted range");
  if (cfg.sigma < 0.0) throw DomainError("color_jitter: negative sigma");

  AugmentedView v = weak;
  v.kind = ViewKind::strong_col;
  v.alpha = gen.uniform(cfg.alpha_lo, cfg.alpha_hi);
  v.beta = gen.uniform(cfg.beta_lo, cfg.beta_hi);
  v.sigma = cfg.sigma;

  std::vector<double> out = weak.data.values();
  for (auto& x : out) {
    double e = v.alpha * x + v.beta;
    if (cfg.sigma > 0.0) e += gen.gaussian(cfg.mu, cfg.sigma);
    x = std::clamp(e, 0.0, 1.0);
  }
  v.data = Tensor::from_vector(weak.data.shape(), std::move(out));
  return v;
}

Tensor make_mix_mask(const std::array<int, 3>& crop_size, double ratio_lo, double ratio_hi,
                     Rng& gen) {
  if (!(ratio_lo > 0.0 && ratio_hi <= 1.0 && ratio_lo <= ratio_hi))
    throw DomainError("make_mix_mask: ratio range must satisfy 0 < lo <= hi <= 1");
  std::array<int, 3> extent, origin;
  for (int i = 0; i < 3; ++i) {
    const double r = gen.uniform(ratio_lo, ratio_hi);
    extent[i] = std::clamp(static_cast<int>(std::lround(r * crop_size[i])), 1, crop_size[i]);
  }
  for (int i = 0; i < 3; ++i)
    origin[i] =
        static_cast<int>(gen.next_below(static_cast<uint64_t>(crop_size[i] - extent[i]) + 1));

  std::vector<double> m(static_cast<size_t>(crop_size[0]) * crop_size[1] * crop_size[2], 0.0);
  for (int z = origin[0]; z < origin[0] + extent[0]; ++z)
    for (int y = origin[1]; y < origin[1] + extent[1]; ++y)
      std::fill(m.begin() + (static_cast<size_t>(z) * crop_size[1] + y) * crop_size[2] + origin[2],
                m.begin() + (static_cast<size_t>(z) * crop_size[1] + y) * crop_size[2] + origin[2] +
                    extent[2],
                1.0);
  return Tensor::from_vector({crop_size[0], crop_size[1], crop_size[2]}, std::move(m));
}

AugmentedView copy_paste(const AugmentedView& target_weak, const AugmentedView& source_weak,
                         const Tensor& mix_mask, int partner_id) {
  if (target_weak.data.shape() != source_weak.data.shape())
    throw ShapeError("copy_paste: views have different crop shapes");
  if (mix_mask.shape() != target_weak.data.shape())
    throw ShapeError("copy_paste: mask shape does not match crops");

  AugmentedView v = target_weak;
  v.kind = ViewKind::strong_mix;
  v.mix_mask = mix_mask;
  v.partner_id = partner_id;

  std::vector<double> out = target_weak.data.values();
  const double* src = source_weak.data.data();
  const double* m = mix_mask.data();
  for (size_t i = 0; i < out.size(); ++i)
    if (m[i] != 0.0) out[i] = src[i];  // exact copy inside the box
  v.data = Tensor::from_vector(target_weak.data.shape(), std::move(out));
  return v;
}

Tensor mix_labels(const Tensor& y_target, const Tensor& y_source, const Tensor& mix_mask) {
  if (y_target.shape() != y_source.shape() || y_target.shape() != mix_mask.shape())
    throw ShapeError("mix_labels: shape mismatch");
  std::vector<double> out = y_target.values();
  const double* src = y_source.data();
  const double* m = mix_mask.data();
  for (size_t i = 0; i < out.size(); ++i)
    if (m[i] != 0.0) out[i] = src[i];
  return Tensor::from_vector(y_target.shape(), std::move(out));
}

Tensor restoration_region(const AugmentedView& view) {
  if (view.kind != ViewKind::strong_mix || !view.mix_mask.defined())
    throw ShapeError("restoration_region: view is not a mix view");
  std::vector<double> out = view.mix_mask.values();
  for (auto& x : out) x = 1.0 - x;
  return Tensor::from_vector(view.mix_mask.shape(), std::move(out));
}

}  // namespace bcsi
