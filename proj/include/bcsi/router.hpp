#pragma once

#include "bcsi/params.hpp"
#include "bcsi/rng.hpp"
#include "bcsi/tensor.hpp"

// Channel-selective router: pool -> perceptron -> sigmoid scores, hard top-K
// selection with a straight-through gradient so the scorer stays trainable.

namespace bcsi {

struct RouterConfig {
  int channels = 64;
  int k = 16;
  int hidden_ratio = 4;  // hidden width = channels / hidden_ratio

  void validate() const;
};

struct ChannelMask {
  std::vector<std::vector<int>> indices;  // per batch item, ascending, size K
  int k = 0;
};

// registers "router.w1/b1/w2/b2"
void init_router(ParamSet& params, Rng& gen, const RouterConfig& cfg);

// [B,C,d,h,w] -> sigmoid scores [B,C]; spatial global average pool first
Tensor score_channels(const Tensor& F, const ParamSet& params, const RouterConfig& cfg);

// per item the K largest scores, ties to the lowest channel index
ChannelMask topk_mask(const Tensor& scores, int k);

// uniformly random K-subset per item (router ablation mode)
ChannelMask random_mask(int batch, int channels, int k, Rng& gen);

// Gathers the selected channels in ascending order. Forward equals the plain
// gather exactly; backward also routes gradient into `scores` through a
// straight-through term (s - detach(s)) * detach(F_sel).
Tensor select_channels(const Tensor& F, const Tensor& scores, const ChannelMask& mask);

// gather without the score path, for random-mask and all-channel modes
Tensor select_channels_plain(const Tensor& F, const ChannelMask& mask);

}  // namespace bcsi
