#pragma once

#include "bcsi/params.hpp"
#include "bcsi/rng.hpp"
#include "bcsi/tensor.hpp"

// Small V-Net-style 3D encoder-decoder. One parameter set serves every view.
//
// Channel plan for `levels` resolution levels: level l < levels-1 carries
// base_channels * 2^l channels; the deepest level carries bottleneck_channels.
// Encoder levels apply (conv3 s1 p1 -> group norm -> relu) x2 then a stride-2
// conv; the decoder mirrors with stride-2 transposed convs, skip concatenation
// and one conv block per level; a 1x1x1 conv produces the single logit channel.
// Group norm instead of batch norm: the six views per step have heterogeneous
// statistics, and group norm keeps them independent.

namespace bcsi {

struct NetworkConfig {
  int in_channels = 1;
  int base_channels = 8;
  int levels = 3;
  int bottleneck_channels = 64;
  int gn_groups = 4;
  int out_channels = 1;

  void validate() const;
  int level_channels(int level) const;  // level in [0, levels-1]
  int downsample_factor() const;        // 2^(levels-1)
};

struct EncodedFeatures {
  Tensor bottleneck;          // [B, C, d, h, w]
  std::vector<Tensor> skips;  // per level 0..levels-2, pre-downsample
};

class SegNet {
 public:
  explicit SegNet(NetworkConfig cfg);

  // registers all parameters under "net." names; fan-in-scaled uniform
  // weights, zero biases, unit gamma
  void init_params(ParamSet& params, Rng& gen) const;

  EncodedFeatures encode(const Tensor& x, const ParamSet& params) const;
  Tensor decode(const EncodedFeatures& f, const ParamSet& params) const;  // logits
  Tensor predict(const Tensor& x, const ParamSet& params) const;          // sigmoid

  const NetworkConfig& config() const { return cfg_; }

 private:
  NetworkConfig cfg_;
};

// shared initializer: uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]
Tensor fan_in_uniform(Rng& gen, Shape shape, int64_t fan_in);

}  // namespace bcsi
