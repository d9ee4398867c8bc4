#include "bcsi/router.hpp"

#include <algorithm>
#include <numeric>

#include "bcsi/segnet.hpp"

namespace bcsi {

void RouterConfig::validate() const {
  if (channels < 1) throw ShapeError("router: channels must be >= 1");
  if (k < 1 || k > channels) throw ShapeError("router: k must satisfy 1 <= k <= channels");
  if (hidden_ratio < 1 || channels / hidden_ratio < 1)
    throw ShapeError("router: hidden_ratio leaves no hidden units");
}

void init_router(ParamSet& p, Rng& gen, const RouterConfig& cfg) {
  cfg.validate();
  const int c = cfg.channels;
  const int h = c / cfg.hidden_ratio;
  p.add("router.w1", fan_in_uniform(gen, {c, h}, c));
  p.add("router.b1", Tensor::zeros({h}));
  p.add("router.w2", fan_in_uniform(gen, {h, c}, h));
  p.add("router.b2", Tensor::zeros({c}));
}

Tensor score_channels(const Tensor& F, const ParamSet& p, const RouterConfig& cfg) {
  if (F.rank() != 5 || F.dim(1) != cfg.channels)
    throw ShapeError("score_channels: expects [B," + std::to_string(cfg.channels) +
                     ",d,h,w], got " + shape_str(F.shape()));
  const int hidden = cfg.channels / cfg.hidden_ratio;
  Tensor pooled = reshape(mean(F, {2, 3, 4}), {F.dim(0), cfg.channels});
  Tensor h = relu(matmul(pooled, p.at("router.w1")) + reshape(p.at("router.b1"), {1, hidden}));
  Tensor logits = matmul(h, p.at("router.w2")) + reshape(p.at("router.b2"), {1, cfg.channels});
  return sigmoid(logits);
}

ChannelMask topk_mask(const Tensor& scores, int k) {
  if (scores.rank() != 2) throw ShapeError("topk_mask: scores must be [B,C]");
  const int B = scores.dim(0), C = scores.dim(1);
  if (k < 1 || k > C) throw ShapeError("topk_mask: k out of range");

  ChannelMask m;
  m.k = k;
  m.indices.resize(static_cast<size_t>(B));
  const double* s = scores.data();
  for (int b = 0; b < B; ++b) {
    std::vector<int> order(static_cast<size_t>(C));
    std::iota(order.begin(), order.end(), 0);
    // stable sort by descending score keeps ties in index order
    std::stable_sort(order.begin(), order.end(), [&](int i, int j) {
      return s[static_cast<int64_t>(b) * C + i] > s[static_cast<int64_t>(b) * C + j];
    });
    auto& row = m.indices[static_cast<size_t>(b)];
    row.assign(order.begin(), order.begin() + k);
    std::sort(row.begin(), row.end());
  }
  return m;
}

ChannelMask random_mask(int batch, int channels, int k, Rng& gen) {
  if (k < 1 || k > channels) throw ShapeError("random_mask: k out of range");
  ChannelMask m;
  m.k = k;
  m.indices.resize(static_cast<size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    std::vector<int> pool(static_cast<size_t>(channels));
    std::iota(pool.begin(), pool.end(), 0);
    // partial Fisher-Yates: first k entries are a uniform subset
    for (int i = 0; i < k; ++i) {
      const auto j = i + static_cast<int>(gen.next_below(static_cast<uint64_t>(channels - i)));
      std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
    }
    auto& row = m.indices[static_cast<size_t>(b)];
    row.assign(pool.begin(), pool.begin() + k);
    std::sort(row.begin(), row.end());
  }
  return m;
}

Tensor select_channels_plain(const Tensor& F, const ChannelMask& mask) {
  return gather_channels(F, mask.indices);
}

Tensor select_channels(const Tensor& F, const Tensor& scores, const ChannelMask& mask) {
  Tensor g = gather_channels(F, mask.indices);
  Tensor s_sel = gather_channels(scores, mask.indices);  // [B,K]
  // forward contributes exactly zero (s - s in floating point), backward gives
  // d/ds = detach(g), the straight-through path into the scorer
  Tensor ste = mul(reshape(s_sel - s_sel.detach(), {g.dim(0), g.dim(1), 1, 1, 1}), g.detach());
  return g + ste;
}

}  // namespace bcsi
