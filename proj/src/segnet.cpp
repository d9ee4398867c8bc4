#include "bcsi/segnet.hpp"

#include <cmath>

namespace bcsi {

void NetworkConfig::validate() const {
  if (levels < 2) throw ShapeError("network: levels must be >= 2");
  if (in_channels < 1 || base_channels < 1 || bottleneck_channels < 1 || out_channels < 1)
    throw ShapeError("network: channel counts must be >= 1");
  if (gn_groups < 1) throw ShapeError("network: gn_groups must be >= 1");
  for (int l = 0; l < levels; ++l)
    if (level_channels(l) % gn_groups != 0)
      throw ShapeError("network: gn_groups must divide the channel count at level " +
                       std::to_string(l));
}

int NetworkConfig::level_channels(int level) const {
  if (level == levels - 1) return bottleneck_channels;
  return base_channels << level;
}

int NetworkConfig::downsample_factor() const { return 1 << (levels - 1); }

SegNet::SegNet(NetworkConfig cfg) : cfg_(cfg) { cfg_.validate(); }

Tensor fan_in_uniform(Rng& gen, Shape shape, int64_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return uniform(gen, -bound, bound, std::move(shape));
}

namespace {

void add_conv(ParamSet& p, Rng& gen, const std::string& name, int co, int ci, int k) {
  p.add(name + ".w", fan_in_uniform(gen, {co, ci, k, k, k}, static_cast<int64_t>(ci) * k * k * k));
  p.add(name + ".b", Tensor::zeros({co}));
}

// transposed conv weight is [Cin, Cout, k,k,k]; fan-in counted on the input side
void add_convT(ParamSet& p, Rng& gen, const std::string& name, int ci, int co, int k) {
  p.add(name + ".w", fan_in_uniform(gen, {ci, co, k, k, k}, static_cast<int64_t>(ci) * k * k * k));
  p.add(name + ".b", Tensor::zeros({co}));
}

void add_gn(ParamSet& p, const std::string& name, int c) {
  p.add(name + ".gamma", Tensor::full({c}, 1.0));
  p.add(name + ".beta", Tensor::zeros({c}));
}

Tensor conv_bias(const Tensor& x, const ParamSet& p, const std::string& name, int stride,
                 int padding) {
  const Tensor& w = p.at(name + ".w");
  const Tensor& b = p.at(name + ".b");
  return conv3d(x, w, stride, padding) + reshape(b, {1, b.dim(0), 1, 1, 1});
}

Tensor convT_bias(const Tensor& x, const ParamSet& p, const std::string& name, int stride,
                  int padding) {
  const Tensor& w = p.at(name + ".w");
  const Tensor& b = p.at(name + ".b");
  return conv_transpose3d(x, w, stride, padding) + reshape(b, {1, b.dim(0), 1, 1, 1});
}

Tensor block(const Tensor& x, const ParamSet& p, const std::string& name, int groups) {
  Tensor h = conv_bias(x, p, name + ".conv", 1, 1);
  h = group_norm(h, p.at(name + ".gn.gamma"), p.at(name + ".gn.beta"), groups);
  return relu(h);
}

}  // namespace

void SegNet::init_params(ParamSet& p, Rng& gen) const {
  const auto& c = cfg_;
  int ch_in = c.in_channels;
  for (int l = 0; l < c.levels - 1; ++l) {
    const int ch = c.level_channels(l);
    add_conv(p, gen, "net.enc" + std::to_string(l) + ".block0.conv", ch, ch_in, 3);
    add_gn(p, "net.enc" + std::to_string(l) + ".block0.gn", ch);
    add_conv(p, gen, "net.enc" + std::to_string(l) + ".block1.conv", ch, ch, 3);
    add_gn(p, "net.enc" + std::to_string(l) + ".block1.gn", ch);
    const int ch_next = c.level_channels(l + 1);
    add_conv(p, gen, "net.down" + std::to_string(l) + ".conv", ch_next, ch, 2);
    ch_in = ch_next;
  }
  add_conv(p, gen, "net.mid.block0.conv", ch_in, ch_in, 3);
  add_gn(p, "net.mid.block0.gn", ch_in);
  add_conv(p, gen, "net.mid.block1.conv", ch_in, ch_in, 3);
  add_gn(p, "net.mid.block1.gn", ch_in);

  for (int l = c.levels - 2; l >= 0; --l) {
    const int ch = c.level_channels(l);
    const int ch_deep = c.level_channels(l + 1);
    add_convT(p, gen, "net.dec" + std::to_string(l) + ".up", ch_deep, ch, 2);
    add_conv(p, gen, "net.dec" + std::to_string(l) + ".block0.conv", ch, 2 * ch, 3);
    add_gn(p, "net.dec" + std::to_string(l) + ".block0.gn", ch);
  }
  add_conv(p, gen, "net.head", c.out_channels, c.base_channels, 1);
}

EncodedFeatures SegNet::encode(const Tensor& x, const ParamSet& p) const {
  const auto& c = cfg_;
  if (x.rank() != 5 || x.dim(1) != c.in_channels)
    throw ShapeError("encode: expects [B," + std::to_string(c.in_channels) + ",D,H,W], got " +
                     shape_str(x.shape()));
  const int f = c.downsample_factor();
  for (int axis : {2, 3, 4})
    if (x.dim(axis) % f != 0)
      throw ShapeError("encode: spatial dims must be divisible by " + std::to_string(f));

  EncodedFeatures out;
  Tensor h = x;
  for (int l = 0; l < c.levels - 1; ++l) {
    h = block(h, p, "net.enc" + std::to_string(l) + ".block0", c.gn_groups);
    h = block(h, p, "net.enc" + std::to_string(l) + ".block1", c.gn_groups);
    out.skips.push_back(h);
    h = conv_bias(h, p, "net.down" + std::to_string(l) + ".conv", 2, 0);
  }
  h = block(h, p, "net.mid.block0", c.gn_groups);
  h = block(h, p, "net.mid.block1", c.gn_groups);
  out.bottleneck = h;
  return out;
}

Tensor SegNet::decode(const EncodedFeatures& f, const ParamSet& p) const {
  const auto& c = cfg_;
  if (static_cast<int>(f.skips.size()) != c.levels - 1)
    throw ShapeError("decode: expected " + std::to_string(c.levels - 1) + " skip tensors");
  Tensor h = f.bottleneck;
  for (int l = c.levels - 2; l >= 0; --l) {
    h = convT_bias(h, p, "net.dec" + std::to_string(l) + ".up", 2, 0);
    const Tensor& skip = f.skips[static_cast<size_t>(l)];
    if (h.shape() != skip.shape())
      throw ShapeError("decode: upsampled shape " + shape_str(h.shape()) +
                       " does not match skip " + shape_str(skip.shape()));
    h = concat({h, skip}, 1);
    h = block(h, p, "net.dec" + std::to_string(l) + ".block0", c.gn_groups);
  }
  return conv_bias(h, p, "net.head", 1, 0);
}

Tensor SegNet::predict(const Tensor& x, const ParamSet& p) const {
  return sigmoid(decode(encode(x, p), p));
}

}  // namespace bcsi
