#include "bcsi/gradsuite.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <sstream>
#include <utility>

#include "bcsi/augment.hpp"
#include "bcsi/config.hpp"
#include "bcsi/interact.hpp"
#include "bcsi/losses.hpp"
#include "bcsi/params.hpp"
#include "bcsi/router.hpp"
#include "bcsi/segnet.hpp"
#include "bcsi/tensor.hpp"
#include "bcsi/volume.hpp"

namespace bcsi {

namespace {

constexpr double kOpTol = 1e-6;     // single ops, central diff is O(h^2)
constexpr double kModelTol = 1e-5;  // deep compositions accumulate roundoff
constexpr double kMatchTol = 1e-10; // surrogate vs real pipeline at the base point

using LossFn = std::function<Tensor(const std::vector<Tensor>&)>;

Tensor leaf(Shape shape, std::vector<double> v) {
  Tensor t = Tensor::from_vector(std::move(shape), std::move(v));
  t.set_requires_grad();
  return t;
}

// deterministic values covering [lo,hi]; 23 is prime so the residues cycle
std::vector<double> varied(int64_t n, double lo, double hi) {
  std::vector<double> v(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    v[static_cast<size_t>(i)] = lo + (hi - lo) * static_cast<double>((i * 7 + 3) % 23) / 22.0;
  return v;
}

// same band with alternating signs; |value| >= |lo| keeps kinked ops smooth
std::vector<double> varied_signed(int64_t n, double lo, double hi) {
  std::vector<double> v = varied(n, lo, hi);
  for (int64_t i = 1; i < n; i += 2) v[static_cast<size_t>(i)] = -v[static_cast<size_t>(i)];
  return v;
}

// distinct per-coordinate weights so a mis-permuted backward cannot cancel out
Tensor wsum(const Tensor& t) {
  std::vector<double> w(static_cast<size_t>(t.numel()));
  for (int64_t i = 0; i < t.numel(); ++i)
    w[static_cast<size_t>(i)] = 0.15 + 0.04 * static_cast<double>((i * 11 + 5) % 29);
  return sum(mul(t, Tensor::from_vector(t.shape(), std::move(w))));
}

void add_entry(GradSuiteReport& rep, std::string name, double err, double tol) {
  rep.entries.push_back({std::move(name), err, tol, err < tol});
}

// ---- every differentiable op, full-coverage finite differences ---------------

void check_ops(GradSuiteReport& rep) {
  const auto one = [&](const char* name, const LossFn& f, std::vector<Tensor> inputs) {
    add_entry(rep, std::string("op.") + name, grad_check(f, inputs), kOpTol);
  };

  Tensor a23 = leaf({2, 3}, varied_signed(6, 0.3, 1.4));
  Tensor b23 = leaf({2, 3}, varied_signed(6, 0.5, 1.2));
  one("add", [](const std::vector<Tensor>& in) { return wsum(add(in[0], in[1])); }, {a23, b23});
  one("add_broadcast",
      [](const std::vector<Tensor>& in) { return wsum(add(in[0], in[1])); },
      {leaf({2, 3, 2}, varied_signed(12, 0.2, 1.1)), leaf({3, 1}, varied_signed(3, 0.4, 0.9))});
  one("sub", [](const std::vector<Tensor>& in) { return wsum(sub(in[0], in[1])); }, {a23, b23});
  one("mul", [](const std::vector<Tensor>& in) { return wsum(mul(in[0], in[1])); }, {a23, b23});
  // |divisor| >= 0.6 keeps the quotient away from the pole under the probe shift
  one("div", [](const std::vector<Tensor>& in) { return wsum(div(in[0], in[1])); },
      {a23, leaf({2, 3}, varied_signed(6, 0.6, 1.6))});
  one("add_scalar", [](const std::vector<Tensor>& in) { return wsum(add(in[0], 0.7)); }, {a23});
  one("sub_scalar", [](const std::vector<Tensor>& in) { return wsum(sub(1.3, in[0])); }, {a23});
  one("mul_scalar", [](const std::vector<Tensor>& in) { return wsum(mul(in[0], -0.8)); }, {a23});
  one("div_scalar", [](const std::vector<Tensor>& in) { return wsum(div(in[0], 1.7)); }, {a23});
  one("mask_mul",
      [](const std::vector<Tensor>& in) {
        Tensor m = Tensor::from_vector({2, 3}, {1.0, 0.0, 1.0, 1.0, 0.0, 1.0});
        return wsum(mask_mul(in[0], m));
      },
      {a23});

  // unary fixtures sit away from the relu/clamp kinks
  Tensor u = leaf({8}, {-1.7, -0.9, -0.35, -0.15, 0.2, 0.6, 1.1, 1.8});
  one("relu", [](const std::vector<Tensor>& in) { return wsum(relu(in[0])); }, {u});
  one("sigmoid", [](const std::vector<Tensor>& in) { return wsum(sigmoid(in[0])); }, {u});
  one("exp", [](const std::vector<Tensor>& in) { return wsum(bcsi::exp(in[0])); }, {u});
  Tensor pos = leaf({8}, varied(8, 0.4, 2.2));
  one("log", [](const std::vector<Tensor>& in) { return wsum(bcsi::log(in[0])); }, {pos});
  one("power", [](const std::vector<Tensor>& in) { return wsum(power(in[0], 2.7)); }, {pos});
  one("clamp",
      [](const std::vector<Tensor>& in) { return wsum(clamp(in[0], -1.0, 1.0)); },
      {leaf({8}, {-1.6, -1.25, -0.5, -0.2, 0.35, 0.8, 1.3, 1.7})});

  Tensor r232 = leaf({2, 3, 2}, varied_signed(12, 0.25, 1.5));
  one("sum_all", [](const std::vector<Tensor>& in) { return mul(sum(in[0]), 1.3); }, {r232});
  one("sum_axes", [](const std::vector<Tensor>& in) { return wsum(sum(in[0], {0, 2})); }, {r232});
  one("sum_keepdims",
      [](const std::vector<Tensor>& in) { return wsum(sum(in[0], {1}, true)); }, {r232});
  one("mean_all", [](const std::vector<Tensor>& in) { return mean(in[0]); }, {r232});
  one("mean_axes", [](const std::vector<Tensor>& in) { return wsum(mean(in[0], {1})); }, {r232});
  // distinct multiples of 0.11 (gcd(5,12)=1), so every max margin dwarfs h
  std::vector<double> distinct(12);
  for (int i = 0; i < 12; ++i) distinct[static_cast<size_t>(i)] = 0.11 * ((i * 5) % 12);
  Tensor dm = leaf({2, 3, 2}, distinct);
  one("max_all", [](const std::vector<Tensor>& in) { return max(in[0]); }, {dm});
  one("max_axes", [](const std::vector<Tensor>& in) { return wsum(max(in[0], {1})); }, {dm});
  Tensor sm = leaf({3, 4}, varied_signed(12, 0.2, 1.5));
  one("softmax_axis0",
      [](const std::vector<Tensor>& in) { return wsum(softmax(in[0], 0)); }, {sm});
  one("softmax_axis1",
      [](const std::vector<Tensor>& in) { return wsum(softmax(in[0], 1)); }, {sm});

  one("reshape", [](const std::vector<Tensor>& in) { return wsum(reshape(in[0], {4, 3})); },
      {r232});
  one("transpose2d",
      [](const std::vector<Tensor>& in) { return wsum(transpose2d(in[0])); }, {sm});
  one("slice",
      [](const std::vector<Tensor>& in) { return wsum(slice(in[0], {0, 1, 1}, {2, 2, 2})); },
      {leaf({2, 3, 4}, varied_signed(24, 0.2, 1.3))});
  one("pad",
      [](const std::vector<Tensor>& in) { return wsum(pad(in[0], {1, 0, 2}, {0, 2, 1})); },
      {leaf({2, 2, 2}, varied_signed(8, 0.3, 1.2))});
  one("concat",
      [](const std::vector<Tensor>& in) { return wsum(concat({in[0], in[1]}, 1)); },
      {leaf({2, 2, 3}, varied_signed(12, 0.2, 1.1)),
       leaf({2, 1, 3}, varied_signed(6, 0.4, 1.3))});
  one("upsample_nearest",
      [](const std::vector<Tensor>& in) { return wsum(upsample_nearest(in[0], 2)); },
      {leaf({1, 2, 2, 2, 2}, varied_signed(16, 0.2, 1.2))});
  one("downsample_nearest",
      [](const std::vector<Tensor>& in) { return wsum(downsample_nearest(in[0], 2)); },
      {leaf({1, 2, 4, 4, 4}, varied_signed(128, 0.2, 1.2))});
  one("gather_channels",
      [](const std::vector<Tensor>& in) {
        return wsum(gather_channels(in[0], {{0, 2}, {1, 3}}));
      },
      {leaf({2, 4, 3}, varied_signed(24, 0.2, 1.4))});
  one("scatter_channels",
      [](const std::vector<Tensor>& in) {
        return wsum(scatter_channels(in[0], in[1], {{0, 3}, {1, 2}}));
      },
      {leaf({2, 4, 3}, varied_signed(24, 0.2, 1.4)),
       leaf({2, 2, 3}, varied_signed(12, 0.3, 1.1))});

  one("matmul", [](const std::vector<Tensor>& in) { return wsum(matmul(in[0], in[1])); },
      {leaf({3, 4}, varied_signed(12, 0.2, 1.2)), leaf({4, 2}, varied_signed(8, 0.3, 1.1))});
  one("conv3d_s1p1",
      [](const std::vector<Tensor>& in) { return wsum(conv3d(in[0], in[1], 1, 1)); },
      {leaf({1, 2, 3, 3, 3}, varied_signed(54, 0.2, 1.2)),
       leaf({2, 2, 3, 3, 3}, varied_signed(108, 0.1, 0.8))});
  one("conv3d_s2p0",
      [](const std::vector<Tensor>& in) { return wsum(conv3d(in[0], in[1], 2, 0)); },
      {leaf({1, 1, 4, 4, 4}, varied_signed(64, 0.2, 1.2)),
       leaf({2, 1, 2, 2, 2}, varied_signed(16, 0.2, 0.9))});
  one("conv_transpose3d_s2",
      [](const std::vector<Tensor>& in) { return wsum(conv_transpose3d(in[0], in[1], 2, 0)); },
      {leaf({1, 2, 2, 2, 2}, varied_signed(16, 0.2, 1.2)),
       leaf({2, 3, 2, 2, 2}, varied_signed(48, 0.2, 0.9))});
  one("group_norm",
      [](const std::vector<Tensor>& in) { return wsum(group_norm(in[0], in[1], in[2], 2)); },
      {leaf({2, 4, 2, 2, 2}, varied_signed(64, 0.3, 1.6)), leaf({4}, varied(4, 0.7, 1.3)),
       leaf({4}, varied_signed(4, 0.2, 0.5))});
}

// ---- the miniature network end to end -----------------------------------------

void check_network(GradSuiteReport& rep) {
  NetworkConfig nc;
  nc.base_channels = 2;
  nc.levels = 2;
  nc.bottleneck_channels = 4;
  nc.gn_groups = 2;
  SegNet net(nc);
  ParamSet base;
  Rng gen(1337);
  net.init_params(base, gen);

  std::vector<Tensor> inputs;
  inputs.push_back(leaf({1, 1, 4, 4, 4}, varied(64, 0.05, 0.95)));
  for (auto& [name, t] : base.items()) inputs.push_back(t);
  auto f = [&](const std::vector<Tensor>& in) {
    ParamSet p;
    for (size_t i = 1; i < in.size(); ++i) p.add(base.items()[i - 1].first, in[i]);
    return wsum(net.predict(in[0], p));
  };
  add_entry(rep, "network.end_to_end", grad_check(f, inputs), kModelTol);
}

// ---- straight-through channel selection ---------------------------------------
//
// The hard selection adds (s - detach(s)) * detach(F_sel): exactly zero in the
// forward pass, so finite differences cannot see the score path directly.
// The surrogate gather(F) + (s_sel - s0) * g0, with s0/g0 frozen at the base
// point, has the same value and the same tape gradient there, but its score
// term is a live affine function that finite differences do see.

void check_router_ste(GradSuiteReport& rep) {
  const RouterConfig rc{6, 2, 2};
  // F > 0 keeps the pooled features positive; 0.25 weights below keep every
  // hidden relu unit alive, so the whole score path carries gradient
  Tensor F = leaf({2, 6, 2, 2, 2}, varied(96, 0.1, 1.3));
  ParamSet base;
  Rng gen(4242);
  init_router(base, gen, rc);
  for (const char* n : {"router.w1", "router.b1"}) {
    Tensor& t = base.at(n);
    double* d = t.mutable_data();
    for (int64_t i = 0; i < t.numel(); ++i) d[i] = 0.25;
  }

  Tensor s_base = score_channels(F, base, rc);
  const ChannelMask mask0 = topk_mask(s_base, rc.k);
  const Tensor s0 = reshape(gather_channels(s_base, mask0.indices), {2, rc.k, 1, 1, 1}).detach();
  const Tensor g0 = gather_channels(F, mask0.indices).detach();

  std::vector<Tensor> inputs{F, base.at("router.w1"), base.at("router.b1"),
                             base.at("router.w2"), base.at("router.b2")};
  auto f = [&](const std::vector<Tensor>& in) {
    ParamSet p;
    p.add("router.w1", in[1]);
    p.add("router.b1", in[2]);
    p.add("router.w2", in[3]);
    p.add("router.b2", in[4]);
    Tensor s = score_channels(in[0], p, rc);
    Tensor s_sel = reshape(gather_channels(s, mask0.indices), {2, rc.k, 1, 1, 1});
    return wsum(add(gather_channels(in[0], mask0.indices), mul(sub(s_sel, s0), g0)));
  };

  // at the base point the surrogate must BE the real selection: same value,
  // same gradient for every input
  Tensor real_loss = wsum(select_channels(F, s_base, mask0));
  Tensor surr_loss = f(inputs);
  double worst = std::abs(surr_loss.item() - real_loss.item()) /
                 std::max(1.0, std::abs(real_loss.item()));
  GradMap gr = backward(real_loss);
  GradMap gs = backward(surr_loss);
  for (const Tensor& in : inputs) {
    const Tensor a = gr.grad(in);
    const Tensor b = gs.grad(in);
    for (int64_t i = 0; i < in.numel(); ++i)
      worst = std::max(worst,
                       std::abs(a.data()[i] - b.data()[i]) / std::max(1.0, std::abs(a.data()[i])));
  }
  add_entry(rep, "router.straight_through_matches", worst, kMatchTol);
  add_entry(rep, "router.straight_through_fd", grad_check(f, inputs), kOpTol);
}

// ---- the full objective on a miniature config ----------------------------------
//
// Finite differences need a smooth function, but the real step re-derives its
// constants (uncertainty maps, hard pseudo-labels, top-K masks) from the
// perturbed predictions while the tape holds them fixed. The harness therefore
// freezes every such constant at the base point, swaps the hard selection for
// the straight-through surrogate above, and keeps everything else live. A
// full-coverage comparison against the real pipeline pins the frozen function
// to the real one at the base point; sampled central differences then verify
// the shared gradient.

struct StreamFreeze {
  ChannelMask mask;
  Tensor s0, g0;  // selected scores [B,K,1,1,1] and features [B,K,d,h,w]
};

struct ObjectiveFixture {
  RunConfig cfg;
  ParamSet params;
  FeatureQueue q_l, q_u;
  Tensor x_wl, x_wu, x_cl, x_cu, x_ml, x_mu;  // [1,1,8,8,8] views
  Tensor y_l, y_mix, region_u;
  StreamFreeze wl, wu, cl, cu, ml, mu;
  Tensor W_wl, W_cl, W_ml, W_cu, W_mu, yhat;
  double lambda = 0.0;
  LossBreakdown base;

  ObjectiveFixture(RunConfig c, int64_t entry_len)
      : cfg(std::move(c)),
        q_l(cfg.bci.queue_capacity, entry_len),
        q_u(cfg.bci.queue_capacity, entry_len) {}
};

Tensor to5(const Tensor& t) { return reshape(t, {1, 1, t.dim(0), t.dim(1), t.dim(2)}); }

Tensor hard(const Tensor& p) {
  std::vector<double> h(static_cast<size_t>(p.numel()));
  for (int64_t i = 0; i < p.numel(); ++i) h[static_cast<size_t>(i)] = p.data()[i] >= 0.5 ? 1.0 : 0.0;
  return Tensor::from_vector(p.shape(), std::move(h));
}

StreamFreeze freeze_stream(const Tensor& F, const ParamSet& p, const RouterConfig& rc) {
  StreamFreeze fz;
  Tensor s = score_channels(F, p, rc);
  fz.mask = topk_mask(s, rc.k);
  fz.s0 = reshape(gather_channels(s, fz.mask.indices), {F.dim(0), rc.k, 1, 1, 1}).detach();
  fz.g0 = gather_channels(F, fz.mask.indices).detach();
  return fz;
}

ObjectiveFixture build_objective_fixture() {
  RunConfig cfg;
  cfg.seed = 9;
  cfg.t_max = 10;
  cfg.batch_labeled = cfg.batch_unlabeled = 1;
  cfg.crop_size = {8, 8, 8};
  cfg.network.base_channels = 2;
  cfg.network.levels = 2;
  cfg.network.bottleneck_channels = 8;
  cfg.network.gn_groups = 2;
  cfg.router.channels = 8;
  cfg.router.k = 2;
  cfg.router.hidden_ratio = 2;
  cfg.bci.d_proj = 4;
  cfg.bci.queue_capacity = 6;
  cfg.data.gen.dims = {12, 12, 12};
  cfg.data.gen.radius_lo = 2.0;
  cfg.data.gen.radius_hi = 3.5;
  cfg.validate();

  const int factor = cfg.network.downsample_factor();
  const int64_t entry_len = static_cast<int64_t>(cfg.crop_size[0] / factor) *
                            (cfg.crop_size[1] / factor) * (cfg.crop_size[2] / factor);
  ObjectiveFixture fx(cfg, entry_len);

  // two real cases, the same view recipe as a training step at batch 1+1:
  // the labeled mix partner wraps around to itself, the unlabeled one pastes
  // labeled content
  auto [vol_l, lab_l] = generate_case(41, cfg.data.gen);
  auto [vol_u, lab_u] = generate_case(42, cfg.data.gen);
  Rng vg(271828);
  AugmentedView wl = weak_augment(vol_l, &lab_l, cfg.crop_size, vg);
  AugmentedView wu = weak_augment(vol_u, nullptr, cfg.crop_size, vg);
  AugmentedView cl = color_jitter(wl, cfg.jitter, vg);
  Tensor m_l = make_mix_mask(cfg.crop_size, cfg.mix_ratio_lo, cfg.mix_ratio_hi, vg);
  AugmentedView ml = copy_paste(wl, wl, m_l, wl.partner_id);
  Tensor y_mix = mix_labels(wl.label, wl.label, m_l);
  AugmentedView cu = color_jitter(wu, cfg.jitter, vg);
  Tensor m_u = make_mix_mask(cfg.crop_size, cfg.mix_ratio_lo, cfg.mix_ratio_hi, vg);
  AugmentedView mu = copy_paste(wu, wl, m_u, 0);

  fx.x_wl = to5(wl.data);
  fx.x_wu = to5(wu.data);
  fx.x_cl = to5(cl.data);
  fx.x_cu = to5(cu.data);
  fx.x_ml = to5(ml.data);
  fx.x_mu = to5(mu.data);
  fx.y_l = to5(wl.label);
  fx.y_mix = to5(y_mix);
  fx.region_u = to5(restoration_region(mu));

  Rng root(cfg.seed);
  Rng gi = root.child(1);
  SegNet net(cfg.network);
  net.init_params(fx.params, gi);
  init_router(fx.params, gi, cfg.router);
  init_interact(fx.params, gi, entry_len, cfg.bci);
  Rng gq = root.child(3);
  fx.q_l.fill_random(gq);
  fx.q_u.fill_random(gq);

  // base-point forward through the REAL pipeline, capturing every quantity
  // the tape treats as constant
  EncodedFeatures e_wl = net.encode(fx.x_wl, fx.params);
  EncodedFeatures e_wu = net.encode(fx.x_wu, fx.params);
  EncodedFeatures e_cl = net.encode(fx.x_cl, fx.params);
  EncodedFeatures e_ml = net.encode(fx.x_ml, fx.params);
  EncodedFeatures e_cu = net.encode(fx.x_cu, fx.params);
  EncodedFeatures e_mu = net.encode(fx.x_mu, fx.params);

  fx.wl = freeze_stream(e_wl.bottleneck, fx.params, cfg.router);
  fx.wu = freeze_stream(e_wu.bottleneck, fx.params, cfg.router);
  fx.cl = freeze_stream(e_cl.bottleneck, fx.params, cfg.router);
  fx.cu = freeze_stream(e_cu.bottleneck, fx.params, cfg.router);
  fx.ml = freeze_stream(e_ml.bottleneck, fx.params, cfg.router);
  fx.mu = freeze_stream(e_mu.bottleneck, fx.params, cfg.router);

  const auto select = [&](const Tensor& F, const StreamFreeze& fz) {
    return select_channels(F, score_channels(F, fx.params, cfg.router), fz.mask);
  };
  const InteractResult irw = bidirectional_interact(
      e_wl.bottleneck, e_wu.bottleneck, select(e_wl.bottleneck, fx.wl),
      select(e_wu.bottleneck, fx.wu), fx.wl.mask, fx.wu.mask, fx.q_l, fx.q_u, fx.params, cfg.bci);
  const InteractResult irc = bidirectional_interact(
      e_cl.bottleneck, e_cu.bottleneck, select(e_cl.bottleneck, fx.cl),
      select(e_cu.bottleneck, fx.cu), fx.cl.mask, fx.cu.mask, fx.q_l, fx.q_u, fx.params, cfg.bci);
  const InteractResult irm = bidirectional_interact(
      e_ml.bottleneck, e_mu.bottleneck, select(e_ml.bottleneck, fx.ml),
      select(e_mu.bottleneck, fx.mu), fx.ml.mask, fx.mu.mask, fx.q_l, fx.q_u, fx.params, cfg.bci);

  const auto dec = [&](const EncodedFeatures& e, const Tensor& b) {
    EncodedFeatures sub = e;
    sub.bottleneck = b;
    return sigmoid(net.decode(sub, fx.params));
  };
  Tensor p_wl = dec(e_wl, irw.f_l);
  Tensor p_wu = dec(e_wu, irw.f_u);
  Tensor p_cl = dec(e_cl, irc.f_l);
  Tensor p_cu = dec(e_cu, irc.f_u);
  Tensor p_ml = dec(e_ml, irm.f_l);
  Tensor p_mu = dec(e_mu, irm.f_u);

  Tensor l_sup = sup_loss(p_cl, p_ml, p_wl, fx.y_l, fx.y_mix);
  Tensor l_unsup = unsup_loss(p_cu, p_mu, p_wu.detach(), fx.region_u);
  Tensor l_cons = cons_loss(p_cu, p_mu, fx.region_u);
  fx.base = total_loss(l_sup, l_cons, l_unsup, 7.0, static_cast<double>(cfg.t_max));
  fx.lambda = lambda_u(7.0, static_cast<double>(cfg.t_max));

  fx.W_wl = uncertainty_weights(p_wl);
  fx.W_cl = uncertainty_weights(p_cl);
  fx.W_ml = uncertainty_weights(p_ml);
  fx.W_cu = uncertainty_weights(p_cu);
  fx.W_mu = uncertainty_weights(p_mu);
  fx.yhat = hard(p_wu);
  return fx;
}

// the frozen-constant objective: a smooth function of the parameters that
// coincides with the real one (value and tape gradient) at the base point
Tensor frozen_objective(const ObjectiveFixture& fx, const std::vector<Tensor>& in) {
  ParamSet p;
  for (size_t i = 0; i < in.size(); ++i) p.add(fx.params.items()[i].first, in[i]);
  SegNet net(fx.cfg.network);
  EncodedFeatures e_wl = net.encode(fx.x_wl, p);
  EncodedFeatures e_wu = net.encode(fx.x_wu, p);
  EncodedFeatures e_cl = net.encode(fx.x_cl, p);
  EncodedFeatures e_ml = net.encode(fx.x_ml, p);
  EncodedFeatures e_cu = net.encode(fx.x_cu, p);
  EncodedFeatures e_mu = net.encode(fx.x_mu, p);

  const auto sub_of = [&](const Tensor& F, const StreamFreeze& fz) {
    Tensor s = score_channels(F, p, fx.cfg.router);
    Tensor s_sel =
        reshape(gather_channels(s, fz.mask.indices), {F.dim(0), fx.cfg.router.k, 1, 1, 1});
    return add(gather_channels(F, fz.mask.indices), mul(sub(s_sel, fz.s0), fz.g0));
  };
  const InteractResult irw = bidirectional_interact(
      e_wl.bottleneck, e_wu.bottleneck, sub_of(e_wl.bottleneck, fx.wl),
      sub_of(e_wu.bottleneck, fx.wu), fx.wl.mask, fx.wu.mask, fx.q_l, fx.q_u, p, fx.cfg.bci);
  const InteractResult irc = bidirectional_interact(
      e_cl.bottleneck, e_cu.bottleneck, sub_of(e_cl.bottleneck, fx.cl),
      sub_of(e_cu.bottleneck, fx.cu), fx.cl.mask, fx.cu.mask, fx.q_l, fx.q_u, p, fx.cfg.bci);
  const InteractResult irm = bidirectional_interact(
      e_ml.bottleneck, e_mu.bottleneck, sub_of(e_ml.bottleneck, fx.ml),
      sub_of(e_mu.bottleneck, fx.mu), fx.ml.mask, fx.mu.mask, fx.q_l, fx.q_u, p, fx.cfg.bci);

  const auto dec = [&](const EncodedFeatures& e, const Tensor& b) {
    EncodedFeatures sub = e;
    sub.bottleneck = b;
    return sigmoid(net.decode(sub, p));
  };
  Tensor p_wl = dec(e_wl, irw.f_l);
  Tensor p_wu = dec(e_wu, irw.f_u);
  Tensor p_cl = dec(e_cl, irc.f_l);
  Tensor p_cu = dec(e_cu, irc.f_u);
  Tensor p_ml = dec(e_ml, irm.f_l);
  Tensor p_mu = dec(e_mu, irm.f_u);

  // mirrors sup_loss / unsup_loss / total_loss exactly, with the W maps and
  // the pseudo-label frozen instead of re-derived
  Tensor l_sup = add(add(seg_loss(p_cl, fx.y_l, fx.W_cl), seg_loss(p_ml, fx.y_mix, fx.W_ml)),
                     seg_loss(p_wl, fx.y_l, fx.W_wl));
  Tensor l_unsup =
      add(seg_loss(p_cu, fx.yhat, fx.W_cu), seg_loss(p_mu, fx.yhat, fx.W_mu, &fx.region_u));
  Tensor l_cons = cons_loss(p_cu, p_mu, fx.region_u);
  return add(add(l_sup, l_cons), mul(l_unsup, fx.lambda));
}

// deterministic coordinate sample per tensor; small tensors get full coverage
double sampled_fd_err(const LossFn& f, const std::vector<Tensor>& inputs, int per_tensor,
                      double h) {
  GradMap gm = backward(f(inputs));
  const auto eval_shifted = [&](size_t which, int64_t coord, double delta) {
    std::vector<Tensor> probe;
    probe.reserve(inputs.size());
    for (size_t m = 0; m < inputs.size(); ++m) {
      std::vector<double> v(inputs[m].data(), inputs[m].data() + inputs[m].numel());
      if (m == which) v[static_cast<size_t>(coord)] += delta;
      probe.push_back(Tensor::from_vector(inputs[m].shape(), std::move(v)));
    }
    return f(probe).item();
  };

  Rng pick(8675309);
  double worst = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const Tensor g = gm.grad(inputs[i]);
    const int64_t n = inputs[i].numel();
    std::vector<int64_t> coords;
    if (n <= per_tensor) {
      for (int64_t j = 0; j < n; ++j) coords.push_back(j);
    } else {
      std::vector<char> taken(static_cast<size_t>(n), 0);
      while (coords.size() < static_cast<size_t>(per_tensor)) {
        const int64_t j = static_cast<int64_t>(pick.next_below(static_cast<uint64_t>(n)));
        if (!taken[static_cast<size_t>(j)]) {
          taken[static_cast<size_t>(j)] = 1;
          coords.push_back(j);
        }
      }
    }
    for (int64_t j : coords) {
      const double cd = (eval_shifted(i, j, h) - eval_shifted(i, j, -h)) / (2.0 * h);
      worst = std::max(worst, std::abs(g.data()[j] - cd) / std::max(1.0, std::abs(cd)));
    }
  }
  return worst;
}

void check_objective(GradSuiteReport& rep) {
  const ObjectiveFixture fx = build_objective_fixture();
  std::vector<Tensor> inputs;
  for (const auto& [name, t] : fx.params.items()) inputs.push_back(t);
  const LossFn f = [&fx](const std::vector<Tensor>& in) { return frozen_objective(fx, in); };

  Tensor frozen = f(inputs);
  double worst = std::abs(frozen.item() - fx.base.total_value) /
                 std::max(1.0, std::abs(fx.base.total_value));
  GradMap gr = backward(fx.base.total);
  GradMap gf = backward(frozen);
  for (const Tensor& t : inputs) {
    const Tensor a = gr.grad(t);
    const Tensor b = gf.grad(t);
    for (int64_t i = 0; i < t.numel(); ++i)
      worst = std::max(worst,
                       std::abs(a.data()[i] - b.data()[i]) / std::max(1.0, std::abs(a.data()[i])));
  }
  add_entry(rep, "objective.frozen_matches_real", worst, kMatchTol);
  add_entry(rep, "objective.miniature_fd", sampled_fd_err(f, inputs, 32, 1e-5), kModelTol);
}

// ---- negative control -----------------------------------------------------------

void check_negative_control(GradSuiteReport& rep) {
  // sum(x * detach(x)) reports d/dx = x, the true derivative is 2x: the
  // checker must flag it, so this entry passes when the error is LARGE
  Tensor x = leaf({5}, {0.9, -1.4, 0.6, 1.8, -0.7});
  const double err = grad_check(
      [](const std::vector<Tensor>& in) { return sum(mul(in[0], in[0].detach())); }, {x});
  rep.entries.push_back({"negative_control.detached_factor_flagged", err, 0.1, err > 0.1});
}

}  // namespace

GradSuiteReport run_grad_suite(bool include_objective) {
  GradSuiteReport rep;
  check_ops(rep);
  check_network(rep);
  check_router_ste(rep);
  if (include_objective) check_objective(rep);
  check_negative_control(rep);
  rep.all_pass = true;
  for (const GradCheckEntry& e : rep.entries) rep.all_pass = rep.all_pass && e.pass;
  return rep;
}

std::string format_grad_report(const GradSuiteReport& rep) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(3);
  for (const GradCheckEntry& e : rep.entries)
    os << (e.pass ? "PASS" : "FAIL") << "  " << std::left << std::setw(40) << e.name
       << " max_rel_err=" << e.max_rel_err << " tol=" << e.tolerance << "\n";
  os << (rep.all_pass ? "grad suite: all checks passed" : "grad suite: FAILURES present") << "\n";
  return os.str();
}

}  // namespace bcsi
