#include "bcsi/trainer.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "bcsi/augment.hpp"
#include "bcsi/router.hpp"
#include "bcsi/segnet.hpp"

namespace bcsi {

namespace {

CaseData load_case(const std::string& dir, int id, bool with_label) {
  CaseData c;
  c.id = id;
  c.vol = read_volume(volume_path(dir, id));
  if (with_label) {
    c.label = read_label(label_path(dir, id));
    c.has_label = true;
  }
  return c;
}

// [D,H,W] crops -> [B,1,D,H,W]
Tensor stack_views(const std::vector<Tensor>& per_item) {
  std::vector<Tensor> rows;
  rows.reserve(per_item.size());
  for (const Tensor& t : per_item)
    rows.push_back(reshape(t, {1, 1, t.dim(0), t.dim(1), t.dim(2)}));
  return rows.size() == 1 ? rows[0] : concat(rows, 0);
}

ChannelMask all_channels(int batch, int channels) {
  ChannelMask m;
  m.k = channels;
  std::vector<int> all(static_cast<size_t>(channels));
  for (int c = 0; c < channels; ++c) all[static_cast<size_t>(c)] = c;
  m.indices.assign(static_cast<size_t>(batch), all);
  return m;
}

Tensor hard_label(const Tensor& p) {
  std::vector<double> h(static_cast<size_t>(p.numel()));
  const double* d = p.data();
  for (int64_t i = 0; i < p.numel(); ++i) h[static_cast<size_t>(i)] = d[i] >= 0.5 ? 1.0 : 0.0;
  return Tensor::from_vector(p.shape(), std::move(h));
}

struct Routed {
  Tensor sub;  // [B,K,d,h,w]
  ChannelMask mask;
};

// cr off -> every channel; random mode -> stream-independent random subset;
// learned -> scored top-K with the straight-through gather
Routed route_stream(const Tensor& F, TrainerState& s) {
  const RunConfig& cfg = s.cfg;
  Routed r;
  if (!cfg.ablation.cr) {
    r.mask = all_channels(F.dim(0), F.dim(1));
    r.sub = select_channels_plain(F, r.mask);
  } else if (cfg.router_mode == RouterMode::random) {
    r.mask = random_mask(F.dim(0), F.dim(1), cfg.router.k, s.router_gen);
    r.sub = select_channels_plain(F, r.mask);
  } else {
    Tensor scores = score_channels(F, s.params, cfg.router);
    r.mask = topk_mask(scores, cfg.router.k);
    r.sub = select_channels(F, scores, r.mask);
  }
  return r;
}

}  // namespace

DatasetManifest generate_dataset(const std::string& dir, const RunConfig& cfg, bool force) {
  cfg.validate();
  namespace fs = std::filesystem;
  if (fs::exists(dir) && !fs::is_empty(dir) && !force)
    throw ConfigError("generate_dataset: " + dir + " is not empty (use --force to overwrite)");
  fs::create_directories(dir);
  DatasetManifest m =
      make_split(cfg.data.n_cases, cfg.data.labeled_ratio, cfg.data.n_test, cfg.seed);
  m.generator_params = cfg.data.gen;
  const Rng cases = Rng(m.seed).child(0xDA7A);  // disjoint from the trainer substreams
  for (int id = 0; id < cfg.data.n_cases; ++id) {
    auto [vol, lab] =
        generate_case(cases.child(static_cast<uint64_t>(id)).next_u64(), cfg.data.gen);
    write_volume(volume_path(dir, id), vol);
    write_volume(label_path(dir, id), lab);
  }
  write_manifest(dir + "/manifest.json", m);
  return m;
}

Dataset load_dataset(const std::string& dir) {
  const DatasetManifest m = read_manifest(dir + "/manifest.json");
  Dataset d;
  for (int id : m.labeled_ids) d.labeled.push_back(load_case(dir, id, true));
  for (int id : m.unlabeled_ids) d.unlabeled.push_back(load_case(dir, id, false));
  for (int id : m.test_ids) d.test.push_back(load_case(dir, id, true));
  return d;
}

void require_dataset_matches(const std::string& dir, const RunConfig& cfg) {
  const DatasetManifest m = read_manifest(dir + "/manifest.json");
  if (m.generator_params.dims != cfg.data.gen.dims)
    throw ConfigError("dataset dims do not match config data.dims");
  const int total = static_cast<int>(m.labeled_ids.size() + m.unlabeled_ids.size() +
                                     m.test_ids.size());
  if (total != cfg.data.n_cases || static_cast<int>(m.test_ids.size()) != cfg.data.n_test)
    throw ConfigError("dataset split sizes do not match config data block");
}

TrainerState init_state(const RunConfig& cfg) {
  cfg.validate();
  const int factor = cfg.network.downsample_factor();
  const int64_t entry_len = static_cast<int64_t>(cfg.crop_size[0] / factor) *
                            (cfg.crop_size[1] / factor) * (cfg.crop_size[2] / factor);
  Rng root(cfg.seed);
  TrainerState s{cfg,
                 ParamSet{},
                 {},
                 FeatureQueue(cfg.bci.queue_capacity, entry_len),
                 FeatureQueue(cfg.bci.queue_capacity, entry_len),
                 root.child(2),
                 root.child(4),
                 0};

  Rng g_init = root.child(1);
  SegNet net(cfg.network);
  net.init_params(s.params, g_init);
  if (cfg.ablation.bci) {
    if (cfg.ablation.cr && cfg.router_mode == RouterMode::learned)
      init_router(s.params, g_init, cfg.router);
    init_interact(s.params, g_init, entry_len, cfg.bci);
    Rng g_queue = root.child(3);
    s.q_l.fill_random(g_queue);
    s.q_u.fill_random(g_queue);
  }

  s.momentum.resize(s.params.size());
  for (size_t i = 0; i < s.params.size(); ++i)
    s.momentum[i].assign(static_cast<size_t>(s.params.items()[i].second.numel()), 0.0);
  return s;
}

double poly_lr(const OptimizerConfig& opt, int64_t t, int64_t t_max) {
  if (t < 1 || t > t_max) throw DomainError("poly_lr: t must be in [1, t_max]");
  return opt.lr * std::pow(1.0 - static_cast<double>(t - 1) / static_cast<double>(t_max), 0.9);
}

LossBreakdown train_step(TrainerState& s, const Dataset& data) {
  const RunConfig& cfg = s.cfg;
  if (s.t >= cfg.t_max) throw DomainError("train_step: run already reached t_max");
  if (data.labeled.empty()) throw ConfigError("train_step: dataset has no labeled cases");
  const bool use_unlabeled = cfg.ablation.ssp || cfg.ablation.bci;
  if (use_unlabeled && data.unlabeled.empty())
    throw ConfigError("train_step: dataset has no unlabeled cases");
  const int64_t t = s.t + 1;
  const int B_l = cfg.batch_labeled;
  const int B_u = cfg.batch_unlabeled;

  // (1) sample cases, then build views: labeled weak, unlabeled weak, per
  // labeled item jitter + mix, per unlabeled item jitter + mix
  std::vector<int> li(static_cast<size_t>(B_l));
  for (int& i : li) i = static_cast<int>(s.data_gen.next_below(data.labeled.size()));
  std::vector<int> ui;
  if (use_unlabeled) {
    ui.resize(static_cast<size_t>(B_u));
    for (int& i : ui) i = static_cast<int>(s.data_gen.next_below(data.unlabeled.size()));
  }

  std::vector<AugmentedView> wl(static_cast<size_t>(B_l));
  for (int i = 0; i < B_l; ++i) {
    const CaseData& c = data.labeled[static_cast<size_t>(li[static_cast<size_t>(i)])];
    wl[static_cast<size_t>(i)] = weak_augment(c.vol, &c.label, cfg.crop_size, s.data_gen);
  }
  std::vector<AugmentedView> wu;
  for (size_t i = 0; i < ui.size(); ++i) {
    const CaseData& c = data.unlabeled[static_cast<size_t>(ui[i])];
    wu.push_back(weak_augment(c.vol, nullptr, cfg.crop_size, s.data_gen));
  }

  std::vector<AugmentedView> cl, ml, cu, mu;
  std::vector<Tensor> y_mix_rows;
  if (cfg.ablation.ssp) {
    for (int i = 0; i < B_l; ++i) {
      cl.push_back(color_jitter(wl[static_cast<size_t>(i)], cfg.jitter, s.data_gen));
      Tensor m = make_mix_mask(cfg.crop_size, cfg.mix_ratio_lo, cfg.mix_ratio_hi, s.data_gen);
      const int pi = (i + 1) % B_l;
      const int partner = data.labeled[static_cast<size_t>(li[static_cast<size_t>(pi)])].id;
      ml.push_back(copy_paste(wl[static_cast<size_t>(i)], wl[static_cast<size_t>(pi)], m, partner));
      y_mix_rows.push_back(
          mix_labels(wl[static_cast<size_t>(i)].label, wl[static_cast<size_t>(pi)].label, m));
    }
    for (int i = 0; i < B_u; ++i) {
      cu.push_back(color_jitter(wu[static_cast<size_t>(i)], cfg.jitter, s.data_gen));
      Tensor m = make_mix_mask(cfg.crop_size, cfg.mix_ratio_lo, cfg.mix_ratio_hi, s.data_gen);
      // the unlabeled mix pastes labeled content so both streams blend
      const int pi = i % B_l;
      const int partner = data.labeled[static_cast<size_t>(li[static_cast<size_t>(pi)])].id;
      mu.push_back(copy_paste(wu[static_cast<size_t>(i)], wl[static_cast<size_t>(pi)], m, partner));
    }
  }

  // (2) shared-parameter encoding of every view batch
  SegNet net(cfg.network);
  const auto batch_of = [](const std::vector<AugmentedView>& views) {
    std::vector<Tensor> rows;
    for (const AugmentedView& v : views) rows.push_back(v.data);
    return stack_views(rows);
  };
  EncodedFeatures e_wl = net.encode(batch_of(wl), s.params);
  EncodedFeatures e_wu, e_cl, e_ml, e_cu, e_mu;
  if (use_unlabeled) e_wu = net.encode(batch_of(wu), s.params);
  if (cfg.ablation.ssp) {
    e_cl = net.encode(batch_of(cl), s.params);
    e_ml = net.encode(batch_of(ml), s.params);
    e_cu = net.encode(batch_of(cu), s.params);
    e_mu = net.encode(batch_of(mu), s.params);
  }

  // (3) route and interact the same-kind pairs: weak first, then col, mix
  Routed r_wl, r_wu;
  Tensor b_wl = e_wl.bottleneck, b_wu;
  if (use_unlabeled) b_wu = e_wu.bottleneck;
  if (cfg.ablation.bci) {
    r_wl = route_stream(e_wl.bottleneck, s);
    r_wu = route_stream(e_wu.bottleneck, s);
    const InteractResult ir =
        bidirectional_interact(e_wl.bottleneck, e_wu.bottleneck, r_wl.sub, r_wu.sub, r_wl.mask,
                               r_wu.mask, s.q_l, s.q_u, s.params, cfg.bci);
    b_wl = ir.f_l;
    b_wu = ir.f_u;
  }
  Tensor b_cl, b_ml, b_cu, b_mu;
  if (cfg.ablation.ssp) {
    b_cl = e_cl.bottleneck;
    b_ml = e_ml.bottleneck;
    b_cu = e_cu.bottleneck;
    b_mu = e_mu.bottleneck;
    if (cfg.ablation.bci && cfg.bci_views == BciViews::all) {
      const Routed r_cl = route_stream(e_cl.bottleneck, s);
      const Routed r_cu = route_stream(e_cu.bottleneck, s);
      const InteractResult irc =
          bidirectional_interact(e_cl.bottleneck, e_cu.bottleneck, r_cl.sub, r_cu.sub, r_cl.mask,
                                 r_cu.mask, s.q_l, s.q_u, s.params, cfg.bci);
      b_cl = irc.f_l;
      b_cu = irc.f_u;
      const Routed r_ml = route_stream(e_ml.bottleneck, s);
      const Routed r_mu = route_stream(e_mu.bottleneck, s);
      const InteractResult irm =
          bidirectional_interact(e_ml.bottleneck, e_mu.bottleneck, r_ml.sub, r_mu.sub, r_ml.mask,
                                 r_mu.mask, s.q_l, s.q_u, s.params, cfg.bci);
      b_ml = irm.f_l;
      b_mu = irm.f_u;
    }
  }

  // (4) decode every view to probabilities
  const auto decode_prob = [&](const EncodedFeatures& enc, const Tensor& bottleneck) {
    EncodedFeatures e = enc;
    e.bottleneck = bottleneck;
    return sigmoid(net.decode(e, s.params));
  };
  Tensor p_wl = decode_prob(e_wl, b_wl);
  Tensor p_wu, p_cl, p_ml, p_cu, p_mu;
  if (use_unlabeled) p_wu = decode_prob(e_wu, b_wu);
  if (cfg.ablation.ssp) {
    p_cl = decode_prob(e_cl, b_cl);
    p_ml = decode_prob(e_ml, b_ml);
    p_cu = decode_prob(e_cu, b_cu);
    p_mu = decode_prob(e_mu, b_mu);
  }

  // (5) the objective; SSP off drops the strong views, so the unlabeled part
  // degrades to weak-view self-training and consistency vanishes
  std::vector<Tensor> y_rows;
  for (const AugmentedView& v : wl) y_rows.push_back(v.label);
  Tensor y_l = stack_views(y_rows);
  Tensor l_sup_t, l_unsup_t = Tensor::scalar(0.0), l_cons_t = Tensor::scalar(0.0);
  if (cfg.ablation.ssp) {
    l_sup_t = sup_loss(p_cl, p_ml, p_wl, y_l, stack_views(y_mix_rows));
    std::vector<Tensor> region_rows;
    for (const AugmentedView& v : mu) region_rows.push_back(restoration_region(v));
    Tensor region_u = stack_views(region_rows);
    l_unsup_t = unsup_loss(p_cu, p_mu, p_wu.detach(), region_u);
    l_cons_t = cons_loss(p_cu, p_mu, region_u);
  } else {
    l_sup_t = seg_loss(p_wl, y_l, uncertainty_weights(p_wl));
    if (cfg.ablation.bci)
      l_unsup_t = seg_loss(p_wu, hard_label(p_wu), uncertainty_weights(p_wu));
  }
  LossBreakdown bd =
      total_loss(l_sup_t, l_cons_t, l_unsup_t, static_cast<double>(t),
                 static_cast<double>(cfg.t_max));
  if (!std::isfinite(bd.total_value))
    throw NumericError("train_step: non-finite loss at t=" + std::to_string(t) +
                       ": l_sup=" + std::to_string(bd.l_sup) +
                       " l_cons=" + std::to_string(bd.l_cons) +
                       " l_unsup=" + std::to_string(bd.l_unsup) +
                       " lambda_u=" + std::to_string(bd.lambda));

  // (6) backward, then SGD with weight decay, momentum and polynomial decay
  GradMap grads = backward(bd.total);
  const double lr = poly_lr(cfg.optimizer, t, cfg.t_max);
  for (size_t pi = 0; pi < s.params.size(); ++pi) {
    Tensor& theta = s.params.items()[pi].second;
    const Tensor g = grads.grad(theta);
    const double* gd = g.data();
    double* td = theta.mutable_data();
    std::vector<double>& v = s.momentum[pi];
    for (int64_t j = 0; j < theta.numel(); ++j) {
      const double gw = gd[j] + cfg.optimizer.weight_decay * td[j];
      v[static_cast<size_t>(j)] = cfg.optimizer.momentum * v[static_cast<size_t>(j)] + gw;
      td[j] -= lr * v[static_cast<size_t>(j)];
    }
  }

  // (7) remember the weak views: GT-masked labeled channels, pseudo-label-
  // masked unlabeled channels, both pre-interaction
  if (cfg.ablation.bci) {
    const int factor = cfg.network.downsample_factor();
    enqueue_masked(s.q_l, r_wl.sub.detach(), downsample_nearest(y_l, factor));
    enqueue_masked(s.q_u, r_wu.sub.detach(), downsample_nearest(hard_label(p_wu), factor));
  }

  s.t = t;
  return bd;
}

void save_state(const std::string& path, const TrainerState& s) {
  CheckpointData d;
  for (const auto& [name, theta] : s.params.items()) d.add(name, theta.detach());
  for (size_t i = 0; i < s.params.size(); ++i) {
    const auto& [name, theta] = s.params.items()[i];
    d.add("momentum." + name, Tensor::from_vector(theta.shape(), s.momentum[i]));
  }
  if (s.cfg.ablation.bci) {
    const auto dump = [](const FeatureQueue& q) {
      return Tensor::from_vector(
          {static_cast<int>(q.size()), static_cast<int>(q.entry_len())}, q.serialize());
    };
    d.add("queue.l", dump(s.q_l));
    d.add("queue.u", dump(s.q_u));
  }
  d.add("state.t", Tensor::from_vector({1}, {static_cast<double>(s.t)}));
  d.add("state.rng",
        Tensor::from_vector({4}, {u64_as_f64(s.data_gen.key()), u64_as_f64(s.data_gen.counter()),
                                  u64_as_f64(s.router_gen.key()),
                                  u64_as_f64(s.router_gen.counter())}));
  write_checkpoint(path, d);
}

void load_state(const std::string& path, TrainerState& s) {
  const CheckpointData d = read_checkpoint(path);
  const size_t expected =
      2 * s.params.size() + (s.cfg.ablation.bci ? 2 : 0) + 2;
  if (d.tensors.size() != expected)
    throw FormatError("load_state: checkpoint does not match the configured model");
  for (size_t i = 0; i < s.params.size(); ++i) {
    auto& [name, theta] = s.params.items()[i];
    const Tensor& src = d.at(name);
    const Tensor& mom = d.at("momentum." + name);
    if (src.shape() != theta.shape() || mom.shape() != theta.shape())
      throw FormatError("load_state: shape mismatch for " + name);
    std::memcpy(theta.mutable_data(), src.data(),
                static_cast<size_t>(theta.numel()) * sizeof(double));
    s.momentum[i].assign(mom.data(), mom.data() + mom.numel());
  }
  if (s.cfg.ablation.bci) {
    const auto restore_queue = [](FeatureQueue& q, const Tensor& t) {
      if (t.dim(1) != q.entry_len())
        throw FormatError("load_state: queue entry length mismatch");
      q.restore(std::vector<double>(t.data(), t.data() + t.numel()), t.dim(0));
    };
    restore_queue(s.q_l, d.at("queue.l"));
    restore_queue(s.q_u, d.at("queue.u"));
  }
  s.t = static_cast<int64_t>(d.at("state.t").data()[0]);
  const double* r = d.at("state.rng").data();
  s.data_gen.restore(f64_as_u64(r[0]), f64_as_u64(r[1]));
  s.router_gen.restore(f64_as_u64(r[2]), f64_as_u64(r[3]));
}

MetricsReport evaluate_cases(const TrainerState& s, const std::vector<CaseData>& cases) {
  if (cases.empty()) throw ConfigError("evaluate: no cases to score");
  SegNet net(s.cfg.network);
  const ParamSet frozen = s.params.detached();
  std::vector<CaseMetrics> rows;
  for (const CaseData& c : cases) {
    if (!c.has_label) throw ConfigError("evaluate: case without ground truth");
    Tensor x = Tensor::from_vector({1, 1, c.vol.D, c.vol.H, c.vol.W}, c.vol.voxels);
    const Tensor p = net.predict(x, frozen);
    LabelVolume pred;
    pred.D = c.vol.D;
    pred.H = c.vol.H;
    pred.W = c.vol.W;
    pred.mask.resize(static_cast<size_t>(p.numel()));
    const double* pd = p.data();
    for (int64_t i = 0; i < p.numel(); ++i)
      pred.mask[static_cast<size_t>(i)] = pd[i] > 0.5 ? 1 : 0;
    rows.push_back(compute_case_metrics(c.id, pred, c.label));
  }
  return summarize(std::move(rows));
}

void run_training(const RunConfig& cfg, const std::string& resume_path) {
  require_dataset_matches(cfg.data_dir, cfg);
  const Dataset data = load_dataset(cfg.data_dir);
  TrainerState s = init_state(cfg);
  if (!resume_path.empty()) load_state(resume_path, s);

  std::filesystem::create_directories(cfg.out_dir);
  {
    std::ofstream os(cfg.out_dir + "/config.json");
    if (!os) throw FormatError("run_training: cannot write config copy");
    os << dump_config(cfg);
  }
  const std::string csv_path = cfg.out_dir + "/loss.csv";
  const bool fresh =
      !std::filesystem::exists(csv_path) || std::filesystem::file_size(csv_path) == 0;
  std::ofstream csv(csv_path, std::ios::app);
  if (!csv) throw FormatError("run_training: cannot open " + csv_path);
  if (fresh) csv << "iter,l_sup,l_cons,l_unsup,lambda_u,total\n";
  csv << std::setprecision(17);

  while (s.t < cfg.t_max) {
    const LossBreakdown bd = train_step(s, data);
    csv << s.t << ',' << bd.l_sup << ',' << bd.l_cons << ',' << bd.l_unsup << ',' << bd.lambda
        << ',' << bd.total_value << '\n';
    if (s.t % cfg.checkpoint_every == 0) {
      if (s.t < cfg.t_max)
        save_state(cfg.out_dir + "/ckpt_" + std::to_string(s.t) + ".bck", s);
      std::cout << "t=" << s.t << "/" << cfg.t_max << " total=" << bd.total_value
                << " l_sup=" << bd.l_sup << " lambda_u=" << bd.lambda << "\n";
    }
  }
  save_state(cfg.out_dir + "/final.bck", s);
}

}  // namespace bcsi
