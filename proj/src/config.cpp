#include "bcsi/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace bcsi {

namespace {

using nlohmann::json;

// every object level rejects keys it does not know
void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!allowed.count(key))
      throw ConfigError("config: unknown key \"" + where + key + "\"");
  }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void get_range(const json& j, const char* key, double& lo, double& hi) {
  if (!j.contains(key)) return;
  const auto r = j.at(key).get<std::array<double, 2>>();
  lo = r[0];
  hi = r[1];
}

}  // namespace

void OptimizerConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("optimizer.lr must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("optimizer.momentum must be in [0,1)");
  if (weight_decay < 0.0) throw ConfigError("optimizer.weight_decay must be >= 0");
}

void DataConfig::validate() const {
  if (n_cases < 2) throw ConfigError("data.n_cases must be >= 2");
  if (n_test < 0 || n_test >= n_cases) throw ConfigError("data.n_test must be in [0, n_cases)");
  if (labeled_ratio <= 0.0 || labeled_ratio >= 1.0)
    throw ConfigError("data.labeled_ratio must be in (0,1)");
}

void RunConfig::validate() const {
  if (t_max < 1) throw ConfigError("t_max must be >= 1");
  if (batch_labeled < 1 || batch_unlabeled < 1) throw ConfigError("batch sizes must be >= 1");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
  network.validate();
  optimizer.validate();
  data.validate();
  const int factor = network.downsample_factor();
  for (int a = 0; a < 3; ++a) {
    if (crop_size[a] < factor || crop_size[a] % factor != 0)
      throw ConfigError("crop_size must be a positive multiple of " + std::to_string(factor));
    if (crop_size[a] > data.gen.dims[a])
      throw ConfigError("crop_size exceeds the generated volume dims");
    if (data.gen.dims[a] % factor != 0)
      throw ConfigError("data.dims must be divisible by " + std::to_string(factor) +
                        " for full-volume evaluation");
  }
  if (router.channels != network.bottleneck_channels)
    throw ConfigError("router.channels must mirror network.bottleneck_channels");
  bci.validate();
  if (ablation.bci) {
    if (ablation.cr) router.validate();
    // interaction pairs batch item b of one stream with item b of the other
    if (batch_labeled != batch_unlabeled)
      throw ConfigError("bci requires batch_labeled == batch_unlabeled");
  }
  if (!(jitter.alpha_lo <= jitter.alpha_hi) || !(jitter.beta_lo <= jitter.beta_hi))
    throw ConfigError("jitter ranges must satisfy lo <= hi");
  if (jitter.sigma < 0.0) throw ConfigError("jitter.sigma must be >= 0");
  if (!(mix_ratio_lo > 0.0 && mix_ratio_hi <= 1.0 && mix_ratio_lo <= mix_ratio_hi))
    throw ConfigError("mix.ratio_range must satisfy 0 < lo <= hi <= 1");
}

Direction parse_direction(const std::string& s) {
  if (s == "none") return Direction::none;
  if (s == "l2u") return Direction::l2u;
  if (s == "u2l") return Direction::u2l;
  if (s == "both") return Direction::both;
  throw ConfigError("bci.direction must be one of none|l2u|u2l|both, got \"" + s + "\"");
}

std::string direction_name(Direction d) {
  switch (d) {
    case Direction::none: return "none";
    case Direction::l2u: return "l2u";
    case Direction::u2l: return "u2l";
    case Direction::both: return "both";
  }
  throw ConfigError("direction_name: bad enum value");
}

RouterMode parse_router_mode(const std::string& s) {
  if (s == "learned") return RouterMode::learned;
  if (s == "random") return RouterMode::random;
  throw ConfigError("router.mode must be learned|random, got \"" + s + "\"");
}

std::string router_mode_name(RouterMode m) {
  return m == RouterMode::learned ? "learned" : "random";
}

BciViews parse_bci_views(const std::string& s) {
  if (s == "weak") return BciViews::weak;
  if (s == "all") return BciViews::all;
  throw ConfigError("bci.views must be weak|all, got \"" + s + "\"");
}

std::string bci_views_name(BciViews v) { return v == BciViews::weak ? "weak" : "all"; }

RunConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }

  RunConfig c;
  try {
    check_keys(j, "", {"seed", "t_max", "batch_labeled", "batch_unlabeled", "crop_size",
                       "checkpoint_every", "data_dir", "out_dir", "network", "router", "bci",
                       "jitter", "mix", "optimizer", "ablation", "data"});
    get_if(j, "seed", c.seed);
    get_if(j, "t_max", c.t_max);
    get_if(j, "batch_labeled", c.batch_labeled);
    get_if(j, "batch_unlabeled", c.batch_unlabeled);
    get_if(j, "crop_size", c.crop_size);
    get_if(j, "checkpoint_every", c.checkpoint_every);
    get_if(j, "data_dir", c.data_dir);
    get_if(j, "out_dir", c.out_dir);

    if (j.contains("network")) {
      const json& n = j.at("network");
      check_keys(n, "network.", {"in_channels", "base_channels", "levels", "bottleneck_channels",
                                 "gn_groups", "out_channels"});
      get_if(n, "in_channels", c.network.in_channels);
      get_if(n, "base_channels", c.network.base_channels);
      get_if(n, "levels", c.network.levels);
      get_if(n, "bottleneck_channels", c.network.bottleneck_channels);
      get_if(n, "gn_groups", c.network.gn_groups);
      get_if(n, "out_channels", c.network.out_channels);
    }
    if (j.contains("router")) {
      const json& r = j.at("router");
      check_keys(r, "router.", {"k", "hidden_ratio", "mode"});
      get_if(r, "k", c.router.k);
      get_if(r, "hidden_ratio", c.router.hidden_ratio);
      if (r.contains("mode")) c.router_mode = parse_router_mode(r.at("mode").get<std::string>());
    }
    if (j.contains("bci")) {
      const json& b = j.at("bci");
      check_keys(b, "bci.", {"direction", "d_proj", "queue_capacity", "views"});
      if (b.contains("direction"))
        c.bci.direction = parse_direction(b.at("direction").get<std::string>());
      get_if(b, "d_proj", c.bci.d_proj);
      get_if(b, "queue_capacity", c.bci.queue_capacity);
      if (b.contains("views")) c.bci_views = parse_bci_views(b.at("views").get<std::string>());
    }
    if (j.contains("jitter")) {
      const json& jt = j.at("jitter");
      check_keys(jt, "jitter.", {"alpha", "beta", "mu", "sigma"});
      get_range(jt, "alpha", c.jitter.alpha_lo, c.jitter.alpha_hi);
      get_range(jt, "beta", c.jitter.beta_lo, c.jitter.beta_hi);
      get_if(jt, "mu", c.jitter.mu);
      get_if(jt, "sigma", c.jitter.sigma);
    }
    if (j.contains("mix")) {
      const json& m = j.at("mix");
      check_keys(m, "mix.", {"ratio_range"});
      get_range(m, "ratio_range", c.mix_ratio_lo, c.mix_ratio_hi);
    }
    if (j.contains("optimizer")) {
      const json& o = j.at("optimizer");
      check_keys(o, "optimizer.", {"lr", "momentum", "weight_decay"});
      get_if(o, "lr", c.optimizer.lr);
      get_if(o, "momentum", c.optimizer.momentum);
      get_if(o, "weight_decay", c.optimizer.weight_decay);
    }
    if (j.contains("ablation")) {
      const json& a = j.at("ablation");
      check_keys(a, "ablation.", {"ssp", "bci", "cr"});
      get_if(a, "ssp", c.ablation.ssp);
      get_if(a, "bci", c.ablation.bci);
      get_if(a, "cr", c.ablation.cr);
    }
    if (j.contains("data")) {
      const json& d = j.at("data");
      check_keys(d, "data.",
                 {"n_cases", "n_test", "labeled_ratio", "dims", "n_blobs", "radius_range",
                  "noise_sigma", "intensity_contrast", "background", "bias_amplitude",
                  "fg_range"});
      get_if(d, "n_cases", c.data.n_cases);
      get_if(d, "n_test", c.data.n_test);
      get_if(d, "labeled_ratio", c.data.labeled_ratio);
      get_if(d, "dims", c.data.gen.dims);
      get_if(d, "n_blobs", c.data.gen.n_blobs);
      get_range(d, "radius_range", c.data.gen.radius_lo, c.data.gen.radius_hi);
      get_if(d, "noise_sigma", c.data.gen.noise_sigma);
      get_if(d, "intensity_contrast", c.data.gen.intensity_contrast);
      get_if(d, "background", c.data.gen.background);
      get_if(d, "bias_amplitude", c.data.gen.bias_amplitude);
      get_range(d, "fg_range", c.data.gen.fg_min, c.data.gen.fg_max);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: mistyped value: ") + e.what());
  }

  c.router.channels = c.network.bottleneck_channels;
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["t_max"] = c.t_max;
  j["batch_labeled"] = c.batch_labeled;
  j["batch_unlabeled"] = c.batch_unlabeled;
  j["crop_size"] = c.crop_size;
  j["checkpoint_every"] = c.checkpoint_every;
  j["data_dir"] = c.data_dir;
  j["out_dir"] = c.out_dir;
  j["network"] = {{"in_channels", c.network.in_channels},
                  {"base_channels", c.network.base_channels},
                  {"levels", c.network.levels},
                  {"bottleneck_channels", c.network.bottleneck_channels},
                  {"gn_groups", c.network.gn_groups},
                  {"out_channels", c.network.out_channels}};
  j["router"] = {{"k", c.router.k},
                 {"hidden_ratio", c.router.hidden_ratio},
                 {"mode", router_mode_name(c.router_mode)}};
  j["bci"] = {{"direction", direction_name(c.bci.direction)},
              {"d_proj", c.bci.d_proj},
              {"queue_capacity", c.bci.queue_capacity},
              {"views", bci_views_name(c.bci_views)}};
  j["jitter"] = {{"alpha", {c.jitter.alpha_lo, c.jitter.alpha_hi}},
                 {"beta", {c.jitter.beta_lo, c.jitter.beta_hi}},
                 {"mu", c.jitter.mu},
                 {"sigma", c.jitter.sigma}};
  j["mix"] = {{"ratio_range", {c.mix_ratio_lo, c.mix_ratio_hi}}};
  j["optimizer"] = {{"lr", c.optimizer.lr},
                    {"momentum", c.optimizer.momentum},
                    {"weight_decay", c.optimizer.weight_decay}};
  j["ablation"] = {{"ssp", c.ablation.ssp}, {"bci", c.ablation.bci}, {"cr", c.ablation.cr}};
  j["data"] = {{"n_cases", c.data.n_cases},
               {"n_test", c.data.n_test},
               {"labeled_ratio", c.data.labeled_ratio},
               {"dims", c.data.gen.dims},
               {"n_blobs", c.data.gen.n_blobs},
               {"radius_range", {c.data.gen.radius_lo, c.data.gen.radius_hi}},
               {"noise_sigma", c.data.gen.noise_sigma},
               {"intensity_contrast", c.data.gen.intensity_contrast},
               {"background", c.data.gen.background},
               {"bias_amplitude", c.data.gen.bias_amplitude},
               {"fg_range", {c.data.gen.fg_min, c.data.gen.fg_max}}};
  return j.dump(2) + "\n";
}

}  // namespace bcsi
