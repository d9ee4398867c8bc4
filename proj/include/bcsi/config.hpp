#pragma once

#include <array>
#include <stdexcept>
#include <string>

#include "bcsi/augment.hpp"
#include "bcsi/interact.hpp"
#include "bcsi/router.hpp"
#include "bcsi/segnet.hpp"
#include "bcsi/volume.hpp"

// One JSON document configures a whole run: data generation, network, router,
// interaction, augmentation, optimizer, and the ablation toggles. Parsing is
// strict — unknown keys are rejected so typos cannot silently fall back to
// defaults — and omitted keys take the documented defaults.

namespace bcsi {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class RouterMode { learned, random };
enum class BciViews { weak, all };

struct OptimizerConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;

  void validate() const;
};

// ssp=false drops the strong views (weak-view self-training stands in for the
// weak-to-strong losses); bci=false removes router, queues and interaction;
// cr=false keeps interaction but feeds it all channels instead of a top-K.
struct AblationConfig {
  bool ssp = true;
  bool bci = true;
  bool cr = true;
};

struct DataConfig {
  int n_cases = 50;
  int n_test = 10;
  double labeled_ratio = 0.1;
  GeneratorParams gen;

  void validate() const;
};

struct RunConfig {
  uint64_t seed = 1;
  int t_max = 2000;
  int batch_labeled = 2;
  int batch_unlabeled = 2;
  std::array<int, 3> crop_size{24, 24, 24};
  int checkpoint_every = 500;
  std::string data_dir = "data";
  std::string out_dir = "run";

  NetworkConfig network;
  RouterConfig router;  // channels mirrors network.bottleneck_channels
  RouterMode router_mode = RouterMode::learned;
  InteractConfig bci;
  BciViews bci_views = BciViews::all;
  JitterConfig jitter;
  double mix_ratio_lo = 0.25;
  double mix_ratio_hi = 0.5;
  OptimizerConfig optimizer;
  AblationConfig ablation;
  DataConfig data;

  void validate() const;
};

// string <-> enum; unknown names throw ConfigError
Direction parse_direction(const std::string& s);
std::string direction_name(Direction d);
RouterMode parse_router_mode(const std::string& s);
std::string router_mode_name(RouterMode m);
BciViews parse_bci_views(const std::string& s);
std::string bci_views_name(BciViews v);

RunConfig parse_config(const std::string& json_text);  // strict keys, validated
RunConfig load_config(const std::string& path);
std::string dump_config(const RunConfig& cfg);  // parse(dump(c)) round-trips

}  // namespace bcsi
