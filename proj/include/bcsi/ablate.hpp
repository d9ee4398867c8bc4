#pragma once

#include <string>
#include <vector>

#include "bcsi/config.hpp"

// The ablation harness: named preset cells over the toggle / K / direction /
// router-mode axes, trained with per-seed datasets shared across cells, then
// summarized as one CSV row per cell (metric means over seeds; each seed
// contributes its mean over unflagged test cases).

namespace bcsi {

struct AblationCell {
  std::string name;
  RunConfig cfg;  // the base config with the cell's overrides applied
};

// Presets: baseline, ssp, bci, full, k4 k8 k16 k32 k64, dir_none dir_l2u
// dir_u2l dir_both, router_learned, router_random. The toggle rows stack the
// components in order (baseline = none, ssp = +perturbation, bci = +full-
// channel interaction, full = +channel selection); the k/dir/router rows vary
// one axis of the full model. Unknown names throw ConfigError listing the
// presets. No validation here, so infeasible cells stay constructible for
// run_ablation to skip.
AblationCell make_cell(const std::string& name, const RunConfig& base);
const std::vector<std::string>& known_cells();

struct AblationRow {
  std::string cell;
  AblationConfig toggles;
  int k = 0;  // channels actually exchanged: 0 without interaction, C when selection is off
  Direction direction = Direction::both;
  RouterMode router_mode = RouterMode::learned;
  int seeds = 0;
  double dice = 0.0, jaccard = 0.0, hd95 = 0.0, asd = 0.0;
};

// Trains cells x seeds sequentially. Seed index s uses config seed
// base.seed + s and the dataset <out_dir>/data_s<s> shared by every cell;
// each run lives under <out_dir>/<cell>/s<s> (recreated, so reruns are clean).
// Cells whose K exceeds the channel pool are skipped with a stderr note and
// produce no row.
std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<std::string>& cells,
                                      int seeds, const std::string& out_dir);

// header: cell,ssp,bci,cr,k,direction,router,seeds,dice,jaccard,hd95,asd
void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);

}  // namespace bcsi
