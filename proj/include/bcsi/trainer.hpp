#pragma once

#include <string>
#include <vector>

#include "bcsi/checkpoint.hpp"
#include "bcsi/config.hpp"
#include "bcsi/interact.hpp"
#include "bcsi/losses.hpp"
#include "bcsi/metrics.hpp"
#include "bcsi/params.hpp"
#include "bcsi/volume.hpp"

// The full training step and run loop: three views per case, shared-encoder
// forward passes, per-view-kind routing and cross-stream interaction, the
// combined objective, SGD with momentum and polynomial lr decay, weak-view
// queue maintenance, and bitwise-resumable checkpoints.

namespace bcsi {

// a loss or gradient stopped being finite; the CLI maps this to exit code 2
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CaseData {
  int id = -1;
  Volume vol;
  LabelVolume label;   // empty for unlabeled cases
  bool has_label = false;
};

struct Dataset {
  std::vector<CaseData> labeled, unlabeled, test;
};

// Writes volume + label files for every case plus manifest.json. Case i is a
// pure function of (cfg.seed, i), so regeneration is byte-identical. Refuses
// an existing non-empty directory unless force is set; validates before any
// write.
DatasetManifest generate_dataset(const std::string& dir, const RunConfig& cfg, bool force);

// reads manifest.json and the referenced case files; ground truth is loaded
// for labeled and test cases only, so the unlabeled stream cannot leak labels
Dataset load_dataset(const std::string& dir);

// manifest must agree with the config: same dims and split sizes
void require_dataset_matches(const std::string& dir, const RunConfig& cfg);

struct TrainerState {
  RunConfig cfg;
  ParamSet params;
  std::vector<std::vector<double>> momentum;  // aligned with params.items()
  FeatureQueue q_l, q_u;
  Rng data_gen;    // batch sampling + augmentation draws
  Rng router_gen;  // random-mask router mode only
  int64_t t = 0;   // completed steps
};

// RNG substreams of the config seed: 1 = parameter init, 2 = data,
// 3 = queue fill (labeled then unlabeled), 4 = random router.
// Registers net.* always, router.* only for the learned router under
// {bci, cr}, bci.* whenever interaction is on. Queues start full.
TrainerState init_state(const RunConfig& cfg);

// lr(t) = lr0 * (1 - (t-1)/t_max)^0.9 for t in 1..t_max: the first step uses
// lr0 exactly and the last one stays positive
double poly_lr(const OptimizerConfig& opt, int64_t t, int64_t t_max);

// One optimization step, t = state.t + 1. Order: (1) sample cases and build
// views (labeled weak, unlabeled weak, then per labeled item jitter + mix
// draws, then per unlabeled item; unlabeled mix pastes from labeled weak
// item i % batch_labeled, labeled mix from labeled item (i+1) % batch);
// (2) encode all views with the shared encoder; (3) route and interact
// per view kind; (4) decode to probabilities; (5) losses; (6) backward and
// SGD update (grad + wd*theta, velocity, poly lr); (7) enqueue weak-view
// selected channels under GT / hard pseudo-label masks.
// Non-finite total -> NumericError carrying the breakdown.
LossBreakdown train_step(TrainerState& state, const Dataset& data);

// checkpoint contents: every parameter, momentum.<name>, queue.l/queue.u
// (when interaction is on), state.t, state.rng (keys and counters bit-cast)
void save_state(const std::string& path, const TrainerState& state);
void load_state(const std::string& path, TrainerState& state);  // shapes must match

// full-volume inference (no augmentation, no interaction), binarize p > 0.5,
// per-case metrics and their means over unflagged cases
MetricsReport evaluate_cases(const TrainerState& state, const std::vector<CaseData>& cases);

// the cmd_train loop: loads the dataset, optionally resumes, runs to t_max,
// appends out_dir/loss.csv rows "iter,l_sup,l_cons,l_unsup,lambda_u,total",
// writes ckpt_<t>.bck every checkpoint_every steps and final.bck at the end
void run_training(const RunConfig& cfg, const std::string& resume_path = "");

}  // namespace bcsi
