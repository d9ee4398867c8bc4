#pragma once

#include <cstdint>
#include <vector>

#include "bcsi/params.hpp"
#include "bcsi/rng.hpp"
#include "bcsi/router.hpp"
#include "bcsi/tensor.hpp"

// Cross-stream channel interaction: fixed-capacity FIFO feature queues, cosine
// retrieval (each stream queries its own queue with its own selected channels),
// scaled dot-product cross-attention against the opposite stream's retrievals,
// and residual reinsertion into the full feature map.

namespace bcsi {

class FeatureQueue {
 public:
  FeatureQueue(int64_t capacity, int64_t entry_len);

  void push(std::vector<double> entry);  // evicts the oldest when full
  int64_t size() const { return fill_; }
  int64_t capacity() const { return capacity_; }
  int64_t entry_len() const { return len_; }
  // i in [0, size): insertion order, 0 = oldest surviving entry
  const std::vector<double>& entry(int64_t i) const;

  void fill_random(Rng& gen);  // unit gaussians up to capacity

  // oldest-first dump / restore, for checkpoints
  std::vector<double> serialize() const;
  void restore(const std::vector<double>& flat, int64_t count);

 private:
  int64_t capacity_, len_;
  int64_t head_ = 0;  // slot of the oldest entry
  int64_t fill_ = 0;
  std::vector<std::vector<double>> slots_;
};

enum class Direction { none, l2u, u2l, both };

struct InteractConfig {
  Direction direction = Direction::both;
  int d_proj = 32;
  int64_t queue_capacity = 2560;

  void validate() const;
};

struct Retrieved {
  Tensor features;                 // [K, L], constants (off the tape)
  std::vector<int64_t> source_slots;  // queue slot per row, insertion order ids
};

// registers "bci.wq/bq/wk/bk/wv/bv"; projections are shared by both streams
void init_interact(ParamSet& params, Rng& gen, int64_t entry_len, const InteractConfig& cfg);

// per selected channel, the queue entry with the highest cosine similarity;
// ties to the lowest insertion index; zero-norm pairs score 0
Retrieved retrieve(const Tensor& f_sub_rows, const FeatureQueue& q);

// softmax(Q(f) K(r)^T / sqrt(d)) V(r) + f over K channel tokens; r is constant
Tensor cross_attend(const Tensor& f_sub_rows, const Tensor& retrieved_rows,
                    const ParamSet& params, double scale);

// Full per-kind pipeline on bottleneck pairs. F_sub inputs are [B,K,d,h,w]
// (already routed); outputs are the features with perturbed channels scattered
// back in. Streams not addressed by `direction` pass through bitwise.
struct InteractResult {
  Tensor f_l, f_u;  // [B,C,d,h,w]
};
InteractResult bidirectional_interact(const Tensor& F_l, const Tensor& F_u, const Tensor& sub_l,
                                      const Tensor& sub_u, const ChannelMask& mask_l,
                                      const ChannelMask& mask_u, const FeatureQueue& q_l,
                                      const FeatureQueue& q_u, const ParamSet& params,
                                      const InteractConfig& cfg);

// pushes each selected channel of each batch item, multiplied by the target
// mask (GT or pseudo-label at bottleneck resolution), as one queue entry;
// batch-major, channels ascending
void enqueue_masked(FeatureQueue& q, const Tensor& f_sub_detached,
                    const Tensor& target_mask_bottleneck);

}  // namespace bcsi
