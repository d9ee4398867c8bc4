#include "bcsi/interact.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "bcsi/segnet.hpp"

namespace bcsi {

FeatureQueue::FeatureQueue(int64_t capacity, int64_t entry_len)
    : capacity_(capacity), len_(entry_len) {
  if (capacity < 1 || entry_len < 1) throw DomainError("FeatureQueue: capacity and entry_len must be >= 1");
  slots_.resize(static_cast<size_t>(capacity));
}

void FeatureQueue::push(std::vector<double> entry) {
  if (static_cast<int64_t>(entry.size()) != len_)
    throw ShapeError("FeatureQueue::push: entry length " + std::to_string(entry.size()) +
                     ", queue holds " + std::to_string(len_));
  if (fill_ < capacity_) {
    slots_[static_cast<size_t>((head_ + fill_) % capacity_)] = std::move(entry);
    ++fill_;
  } else {
    slots_[static_cast<size_t>(head_)] = std::move(entry);
    head_ = (head_ + 1) % capacity_;
  }
}

const std::vector<double>& FeatureQueue::entry(int64_t i) const {
  if (i < 0 || i >= fill_) throw DomainError("FeatureQueue::entry: index out of range");
  return slots_[static_cast<size_t>((head_ + i) % capacity_)];
}

void FeatureQueue::fill_random(Rng& gen) {
  head_ = 0;
  fill_ = capacity_;
  for (auto& slot : slots_) {
    slot.resize(static_cast<size_t>(len_));
    for (double& v : slot) v = gen.gaussian(0.0, 1.0);
  }
}

std::vector<double> FeatureQueue::serialize() const {
  std::vector<double> flat;
  flat.reserve(static_cast<size_t>(fill_ * len_));
  for (int64_t i = 0; i < fill_; ++i) {
    const auto& e = entry(i);
    flat.insert(flat.end(), e.begin(), e.end());
  }
  return flat;
}

void FeatureQueue::restore(const std::vector<double>& flat, int64_t count) {
  if (count < 0 || count > capacity_ || static_cast<int64_t>(flat.size()) != count * len_)
    throw ShapeError("FeatureQueue::restore: bad entry count or payload size");
  head_ = 0;
  fill_ = 0;
  for (int64_t i = 0; i < count; ++i)
    push(std::vector<double>(flat.begin() + i * len_, flat.begin() + (i + 1) * len_));
}

void InteractConfig::validate() const {
  if (d_proj < 1) throw DomainError("InteractConfig: d_proj must be >= 1");
  if (queue_capacity < 1) throw DomainError("InteractConfig: queue_capacity must be >= 1");
}

void init_interact(ParamSet& p, Rng& gen, int64_t entry_len, const InteractConfig& cfg) {
  cfg.validate();
  const int l = static_cast<int>(entry_len);
  const int d = cfg.d_proj;
  p.add("bci.wq", fan_in_uniform(gen, {l, d}, entry_len));
  p.add("bci.bq", Tensor::zeros({d}));
  p.add("bci.wk", fan_in_uniform(gen, {l, d}, entry_len));
  p.add("bci.bk", Tensor::zeros({d}));
  p.add("bci.wv", fan_in_uniform(gen, {l, l}, entry_len));
  p.add("bci.bv", Tensor::zeros({l}));
}

Retrieved retrieve(const Tensor& f_sub_rows, const FeatureQueue& q) {
  if (f_sub_rows.rank() != 2 || f_sub_rows.dim(1) != q.entry_len())
    throw ShapeError("retrieve: expects [K," + std::to_string(q.entry_len()) + "], got " +
                     shape_str(f_sub_rows.shape()));
  if (q.size() == 0) throw DomainError("retrieve: queue is empty");
  const int k = f_sub_rows.dim(0);
  const int64_t len = q.entry_len();
  const double* rows = f_sub_rows.data();

  std::vector<double> entry_norm(static_cast<size_t>(q.size()));
  for (int64_t i = 0; i < q.size(); ++i) {
    double s = 0.0;
    for (double v : q.entry(i)) s += v * v;
    entry_norm[static_cast<size_t>(i)] = std::sqrt(s);
  }

  Retrieved out;
  out.source_slots.resize(static_cast<size_t>(k));
  std::vector<double> picked(static_cast<size_t>(k) * static_cast<size_t>(len));
  for (int r = 0; r < k; ++r) {
    const double* f = rows + static_cast<int64_t>(r) * len;
    double fn = 0.0;
    for (int64_t j = 0; j < len; ++j) fn += f[j] * f[j];
    fn = std::sqrt(fn);
    int64_t best = 0;
    double best_sim = -2.0;  // below any cosine, so slot 0 wins an all-tie
    for (int64_t i = 0; i < q.size(); ++i) {
      const auto& e = q.entry(i);
      double sim = 0.0;
      if (fn > 0.0 && entry_norm[static_cast<size_t>(i)] > 0.0) {
        double dot = 0.0;
        for (int64_t j = 0; j < len; ++j) dot += f[j] * e[static_cast<size_t>(j)];
        sim = dot / (fn * entry_norm[static_cast<size_t>(i)]);
      }
      if (sim > best_sim) {
        best_sim = sim;
        best = i;
      }
    }
    out.source_slots[static_cast<size_t>(r)] = best;
    const auto& e = q.entry(best);
    std::copy(e.begin(), e.end(), picked.begin() + static_cast<int64_t>(r) * len);
  }
  out.features = Tensor::from_vector({k, static_cast<int>(len)}, std::move(picked));
  return out;
}

Tensor cross_attend(const Tensor& f_sub_rows, const Tensor& retrieved_rows, const ParamSet& p,
                    double scale) {
  if (f_sub_rows.rank() != 2 || retrieved_rows.rank() != 2 ||
      f_sub_rows.shape() != retrieved_rows.shape())
    throw ShapeError("cross_attend: query and retrieved rows must share shape [K,L]");
  Tensor q = add(matmul(f_sub_rows, p.at("bci.wq")), reshape(p.at("bci.bq"), {1, p.at("bci.bq").dim(0)}));
  Tensor kk = add(matmul(retrieved_rows, p.at("bci.wk")), reshape(p.at("bci.bk"), {1, p.at("bci.bk").dim(0)}));
  Tensor v = add(matmul(retrieved_rows, p.at("bci.wv")), reshape(p.at("bci.bv"), {1, p.at("bci.bv").dim(0)}));
  Tensor attn = softmax(mul(matmul(q, transpose2d(kk)), scale), 1);
  return add(f_sub_rows, matmul(attn, v));
}

namespace {

Tensor attend_against(const Tensor& F_full, const Tensor& sub_query, const ChannelMask& mask_query,
                      const Tensor& retrieved_all, const ParamSet& p, double scale) {
  const int b = sub_query.dim(0);
  const int k = sub_query.dim(1);
  const int l = sub_query.dim(2) * sub_query.dim(3) * sub_query.dim(4);
  std::vector<Tensor> rows_out;
  rows_out.reserve(static_cast<size_t>(b));
  for (int i = 0; i < b; ++i) {
    Tensor f = reshape(slice(sub_query, {i, 0, 0, 0, 0},
                             {1, k, sub_query.dim(2), sub_query.dim(3), sub_query.dim(4)}),
                       {k, l});
    Tensor r = reshape(slice(retrieved_all, {i, 0}, {1, k * l}), {k, l});
    rows_out.push_back(reshape(cross_attend(f, r, p, scale),
                               {1, k, sub_query.dim(2), sub_query.dim(3), sub_query.dim(4)}));
  }
  Tensor tilde = b == 1 ? rows_out[0] : concat(rows_out, 0);
  return scatter_channels(F_full, tilde, mask_query.indices);
}

// within-stream retrieval for every batch item: [B, K*L] constants
Tensor retrieve_all(const Tensor& sub_rows, const FeatureQueue& q) {
  const int b = sub_rows.dim(0);
  const int k = sub_rows.dim(1);
  const int l = sub_rows.dim(2) * sub_rows.dim(3) * sub_rows.dim(4);
  std::vector<Tensor> parts;
  parts.reserve(static_cast<size_t>(b));
  for (int i = 0; i < b; ++i) {
    Tensor f = reshape(slice(sub_rows, {i, 0, 0, 0, 0},
                             {1, k, sub_rows.dim(2), sub_rows.dim(3), sub_rows.dim(4)}),
                       {k, l});
    parts.push_back(reshape(retrieve(f.detach(), q).features, {1, k * l}));
  }
  return b == 1 ? parts[0] : concat(parts, 0);
}

}  // namespace

InteractResult bidirectional_interact(const Tensor& F_l, const Tensor& F_u, const Tensor& sub_l,
                                      const Tensor& sub_u, const ChannelMask& mask_l,
                                      const ChannelMask& mask_u, const FeatureQueue& q_l,
                                      const FeatureQueue& q_u, const ParamSet& p,
                                      const InteractConfig& cfg) {
  cfg.validate();
  InteractResult out{F_l, F_u};
  if (cfg.direction == Direction::none) return out;
  if (sub_l.shape() != sub_u.shape())
    throw ShapeError("bidirectional_interact: streams must share [B,K,d,h,w], got " +
                     shape_str(sub_l.shape()) + " vs " + shape_str(sub_u.shape()));
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_proj));
  // each stream retrieves from its own queue with its own selected channels;
  // the opposite stream then attends over those retrievals
  if (cfg.direction == Direction::l2u || cfg.direction == Direction::both) {
    Tensor r_l = retrieve_all(sub_l, q_l);
    out.f_u = attend_against(F_u, sub_u, mask_u, r_l, p, scale);
  }
  if (cfg.direction == Direction::u2l || cfg.direction == Direction::both) {
    Tensor r_u = retrieve_all(sub_u, q_u);
    out.f_l = attend_against(F_l, sub_l, mask_l, r_u, p, scale);
  }
  return out;
}

void enqueue_masked(FeatureQueue& q, const Tensor& f_sub_detached, const Tensor& target_mask) {
  if (f_sub_detached.rank() != 5 || target_mask.rank() != 5 || target_mask.dim(1) != 1 ||
      target_mask.dim(0) != f_sub_detached.dim(0) || target_mask.dim(2) != f_sub_detached.dim(2) ||
      target_mask.dim(3) != f_sub_detached.dim(3) || target_mask.dim(4) != f_sub_detached.dim(4))
    throw ShapeError("enqueue_masked: need features [B,K,d,h,w] and mask [B,1,d,h,w]");
  const int b = f_sub_detached.dim(0);
  const int k = f_sub_detached.dim(1);
  const int64_t vox = static_cast<int64_t>(f_sub_detached.dim(2)) * f_sub_detached.dim(3) *
                      f_sub_detached.dim(4);
  const double* f = f_sub_detached.data();
  const double* m = target_mask.data();
  for (int i = 0; i < b; ++i) {
    const double* mi = m + static_cast<int64_t>(i) * vox;
    for (int c = 0; c < k; ++c) {
      const double* fc = f + (static_cast<int64_t>(i) * k + c) * vox;
      std::vector<double> entry(static_cast<size_t>(vox));
      for (int64_t j = 0; j < vox; ++j) entry[static_cast<size_t>(j)] = fc[j] * mi[j];
      q.push(std::move(entry));
    }
  }
}

}  // namespace bcsi
