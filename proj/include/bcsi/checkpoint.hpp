#pragma once

#include <string>
#include <utility>
#include <vector>

#include "bcsi/tensor.hpp"

// "BCK1" checkpoint container: an ordered list of named f64 tensors. Holds
// parameters, optimizer momentum, queue contents, the iteration counter and
// RNG states (u64s bit-cast into f64 so one payload type covers everything).
// Round trip is bitwise exact.

namespace bcsi {

struct CheckpointData {
  std::vector<std::pair<std::string, Tensor>> tensors;  // insertion-ordered

  void add(const std::string& name, Tensor t);
  const Tensor& at(const std::string& name) const;  // missing name -> FormatError
  bool contains(const std::string& name) const;
};

// layout: magic "BCK1", LE u32 version=1, u32 tensor count, then per tensor
// u16 name length, name bytes, u8 rank, u32 dims[rank], f64 LE payload
void write_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::string& path);

// bitwise u64 <-> f64, for RNG keys and counters inside checkpoints
double u64_as_f64(uint64_t v);
uint64_t f64_as_u64(double v);

}  // namespace bcsi
