#pragma once

#include <string>
#include <vector>

#include "bcsi/tensor.hpp"

namespace bcsi {

// Ordered registry of named leaf tensors. One instance holds every learnable
// parameter of a model (network, router, attention), so the optimizer and the
// checkpoint writer see a single stable, insertion-ordered list.
class ParamSet {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
  size_t size() const { return items_.size(); }
  int64_t total_numel() const;

  // same storage, no tape nodes: forward passes that need no gradients
  ParamSet detached() const;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

}  // namespace bcsi
