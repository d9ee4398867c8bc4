#include "bcsi/params.hpp"

namespace bcsi {

Tensor& ParamSet::add(const std::string& name, Tensor t) {
  if (contains(name)) throw ShapeError("ParamSet: duplicate parameter name " + name);
  t.set_requires_grad();
  items_.emplace_back(name, std::move(t));
  return items_.back().second;
}

Tensor& ParamSet::at(const std::string& name) {
  for (auto& [n, t] : items_)
    if (n == name) return t;
  throw ShapeError("ParamSet: unknown parameter " + name);
}

const Tensor& ParamSet::at(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return t;
  throw ShapeError("ParamSet: unknown parameter " + name);
}

bool ParamSet::contains(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return true;
  return false;
}

int64_t ParamSet::total_numel() const {
  int64_t n = 0;
  for (const auto& [name, t] : items_) n += t.numel();
  return n;
}

ParamSet ParamSet::detached() const {
  ParamSet out;
  for (const auto& [n, t] : items_) out.items_.emplace_back(n, t.detach());
  return out;
}

}  // namespace bcsi
