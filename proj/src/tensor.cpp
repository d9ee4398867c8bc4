#include "bcsi/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>

#include "op_common.hpp"

namespace bcsi {

int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[static_cast<size_t>(i)] =
        st[static_cast<size_t>(i) + 1] * s[static_cast<size_t>(i) + 1];
  return st;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (size_t i = 0; i < rank; ++i) {
    const int da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const int db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1)
      throw ShapeError("broadcast: incompatible shapes " + shape_str(a) + " and " +
                       shape_str(b));
    out[rank - 1 - i] = std::max(da, db);
  }
  return out;
}

std::vector<int64_t> broadcast_strides(const Shape& s, const Shape& out) {
  auto own = row_major_strides(s);
  std::vector<int64_t> st(out.size(), 0);
  for (size_t i = 0; i < s.size(); ++i) {
    const size_t oi = out.size() - s.size() + i;
    if (s[i] == out[oi])
      st[oi] = own[i];
    else if (s[i] != 1)
      throw ShapeError("broadcast: cannot stretch " + shape_str(s) + " to " + shape_str(out));
  }
  return st;
}

std::vector<int> normalize_axes(const std::vector<int>& axes, int rank) {
  std::vector<int> out;
  if (axes.empty()) {
    out.resize(static_cast<size_t>(rank));
    for (int i = 0; i < rank; ++i) out[static_cast<size_t>(i)] = i;
    return out;
  }
  out = axes;
  std::sort(out.begin(), out.end());
  for (size_t i = 0; i < out.size(); ++i) {
    if (out[i] < 0 || out[i] >= rank)
      throw ShapeError("reduction axis out of range for rank " + std::to_string(rank));
    if (i > 0 && out[i] == out[i - 1]) throw ShapeError("duplicate reduction axis");
  }
  return out;
}

Shape reduced_shape(const Shape& in, const std::vector<int>& axes, bool keepdims) {
  Shape out;
  size_t k = 0;
  for (int i = 0; i < static_cast<int>(in.size()); ++i) {
    const bool hit = k < axes.size() && axes[k] == i;
    if (hit) ++k;
    if (hit) {
      if (keepdims) out.push_back(1);
    } else {
      out.push_back(in[static_cast<size_t>(i)]);
    }
  }
  return out;
}

std::vector<double>& GradStore::buf_for(const Node* n, int64_t n_elems) {
  auto it = bufs.find(n);
  if (it == bufs.end())
    it = bufs.emplace(n, std::vector<double>(static_cast<size_t>(n_elems), 0.0)).first;
  return it->second;
}

void GradStore::accumulate(const NodePtr& n, int64_t n_elems, const double* g) {
  auto& buf = buf_for(n.get(), n_elems);
  for (int64_t i = 0; i < n_elems; ++i) buf[static_cast<size_t>(i)] += g[i];
}

const std::vector<double>* GradStore::find(const Node* n) const {
  auto it = bufs.find(n);
  return it == bufs.end() ? nullptr : &it->second;
}

namespace {
std::atomic<uint64_t> g_node_seq{0};
}

}  // namespace detail

// ---- Tensor core -------------------------------------------------------------

void Tensor::require_defined() const {
  if (!impl_) throw ShapeError("operation on default-constructed tensor");
}

static void validate_shape(const Shape& s) {
  if (s.size() > 5) throw ShapeError("rank > 5 unsupported: " + shape_str(s));
  for (int d : s)
    if (d < 1) throw ShapeError("shape dims must be >= 1: " + shape_str(s));
}

Tensor Tensor::make(Shape shape, std::vector<double> data) {
  validate_shape(shape);
  if (numel_of(shape) != static_cast<int64_t>(data.size()))
    throw ShapeError("data size " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  Tensor t;
  t.impl_ = std::make_shared<detail::TensorImpl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::make_shared<std::vector<double>>(std::move(data));
  return t;
}

Tensor Tensor::zeros(Shape shape) {
  validate_shape(shape);
  const auto n = numel_of(shape);
  return make(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
  validate_shape(shape);
  const auto n = numel_of(shape);
  return make(std::move(shape), std::vector<double>(static_cast<size_t>(n), value));
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> values) {
  return make(std::move(shape), std::move(values));
}

Tensor Tensor::scalar(double value) { return make({1}, {value}); }

const Shape& Tensor::shape() const {
  require_defined();
  return impl_->shape;
}

int64_t Tensor::numel() const { return numel_of(shape()); }

const double* Tensor::data() const {
  require_defined();
  return impl_->data->data();
}

double* Tensor::mutable_data() {
  require_defined();
  if (impl_->node && impl_->node->backward)
    throw ShapeError("cannot mutate an op output already on the tape");
  return impl_->data->data();
}

const std::vector<double>& Tensor::values() const& {
  require_defined();
  return *impl_->data;
}

std::vector<double> Tensor::values() && {
  require_defined();
  return *impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() requires numel()==1, got " + shape_str(shape()));
  return (*impl_->data)[0];
}

bool Tensor::requires_grad() const {
  require_defined();
  return impl_->node != nullptr;
}

Tensor& Tensor::set_requires_grad() {
  require_defined();
  if (!impl_->node) {
    impl_->node = std::make_shared<detail::Node>();
    impl_->node->seq = ++detail::g_node_seq;
    impl_->node->out_numel = numel();
  }
  return *this;
}

Tensor Tensor::detach() const {
  require_defined();
  Tensor t;
  t.impl_ = std::make_shared<detail::TensorImpl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;  // shared storage, off the tape
  return t;
}

detail::NodePtr Tensor::node() const {
  require_defined();
  return impl_->node;
}

Tensor Tensor::make_op(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                       std::function<void(const double*, detail::GradStore&)> backward) {
  Tensor out = make(std::move(shape), std::move(data));
  bool needs = false;
  for (const auto& in : inputs)
    if (in.requires_grad()) needs = true;
  if (!needs) return out;
  auto node = std::make_shared<detail::Node>();
  node->seq = ++detail::g_node_seq;
  node->out_numel = out.numel();
  for (const auto& in : inputs)
    if (in.requires_grad()) node->inputs.push_back(in.node());
  node->backward = std::move(backward);
  out.impl_->node = std::move(node);
  return out;
}

// ---- backward pass ------------------------------------------------------------

GradMap backward(const Tensor& scalar_loss) {
  if (!scalar_loss.defined() || scalar_loss.numel() != 1)
    throw ShapeError("backward expects a defined scalar loss");
  if (!scalar_loss.requires_grad())
    throw ShapeError("backward: loss does not require grad");

  // topological order by creation sequence; consumers always come later
  std::vector<detail::Node*> order;
  {
    std::vector<detail::Node*> stack{scalar_loss.node().get()};
    std::unordered_map<const detail::Node*, bool> seen;
    seen[stack[0]] = true;
    while (!stack.empty()) {
      auto* n = stack.back();
      stack.pop_back();
      order.push_back(n);
      for (const auto& in : n->inputs) {
        if (!seen[in.get()]) {
          seen[in.get()] = true;
          stack.push_back(in.get());
        }
      }
    }
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });

  detail::GradStore gs;
  gs.buf_for(scalar_loss.node().get(), 1)[0] = 1.0;
  for (auto* n : order) {
    if (!n->backward) continue;  // leaf
    const auto* g = gs.find(n);
    if (!g) continue;  // no gradient path reached this node
    n->backward(g->data(), gs);
  }

  GradMap gm;
  gm.grads_ = std::move(gs.bufs);
  return gm;
}

Tensor GradMap::grad(const Tensor& t) const {
  if (!t.requires_grad()) throw ShapeError("GradMap::grad: tensor is not on the tape");
  auto it = grads_.find(t.node().get());
  if (it == grads_.end()) return Tensor::zeros(t.shape());
  return Tensor::from_vector(t.shape(), it->second);
}

bool GradMap::reached(const Tensor& t) const {
  return t.requires_grad() && grads_.count(t.node().get()) > 0;
}

// ---- random tensors -----------------------------------------------------------

Tensor gaussian(Rng& gen, double mu, double sigma, Shape shape) {
  const auto n = numel_of(shape);
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = gen.gaussian(mu, sigma);
  return Tensor::from_vector(std::move(shape), std::move(v));
}

Tensor uniform(Rng& gen, double lo, double hi, Shape shape) {
  const auto n = numel_of(shape);
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = gen.uniform(lo, hi);
  return Tensor::from_vector(std::move(shape), std::move(v));
}

// ---- finite-difference oracle ---------------------------------------------------

double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  const std::vector<Tensor>& inputs, double h) {
  for (const auto& in : inputs)
    if (!in.requires_grad()) throw ShapeError("grad_check: all inputs must require grad");

  Tensor loss = f(inputs);
  if (loss.numel() != 1) throw ShapeError("grad_check: f must return a scalar");
  GradMap gm = backward(loss);

  auto eval_at = [&](size_t which, int64_t coord, double delta) {
    std::vector<Tensor> probe;
    probe.reserve(inputs.size());
    for (size_t i = 0; i < inputs.size(); ++i) {
      std::vector<double> v = inputs[i].values();
      if (i == which) v[static_cast<size_t>(coord)] += delta;
      probe.push_back(Tensor::from_vector(inputs[i].shape(), std::move(v)));
    }
    return f(probe).item();
  };

  double worst = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    Tensor g = gm.grad(inputs[i]);
    for (int64_t j = 0; j < inputs[i].numel(); ++j) {
      const double plus = eval_at(i, j, h);
      const double minus = eval_at(i, j, -h);
      const double cd = (plus - minus) / (2.0 * h);
      const double an = g.data()[j];
      const double err = std::abs(an - cd) / std::max(1.0, std::abs(cd));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace bcsi
