#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "bcsi/rng.hpp"

// Dense float64 tensors with reverse-mode differentiation.
//
// Conventions, fixed project-wide:
//   * row-major storage, shape order [batch, channel, depth, height, width]
//     for rank-5 tensors (last axis fastest);
//   * rank <= 5;
//   * binary elementwise ops broadcast numpy-style (trailing alignment,
//     size-1 axes stretch);
//   * an op records a tape node iff any input requires grad; everything is
//     out-of-place, tensors already on the tape are never mutated;
//   * relu'(0) = 0; clamp' is 1 inside [lo,hi] and 0 outside;
//   * max-reduction ties route the gradient to the lowest linear index.

namespace bcsi {

using Shape = std::vector<int>;

int64_t numel_of(const Shape& s);
std::string shape_str(const Shape& s);

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

namespace detail {

struct GradStore;

struct Node {
  uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  int64_t out_numel = 0;
  // accumulates input gradients given the gradient w.r.t. this node's output;
  // null for leaves
  std::function<void(const double*, GradStore&)> backward;
};

using NodePtr = std::shared_ptr<Node>;

struct GradStore {
  std::unordered_map<const Node*, std::vector<double>> bufs;
  std::vector<double>& buf_for(const Node* n, int64_t n_elems);
  void accumulate(const NodePtr& n, int64_t n_elems, const double* g);
  const std::vector<double>* find(const Node* n) const;
};

struct TensorImpl {
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  NodePtr node;  // non-null iff requires grad
};

}  // namespace detail

class GradMap;

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_vector(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int dim(int axis) const { return shape().at(static_cast<size_t>(axis)); }
  int64_t numel() const;

  const double* data() const;
  double* mutable_data();  // leaves / host-side buffers only
  const std::vector<double>& values() const&;
  std::vector<double> values() &&;  // rvalue access copies: no dangling refs
  double item() const;              // numel()==1

  bool requires_grad() const;
  Tensor& set_requires_grad();  // marks this tensor as a differentiable leaf
  Tensor detach() const;        // same storage, off the tape

  detail::NodePtr node() const;

  // internal: used by op implementations
  static Tensor make(Shape shape, std::vector<double> data);
  static Tensor make_op(Shape shape, std::vector<double> data,
                        const std::vector<Tensor>& inputs,
                        std::function<void(const double*, detail::GradStore&)> backward);

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
  void require_defined() const;
};

// Gradients of one scalar loss w.r.t. the tensors reachable from it.
class GradMap {
 public:
  // zero tensor when the leaf was not reached; throws if t is not on the tape
  Tensor grad(const Tensor& t) const;
  bool reached(const Tensor& t) const;

 private:
  friend GradMap backward(const Tensor& loss);
  std::unordered_map<const detail::Node*, std::vector<double>> grads_;
};

GradMap backward(const Tensor& scalar_loss);

// ---- elementwise (numpy-style broadcasting) --------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);  // any zero divisor -> DomainError
Tensor add(const Tensor& a, double c);
Tensor sub(double c, const Tensor& a);
Tensor mul(const Tensor& a, double c);
Tensor div(const Tensor& a, double c);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double c) { return add(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add(a, -c); }
inline Tensor operator*(const Tensor& a, double c) { return mul(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul(a, c); }
inline Tensor operator-(const Tensor& a) { return mul(a, -1.0); }

// masks ride along as constants: no gradient flows into `mask`
Tensor mask_mul(const Tensor& x, const Tensor& mask);

// ---- unary ------------------------------------------------------------------
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);  // any x <= 0 -> DomainError
Tensor power(const Tensor& x, double p);
Tensor clamp(const Tensor& x, double lo, double hi);

// ---- reductions -------------------------------------------------------------
Tensor sum(const Tensor& x, const std::vector<int>& axes = {}, bool keepdims = false);
Tensor mean(const Tensor& x, const std::vector<int>& axes = {}, bool keepdims = false);
Tensor max(const Tensor& x, const std::vector<int>& axes = {}, bool keepdims = false);
Tensor softmax(const Tensor& x, int axis);

// ---- shape ------------------------------------------------------------------
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor transpose2d(const Tensor& x);  // rank-2 only
Tensor slice(const Tensor& x, const std::vector<int>& starts, const std::vector<int>& sizes);
Tensor pad(const Tensor& x, const std::vector<int>& before, const std::vector<int>& after);
Tensor concat(const std::vector<Tensor>& parts, int axis);
// rank-5 only, last three axes, integer factor
Tensor upsample_nearest(const Tensor& x, int factor);
Tensor downsample_nearest(const Tensor& x, int factor);
// x:[B,C,*], indices[b] holds K channel ids; out:[B,K,*]
Tensor gather_channels(const Tensor& x, const std::vector<std::vector<int>>& indices);
// writes sub:[B,K,*] rows over base:[B,C,*] at the given channels
Tensor scatter_channels(const Tensor& base, const Tensor& sub,
                        const std::vector<std::vector<int>>& indices);

// ---- linear algebra ---------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k]x[k,n]
Tensor conv3d(const Tensor& x, const Tensor& w, int stride, int padding);
Tensor conv_transpose3d(const Tensor& x, const Tensor& w, int stride, int padding);
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups,
                  double eps = 1e-5);

// ---- random tensors ---------------------------------------------------------
Tensor gaussian(Rng& gen, double mu, double sigma, Shape shape);
Tensor uniform(Rng& gen, double lo, double hi, Shape shape);

// ---- verification oracle ----------------------------------------------------
// max over all coordinates of |analytic - central difference| / max(1, |cd|);
// f must be a pure function of `inputs` (all differentiable leaves)
double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  const std::vector<Tensor>& inputs, double h = 1e-5);

}  // namespace bcsi
