#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "kga/errors.hpp"

namespace kga {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl;
}

// Dense 64-bit tensor with define-by-run reverse-mode gradient tracking.
// A Tensor is a cheap shared handle: copies alias the same storage. Values
// are immutable once an op has consumed them (mutable_data is reserved for
// leaf parameters between steps); gradient buffers are the only state
// backward() writes.
class Tensor {
 public:
  // Receives d(out) and must accumulate into the tracked parents' grads.
  using BackwardFn =
      std::function<void(std::span<const double> out_grad, std::vector<Tensor>& parents)>;

  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> data);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  // Leaf with gradient tracking on; grad buffer allocated (zeros) up front.
  static Tensor leaf(Shape shape, std::vector<double> data);
  // Graph node with a hand-written backward rule. Returns a plain constant
  // when no parent is tracked.
  static Tensor make_op(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                        BackwardFn backward);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const;
  std::size_t dim(std::size_t axis) const;
  std::span<const double> data() const;
  std::span<const double> grad() const;  // empty until allocated
  bool requires_grad() const;
  bool is_leaf() const;
  // True when gradients flow to or through this tensor.
  bool tracked() const;

  double value() const;  // scalar tensors only
  double at(std::size_t i) const;
  double at(std::size_t row, std::size_t col) const;

  // Same values, no graph, no tracking.
  Tensor detach() const;

  // Leaf parameter access for optimizers; throws on graph nodes.
  std::span<double> mutable_data();
  void zero_grad();
  void accumulate_grad(std::span<const double> g);

  // Reverse accumulation from a scalar. Non-leaf grads are recomputed from
  // scratch; leaf grads accumulate additively across calls.
  void backward() const;

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Elementwise binary ops: shapes must match, or either side may be a scalar
// (numel 1), which broadcasts.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
// Multiply by a plain constant.
Tensor scale(const Tensor& x, double c);
// [m,n] + [n], the bias-row broadcast.
Tensor add_rows(const Tensor& mat, const Tensor& row);

Tensor matmul(const Tensor& a, const Tensor& b);
// outer(u, v)[i, j] = u[i] * v[j] for 1-d u, v.
Tensor outer(const Tensor& u, const Tensor& v);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);  // DomainError on non-positive entries
// Input clamped to [-40, 40] before exp; part of the numeric contract.
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Euclidean norm of a 1-d tensor; gradient at the origin is the zero vector.
Tensor l2_norm(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor flatten(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }

// Central-difference gradient oracle: (f(x + h*e_i) - f(x - h*e_i)) / 2h per
// coordinate. Evaluates f on detached copies only; independent of backward().
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h);

}  // namespace kga
