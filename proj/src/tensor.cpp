#include "kga/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace kga {

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until needed
  bool requires_grad = false;
  std::vector<Tensor> parents;
  Tensor::BackwardFn backward_fn;

  bool tracked() const { return requires_grad || static_cast<bool>(backward_fn); }
};

}  // namespace detail

using detail::TensorImpl;

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (const std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

std::shared_ptr<TensorImpl> new_impl(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != data.size())
    throw ShapeError("tensor data size " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return impl;
}

}  // namespace

Tensor Tensor::from(Shape shape, std::vector<double> data) {
  return Tensor(new_impl(std::move(shape), std::move(data)));
}

Tensor Tensor::zeros(Shape shape) {
  std::vector<double> data(shape_numel(shape), 0.0);
  return from(std::move(shape), std::move(data));
}

Tensor Tensor::full(Shape shape, double value) {
  std::vector<double> data(shape_numel(shape), value);
  return from(std::move(shape), std::move(data));
}

Tensor Tensor::scalar(double value) { return from(Shape{}, {value}); }

Tensor Tensor::leaf(Shape shape, std::vector<double> data) {
  auto impl = new_impl(std::move(shape), std::move(data));
  impl->requires_grad = true;
  impl->grad.assign(impl->data.size(), 0.0);
  return Tensor(std::move(impl));
}

Tensor Tensor::make_op(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                       BackwardFn backward) {
  const bool any_tracked =
      std::any_of(parents.begin(), parents.end(), [](const Tensor& p) { return p.tracked(); });
  auto impl = new_impl(std::move(shape), std::move(data));
  if (any_tracked) {
    impl->parents = std::move(parents);
    impl->backward_fn = std::move(backward);
  }
  return Tensor(std::move(impl));
}

const Shape& Tensor::shape() const {
  if (!impl_) throw ContractError("use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::span<const double> Tensor::data() const {
  if (!impl_) throw ContractError("use of undefined tensor");
  return impl_->data;
}

std::span<const double> Tensor::grad() const {
  if (!impl_) throw ContractError("use of undefined tensor");
  return impl_->grad;
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

bool Tensor::is_leaf() const { return impl_ && !impl_->backward_fn; }

bool Tensor::tracked() const { return impl_ && impl_->tracked(); }

double Tensor::value() const {
  if (numel() != 1)
    throw ContractError("value() requires a scalar tensor, got shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::size_t i) const {
  const auto d = data();
  if (i >= d.size()) throw ShapeError("flat index out of range");
  return d[i];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  const Shape& s = shape();
  if (s.size() != 2) throw ShapeError("2-d index into tensor of shape " + shape_str(s));
  if (row >= s[0] || col >= s[1]) throw ShapeError("2-d index out of range");
  return impl_->data[row * s[1] + col];
}

Tensor Tensor::detach() const {
  if (!impl_) return Tensor();
  return from(impl_->shape, impl_->data);
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) throw ContractError("use of undefined tensor");
  if (impl_->backward_fn)
    throw ContractError("mutable_data is restricted to leaf tensors");
  return impl_->data;
}

void Tensor::zero_grad() {
  if (!impl_) throw ContractError("use of undefined tensor");
  impl_->grad.assign(impl_->data.size(), 0.0);
}

void Tensor::accumulate_grad(std::span<const double> g) {
  if (!impl_) throw ContractError("use of undefined tensor");
  if (!impl_->tracked()) return;
  if (g.size() != impl_->data.size())
    throw ShapeError("gradient size " + std::to_string(g.size()) + " does not match tensor " +
                     shape_str(impl_->shape));
  if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) impl_->grad[i] += g[i];
}

void Tensor::backward() const {
  if (!impl_) throw ContractError("use of undefined tensor");
  if (numel() != 1)
    throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));

  // Iterative post-order DFS: parents land before their consumers, so the
  // reversed order is a valid reverse-topological schedule.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  struct Frame {
    TensorImpl* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack{{impl_.get(), 0}};
  visited.insert(impl_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorImpl* p = f.node->parents[f.next_parent++].impl_.get();
      if (visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  // Interior adjoints are rebuilt per call; leaf grads accumulate.
  for (TensorImpl* n : order) {
    if (n->backward_fn)
      n->grad.assign(n->data.size(), 0.0);
    else if (n->requires_grad && n->grad.size() != n->data.size())
      n->grad.assign(n->data.size(), 0.0);
  }
  if (impl_->grad.size() != 1) impl_->grad.assign(1, 0.0);
  impl_->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* n = *it;
    if (n->backward_fn) n->backward_fn(std::span<const double>(n->grad), n->parents);
  }
}

// ---------------------------------------------------------------------------
// Ops

namespace {

enum class Broadcast { none, left_scalar, right_scalar };

Broadcast binary_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::none;
  if (a.numel() == 1) return Broadcast::left_scalar;
  if (b.numel() == 1) return Broadcast::right_scalar;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

template <typename Fwd, typename DA, typename DB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, DA da, DB db) {
  const Broadcast bc = binary_broadcast(a, b, name);
  const Tensor& big = bc == Broadcast::left_scalar ? b : a;
  const std::size_t n = big.numel();
  std::vector<double> out(n);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double av = bc == Broadcast::left_scalar ? ad[0] : ad[i];
    const double bv = bc == Broadcast::right_scalar ? bd[0] : bd[i];
    out[i] = fwd(av, bv);
  }
  return Tensor::make_op(
      big.shape(), std::move(out), {a, b},
      [bc, da, db](std::span<const double> g, std::vector<Tensor>& ps) {
        const auto ad = ps[0].data();
        const auto bd = ps[1].data();
        if (ps[0].tracked()) {
          std::vector<double> ga(ad.size(), 0.0);
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double av = bc == Broadcast::left_scalar ? ad[0] : ad[i];
            const double bv = bc == Broadcast::right_scalar ? bd[0] : bd[i];
            ga[bc == Broadcast::left_scalar ? 0 : i] += g[i] * da(av, bv);
          }
          ps[0].accumulate_grad(ga);
        }
        if (ps[1].tracked()) {
          std::vector<double> gb(bd.size(), 0.0);
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double av = bc == Broadcast::left_scalar ? ad[0] : ad[i];
            const double bv = bc == Broadcast::right_scalar ? bd[0] : bd[i];
            gb[bc == Broadcast::right_scalar ? 0 : i] += g[i] * db(av, bv);
          }
          ps[1].accumulate_grad(gb);
        }
      });
}

template <typename Fwd, typename Dx>
Tensor unary_op(const Tensor& x, Fwd fwd, Dx dx_from_xy) {
  const std::size_t n = x.numel();
  std::vector<double> out(n);
  const auto xd = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(xd[i]);
  std::vector<double> yv = out;
  return Tensor::make_op(
      x.shape(), std::move(out), {x},
      [yv = std::move(yv), dx_from_xy](std::span<const double> g, std::vector<Tensor>& ps) {
        if (!ps[0].tracked()) return;
        const auto xd = ps[0].data();
        std::vector<double> gx(xd.size());
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g[i] * dx_from_xy(xd[i], yv[i]);
        ps[0].accumulate_grad(gx);
      });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& x, double c) {
  return unary_op(
      x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Tensor add_rows(const Tensor& mat, const Tensor& row) {
  if (mat.shape().size() != 2 || row.shape().size() != 1 || mat.dim(1) != row.dim(0))
    throw ShapeError("add_rows: incompatible shapes " + shape_str(mat.shape()) + " and " +
                     shape_str(row.shape()));
  const std::size_t m = mat.dim(0), n = mat.dim(1);
  std::vector<double> out(m * n);
  const auto md = mat.data();
  const auto rd = row.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = md[i * n + j] + rd[j];
  return Tensor::make_op(
      mat.shape(), std::move(out), {mat, row},
      [m, n](std::span<const double> g, std::vector<Tensor>& ps) {
        if (ps[0].tracked()) ps[0].accumulate_grad(g);
        if (ps[1].tracked()) {
          std::vector<double> gr(n, 0.0);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j];
          ps[1].accumulate_grad(gr);
        }
      });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      const double av = ad[i * k + l];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * bd[l * n + j];
    }
  return Tensor::make_op(
      Shape{m, n}, std::move(out), {a, b},
      [m, k, n](std::span<const double> g, std::vector<Tensor>& ps) {
        const auto ad = ps[0].data();
        const auto bd = ps[1].data();
        if (ps[0].tracked()) {
          // dA = G * B^T
          std::vector<double> ga(m * k, 0.0);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              const double gv = g[i * n + j];
              for (std::size_t l = 0; l < k; ++l) ga[i * k + l] += gv * bd[l * n + j];
            }
          ps[0].accumulate_grad(ga);
        }
        if (ps[1].tracked()) {
          // dB = A^T * G
          std::vector<double> gb(k * n, 0.0);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t l = 0; l < k; ++l) {
              const double av = ad[i * k + l];
              for (std::size_t j = 0; j < n; ++j) gb[l * n + j] += av * g[i * n + j];
            }
          ps[1].accumulate_grad(gb);
        }
      });
}

Tensor outer(const Tensor& u, const Tensor& v) {
  if (u.shape().size() != 1 || v.shape().size() != 1)
    throw ShapeError("outer: expects 1-d tensors, got " + shape_str(u.shape()) + " and " +
                     shape_str(v.shape()));
  const std::size_t n = u.dim(0), m = v.dim(0);
  std::vector<double> out(n * m);
  const auto ud = u.data();
  const auto vd = v.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = ud[i] * vd[j];
  return Tensor::make_op(
      Shape{n, m}, std::move(out), {u, v},
      [n, m](std::span<const double> g, std::vector<Tensor>& ps) {
        const auto ud = ps[0].data();
        const auto vd = ps[1].data();
        if (ps[0].tracked()) {
          std::vector<double> gu(n, 0.0);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) gu[i] += g[i * m + j] * vd[j];
          ps[0].accumulate_grad(gu);
        }
        if (ps[1].tracked()) {
          std::vector<double> gv(m, 0.0);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) gv[j] += g[i * m + j] * ud[i];
          ps[1].accumulate_grad(gv);
        }
      });
}

Tensor exp(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  const auto xd = x.data();
  for (std::size_t i = 0; i < xd.size(); ++i)
    if (!(xd[i] > 0.0))
      throw DomainError("log: non-positive input " + std::to_string(xd[i]) + " at index " +
                        std::to_string(i));
  return unary_op(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x,
      [](double v) {
        const double c = std::clamp(v, -40.0, 40.0);
        return 1.0 / (1.0 + std::exp(-c));
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (const double v : x.data()) s += v;
  return Tensor::make_op(Shape{}, {s}, {x},
                         [](std::span<const double> g, std::vector<Tensor>& ps) {
                           if (!ps[0].tracked()) return;
                           std::vector<double> gx(ps[0].numel(), g[0]);
                           ps[0].accumulate_grad(gx);
                         });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ContractError("mean of an empty tensor");
  double s = 0.0;
  for (const double v : x.data()) s += v;
  const double inv_n = 1.0 / static_cast<double>(x.numel());
  return Tensor::make_op(Shape{}, {s * inv_n}, {x},
                         [inv_n](std::span<const double> g, std::vector<Tensor>& ps) {
                           if (!ps[0].tracked()) return;
                           std::vector<double> gx(ps[0].numel(), g[0] * inv_n);
                           ps[0].accumulate_grad(gx);
                         });
}

Tensor l2_norm(const Tensor& x) {
  if (x.shape().size() != 1)
    throw ShapeError("l2_norm: expects a 1-d tensor, got " + shape_str(x.shape()));
  double sq = 0.0;
  for (const double v : x.data()) sq += v * v;
  const double norm = std::sqrt(sq);
  return Tensor::make_op(Shape{}, {norm}, {x},
                         [norm](std::span<const double> g, std::vector<Tensor>& ps) {
                           if (!ps[0].tracked()) return;
                           const auto xd = ps[0].data();
                           std::vector<double> gx(xd.size(), 0.0);
                           if (norm > 0.0) {
                             // subgradient 0 at the origin
                             for (std::size_t i = 0; i < gx.size(); ++i)
                               gx[i] = g[0] * xd[i] / norm;
                           }
                           ps[0].accumulate_grad(gx);
                         });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return Tensor::make_op(std::move(shape), std::move(out), {x},
                         [](std::span<const double> g, std::vector<Tensor>& ps) {
                           if (ps[0].tracked()) ps[0].accumulate_grad(g);
                         });
}

Tensor flatten(const Tensor& x) { return reshape(x, Shape{x.numel()}); }

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h) {
  if (!(h > 0.0)) throw ContractError("finite_diff_grad: step h must be positive");
  std::vector<double> base(x.data().begin(), x.data().end());
  std::vector<double> grad(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    std::vector<double> plus = base;
    std::vector<double> minus = base;
    plus[i] += h;
    minus[i] -= h;
    const double fp = f(Tensor::from(x.shape(), std::move(plus)));
    const double fm = f(Tensor::from(x.shape(), std::move(minus)));
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return Tensor::from(x.shape(), std::move(grad));
}

}  // namespace kga
