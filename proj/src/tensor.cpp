#include "gmgan/tensor.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "gmgan/error.hpp"

namespace gmgan {

namespace {

using detail::BackwardFn;
using detail::Node;
using detail::Buffer;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

thread_local bool g_grad_enabled = true;

// Test hook: scales the incoming gradient of every node of one op type.
std::string g_fault_op;
double g_fault_scale = 1.0;

std::uint64_t next_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

std::shared_ptr<Node> new_node(Shape shape, Buffer value) {
  if (shape_numel(shape) != value.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                     std::to_string(value.size()) + " values");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->id = next_id();
  return node;
}

void check_finite(const char* op, const Buffer& v) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string(op) + ": non-finite value in forward pass");
    }
  }
}

Tensor make_op(const char* op, Shape shape, Buffer value,
               std::initializer_list<const Tensor*> parents, BackwardFn fn) {
  check_finite(op, value);
  auto node = new_node(std::move(shape), std::move(value));
  node->op = op;
  node->leaf = false;
  bool needs = false;
  if (g_grad_enabled) {
    for (const Tensor* p : parents) needs = needs || p->requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const Tensor* p : parents) node->parents.push_back(p->node());
    node->backward = std::move(fn);
  }
  return Tensor(std::move(node));
}

Tensor make_op_n(const char* op, Shape shape, Buffer value,
                 const std::vector<Tensor>& parents, BackwardFn fn) {
  check_finite(op, value);
  auto node = new_node(std::move(shape), std::move(value));
  node->op = op;
  node->leaf = false;
  bool needs = g_grad_enabled && std::any_of(parents.begin(), parents.end(),
                                             [](const Tensor& p) { return p.requires_grad(); });
  if (needs) {
    node->requires_grad = true;
    for (const Tensor& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(fn);
  }
  return Tensor(std::move(node));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
}

void require_matrix(const Tensor& t, const char* op) {
  require_defined(t, op);
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got shape " + shape_str(t.shape()));
  }
}

template <class F, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  require_defined(a, op);
  require_defined(b, op);
  const std::size_t na = a.numel();
  const std::size_t nb = b.numel();
  Shape shape;
  if (a.shape() == b.shape() || nb == 1) {
    shape = a.shape();
  } else if (na == 1) {
    shape = b.shape();
  } else {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t n = shape_numel(shape);
  const std::size_t sa = (na == 1) ? 0 : 1;
  const std::size_t sb = (nb == 1) ? 0 : 1;
  const auto av = a.values();
  const auto bv = b.values();
  Buffer out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i * sa], bv[i * sb]);
  return make_op(op, std::move(shape), std::move(out), {&a, &b},
                 [sa, sb, n, da, db](Node& self) {
                   Node& pa = *self.parents[0];
                   Node& pb = *self.parents[1];
                   const auto& g = self.grad;
                   if (pa.requires_grad) {
                     auto& ga = pa.grad_buffer();
                     for (std::size_t i = 0; i < n; ++i) {
                       ga[i * sa] += g[i] * da(pa.value[i * sa], pb.value[i * sb], self.value[i]);
                     }
                   }
                   if (pb.requires_grad) {
                     auto& gb = pb.grad_buffer();
                     for (std::size_t i = 0; i < n; ++i) {
                       gb[i * sb] += g[i] * db(pa.value[i * sa], pb.value[i * sb], self.value[i]);
                     }
                   }
                 });
}

// df(x, y) receives the input and the output of the forward function.
template <class F, class DF>
Tensor unary(const char* op, const Tensor& x, F f, DF df) {
  require_defined(x, op);
  const auto xv = x.values();
  Buffer out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return make_op(op, x.shape(), std::move(out), {&x}, [df](Node& self) {
    Node& p = *self.parents[0];
    auto& gp = p.grad_buffer();
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[i] * df(p.value[i], self.value[i]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Symmetric part of a square matrix.
RowMat symmetric_part(const Tensor& x) {
  const std::size_t d = x.dim(0);
  ConstMap m(x.values().data(), d, d);
  return 0.5 * (m + m.transpose());
}

}  // namespace

// ---------------------------------------------------------------------------

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
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

detail::Buffer& detail::Node::grad_buffer() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : node_(new_node(std::move(shape), Buffer(values.begin(), values.end()))) {}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape_numel(shape);
  return Tensor(new_node(std::move(shape), Buffer(n, value)));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::identity(std::size_t n) {
  Buffer v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return Tensor(new_node({n, n}, std::move(v)));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("dim: axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_ ? node_->value.size() : 0; }

std::span<const double> Tensor::values() const {
  require_defined(*this, "values");
  return node_->value;
}

std::span<double> Tensor::mutable_values() {
  require_defined(*this, "mutable_values");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->value[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  require_matrix(*this, "at");
  if (row >= dim(0) || col >= dim(1)) throw ShapeError("at: index out of range");
  return node_->value[row * dim(1) + col];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::is_leaf() const { return node_ && node_->leaf; }

void Tensor::set_requires_grad(bool on) {
  require_defined(*this, "set_requires_grad");
  if (!node_->leaf) throw std::logic_error("set_requires_grad: only leaf tensors can be toggled");
  node_->requires_grad = on;
}

std::span<const double> Tensor::grad() const {
  require_defined(*this, "grad");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  require_defined(*this, "grad");
  return node_->grad_buffer();
}

void Tensor::zero_grad() {
  if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
  require_defined(*this, "backward");
  if (numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->leaf) n->grad.assign(n->value.size(), 0.0);
  }
  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->leaf) continue;
    if (!g_fault_op.empty() && g_fault_op == n->op) {
      for (double& g : n->grad) g *= g_fault_scale;
    }
    if (n->backward) n->backward(*n);
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

void detail::set_gradient_fault(const std::string& op, double scale) {
  g_fault_op = op;
  g_fault_scale = scale;
}

void detail::clear_gradient_fault() {
  g_fault_op.clear();
  g_fault_scale = 1.0;
}

Tensor Tensor::detach() const {
  require_defined(*this, "detach");
  return Tensor(new_node(node_->shape, node_->value));
}

Tensor Tensor::clone() const {
  require_defined(*this, "clone");
  Tensor t(new_node(node_->shape, node_->value));
  t.node_->requires_grad = node_->leaf && node_->requires_grad;
  return t;
}

std::uint64_t Tensor::id() const { return node_ ? node_->id : 0; }

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

Tensor neg(const Tensor& x) {
  return unary(
      "neg", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.values()) {
    if (!(v > 0.0)) throw NumericError("log: nonpositive argument");
  }
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor abs(const Tensor& x) {
  return unary(
      "abs", x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
  return unary(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(const Tensor& x) {
  for (double v : x.values()) {
    if (v < 0.0) throw NumericError("sqrt: negative argument");
  }
  return unary(
      "sqrt", x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor reciprocal(const Tensor& x) {
  return unary(
      "reciprocal", x, [](double v) { return 1.0 / v; },
      [](double, double y) { return -y * y; });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(
      "leaky_relu", x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      "clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v < lo || v > hi) ? 0.0 : 1.0; });
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
Tensor operator-(const Tensor& x) { return neg(x); }
Tensor operator+(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
Tensor operator-(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
Tensor operator*(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
Tensor operator*(double a, const Tensor& b) { return mul(Tensor::scalar(a), b); }
Tensor operator/(const Tensor& a, double b) { return div(a, Tensor::scalar(b)); }

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " * " +
                     shape_str(b.shape()));
  }
  Buffer out(m * n);
  MutMap(out.data(), m, n).noalias() = ConstMap(a.values().data(), m, k) * ConstMap(b.values().data(), k, n);
  return make_op("matmul", {m, n}, std::move(out), {&a, &b}, [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    ConstMap g(self.grad.data(), m, n);
    if (pa.requires_grad) {
      MutMap(pa.grad_buffer().data(), m, k).noalias() += g * ConstMap(pb.value.data(), k, n).transpose();
    }
    if (pb.requires_grad) {
      MutMap(pb.grad_buffer().data(), k, n).noalias() += ConstMap(pa.value.data(), m, k).transpose() * g;
    }
  });
}

Tensor transpose(const Tensor& x) {
  require_matrix(x, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  Buffer out(r * c);
  MutMap(out.data(), c, r) = ConstMap(x.values().data(), r, c).transpose();
  return make_op("transpose", {c, r}, std::move(out), {&x}, [r, c](Node& self) {
    Node& p = *self.parents[0];
    MutMap(p.grad_buffer().data(), r, c) += ConstMap(self.grad.data(), c, r).transpose();
  });
}

Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_matrix(x, "affine");
  require_matrix(weight, "affine");
  require_defined(bias, "affine");
  const std::size_t n = x.dim(0), in = x.dim(1), out_dim = weight.dim(1);
  if (weight.dim(0) != in) {
    throw ShapeError("affine: input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  }
  if (bias.numel() != out_dim) {
    throw ShapeError("affine: bias " + shape_str(bias.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  }
  Buffer out(n * out_dim);
  MutMap y(out.data(), n, out_dim);
  y.noalias() = ConstMap(x.values().data(), n, in) * ConstMap(weight.values().data(), in, out_dim);
  y.rowwise() += ConstMap(bias.values().data(), 1, out_dim).row(0);
  return make_op("affine", {n, out_dim}, std::move(out), {&x, &weight, &bias},
                 [n, in, out_dim](Node& self) {
                   Node& px = *self.parents[0];
                   Node& pw = *self.parents[1];
                   Node& pb = *self.parents[2];
                   ConstMap g(self.grad.data(), n, out_dim);
                   if (px.requires_grad) {
                     MutMap(px.grad_buffer().data(), n, in).noalias() +=
                         g * ConstMap(pw.value.data(), in, out_dim).transpose();
                   }
                   if (pw.requires_grad) {
                     MutMap(pw.grad_buffer().data(), in, out_dim).noalias() +=
                         ConstMap(px.value.data(), n, in).transpose() * g;
                   }
                   if (pb.requires_grad) {
                     MutMap(pb.grad_buffer().data(), 1, out_dim) += g.colwise().sum();
                   }
                 });
}

Tensor inverse_spd(const Tensor& x) {
  require_matrix(x, "inverse_spd");
  const std::size_t d = x.dim(0);
  if (x.dim(1) != d) throw ShapeError("inverse_spd: matrix is not square " + shape_str(x.shape()));
  const RowMat s = symmetric_part(x);
  Eigen::LLT<RowMat> llt(s);
  if (llt.info() != Eigen::Success) throw NumericError("inverse_spd: matrix is not positive definite");
  RowMat inv = llt.solve(RowMat::Identity(d, d));
  inv = 0.5 * (inv + inv.transpose()).eval();
  Buffer out(inv.data(), inv.data() + d * d);
  return make_op("inverse_spd", {d, d}, std::move(out), {&x}, [d](Node& self) {
    Node& p = *self.parents[0];
    ConstMap y(self.value.data(), d, d);
    ConstMap g(self.grad.data(), d, d);
    const RowMat m = -(y * g * y);
    MutMap(p.grad_buffer().data(), d, d) += 0.5 * (m + m.transpose());
  });
}

Tensor logdet_spd(const Tensor& x) {
  require_matrix(x, "logdet_spd");
  const std::size_t d = x.dim(0);
  if (x.dim(1) != d) throw ShapeError("logdet_spd: matrix is not square " + shape_str(x.shape()));
  const RowMat s = symmetric_part(x);
  Eigen::LLT<RowMat> llt(s);
  if (llt.info() != Eigen::Success) throw NumericError("logdet_spd: matrix is not positive definite");
  const RowMat l = llt.matrixL();
  double logdet = 0.0;
  for (std::size_t i = 0; i < d; ++i) logdet += 2.0 * std::log(l(i, i));
  RowMat inv = llt.solve(RowMat::Identity(d, d));
  inv = 0.5 * (inv + inv.transpose()).eval();
  return make_op("logdet_spd", {}, {logdet}, {&x}, [d, inv = std::move(inv)](Node& self) {
    Node& p = *self.parents[0];
    MutMap(p.grad_buffer().data(), d, d) += self.grad[0] * inv;
  });
}

Tensor diag(const Tensor& x) {
  require_matrix(x, "diag");
  const std::size_t d = x.dim(0);
  if (x.dim(1) != d) throw ShapeError("diag: matrix is not square " + shape_str(x.shape()));
  Buffer out(d);
  const auto v = x.values();
  for (std::size_t i = 0; i < d; ++i) out[i] = v[i * d + i];
  return make_op("diag", {d}, std::move(out), {&x}, [d](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < d; ++i) g[i * d + i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  double s = 0.0;
  for (double v : x.values()) s += v;
  return make_op("sum", {}, {s}, {&x}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (double& gi : g) gi += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  require_defined(x, "mean");
  return sum(x) * (1.0 / static_cast<double>(x.numel()));
}

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  require_defined(x, "sum_axis");
  if (axis >= x.rank()) {
    throw ShapeError("sum_axis: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
  }
  const Shape& in_shape = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in_shape[i];
  for (std::size_t i = axis + 1; i < in_shape.size(); ++i) inner *= in_shape[i];
  const std::size_t len = in_shape[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < in_shape.size(); ++i) {
    if (i != axis) out_shape.push_back(in_shape[i]);
  }
  const auto v = x.values();
  Buffer out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < len; ++j) {
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += v[(o * len + j) * inner + i];
    }
  }
  return make_op("sum_axis", std::move(out_shape), std::move(out), {&x},
                 [outer, len, inner](Node& self) {
                   auto& g = self.parents[0]->grad_buffer();
                   for (std::size_t o = 0; o < outer; ++o) {
                     for (std::size_t j = 0; j < len; ++j) {
                       for (std::size_t i = 0; i < inner; ++i) {
                         g[(o * len + j) * inner + i] += self.grad[o * inner + i];
                       }
                     }
                   }
                 });
}

Tensor softmax_rows(const Tensor& x) {
  require_matrix(x, "softmax_rows");
  const std::size_t n = x.dim(0), k = x.dim(1);
  const auto v = x.values();
  Buffer out(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = v.data() + i * k;
    const double m = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      out[i * k + j] = std::exp(row[j] - m);
      z += out[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] /= z;
  }
  return make_op("softmax_rows", {n, k}, std::move(out), {&x}, [n, k](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      const double* y = self.value.data() + i * k;
      const double* gy = self.grad.data() + i * k;
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += gy[j] * y[j];
      for (std::size_t j = 0; j < k; ++j) g[i * k + j] += y[j] * (gy[j] - dot);
    }
  });
}

Tensor logsumexp_rows(const Tensor& x) {
  require_matrix(x, "logsumexp_rows");
  const std::size_t n = x.dim(0), k = x.dim(1);
  const auto v = x.values();
  Buffer out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = v.data() + i * k;
    const double m = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - m);
    out[i] = m + std::log(z);
  }
  return make_op("logsumexp_rows", {n}, std::move(out), {&x}, [n, k](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        g[i * k + j] += self.grad[i] * std::exp(p.value[i * k + j] - self.value[i]);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Distances

namespace {
std::size_t batch_size_of(const Tensor& t) { return t.rank() >= 2 ? t.dim(0) : 1; }
}  // namespace

Tensor l1_distance(const Tensor& a, const Tensor& b) {
  require_defined(a, "l1_distance");
  require_defined(b, "l1_distance");
  if (a.shape() != b.shape()) {
    throw ShapeError("l1_distance: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  return sum(abs(a - b)) * (1.0 / static_cast<double>(batch_size_of(a)));
}

Tensor row_l2_distance(const Tensor& a, const Tensor& b) {
  require_defined(a, "row_l2_distance");
  require_defined(b, "row_l2_distance");
  if (a.shape() != b.shape()) {
    throw ShapeError("l2_distance: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t n = batch_size_of(a);
  const std::size_t m = a.numel() / std::max<std::size_t>(n, 1);
  const auto av = a.values();
  const auto bv = b.values();
  Buffer out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double d = av[i * m + j] - bv[i * m + j];
      s += d * d;
    }
    out[i] = std::sqrt(s);
  }
  return make_op("row_l2_distance", {n}, std::move(out), {&a, &b}, [n, m](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    // Touch both buffers so a zero-distance batch still leaves a (zero) gradient.
    if (pa.requires_grad) pa.grad_buffer();
    if (pb.requires_grad) pb.grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      const double r = self.value[i];
      if (r == 0.0) continue;
      const double scale = self.grad[i] / r;
      for (std::size_t j = 0; j < m; ++j) {
        const double d = pa.value[i * m + j] - pb.value[i * m + j];
        if (pa.requires_grad) pa.grad_buffer()[i * m + j] += scale * d;
        if (pb.requires_grad) pb.grad_buffer()[i * m + j] -= scale * d;
      }
    }
  });
}

Tensor l2_distance(const Tensor& a, const Tensor& b) { return mean(row_l2_distance(a, b)); }

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  const auto v = x.values();
  return make_op("reshape", std::move(shape), Buffer(v.begin(), v.end()), {&x},
                 [](Node& self) {
                   auto& g = self.parents[0]->grad_buffer();
                   for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                 });
}

Tensor column(const Tensor& x, std::size_t k) {
  require_matrix(x, "column");
  const std::size_t n = x.dim(0), m = x.dim(1);
  if (k >= m) throw ShapeError("column: index " + std::to_string(k) + " out of range for " + shape_str(x.shape()));
  const auto v = x.values();
  Buffer out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = v[i * m + k];
  return make_op("column", {n, 1}, std::move(out), {&x}, [n, m, k](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) g[i * m + k] += self.grad[i];
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_rows");
  const std::size_t m = x.dim(1);
  if (begin > end || end > x.dim(0)) throw ShapeError("slice_rows: range out of bounds");
  const auto v = x.values();
  Buffer out(v.begin() + begin * m, v.begin() + end * m);
  return make_op("slice_rows", {end - begin, m}, std::move(out), {&x}, [begin, m](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * m + i] += self.grad[i];
  });
}

Tensor broadcast_rows(const Tensor& row, std::size_t n) {
  require_defined(row, "broadcast_rows");
  if (row.rank() > 2 || (row.rank() == 2 && row.dim(0) != 1)) {
    throw ShapeError("broadcast_rows: expected a row vector, got " + shape_str(row.shape()));
  }
  const std::size_t m = row.numel();
  const auto v = row.values();
  Buffer out(n * m);
  for (std::size_t i = 0; i < n; ++i) std::copy(v.begin(), v.end(), out.begin() + i * m);
  return make_op("broadcast_rows", {n, m}, std::move(out), {&row}, [n, m](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) g[j] += self.grad[i * m + j];
    }
  });
}

Tensor broadcast_cols(const Tensor& col, std::size_t m) {
  require_defined(col, "broadcast_cols");
  if (col.rank() > 2 || (col.rank() == 2 && col.dim(1) != 1)) {
    throw ShapeError("broadcast_cols: expected a column vector, got " + shape_str(col.shape()));
  }
  const std::size_t n = col.numel();
  const auto v = col.values();
  Buffer out(n * m);
  for (std::size_t i = 0; i < n; ++i) std::fill_n(out.begin() + i * m, m, v[i]);
  return make_op("broadcast_cols", {n, m}, std::move(out), {&col}, [n, m](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) g[i] += self.grad[i * m + j];
    }
  });
}

Tensor stack_cols(const std::vector<Tensor>& cols) {
  if (cols.empty()) throw ShapeError("stack_cols: no columns");
  const std::size_t n = cols.front().numel();
  const std::size_t k = cols.size();
  Buffer out(n * k);
  for (std::size_t j = 0; j < k; ++j) {
    require_defined(cols[j], "stack_cols");
    if (cols[j].numel() != n) throw ShapeError("stack_cols: columns differ in length");
    const auto v = cols[j].values();
    for (std::size_t i = 0; i < n; ++i) out[i * k + j] = v[i];
  }
  return make_op_n("stack_cols", {n, k}, std::move(out), cols, [n, k](Node& self) {
    for (std::size_t j = 0; j < k; ++j) {
      Node& p = *self.parents[j];
      if (!p.requires_grad) continue;
      auto& g = p.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i * k + j];
    }
  });
}

}  // namespace gmgan
