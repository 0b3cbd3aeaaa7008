#pragma once

// Dense f64 tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a graph node. Every operation creates a new
// node holding its value and, when any input requires a gradient, a closure
// that pushes the node's gradient back into its parents. Calling backward() on
// a scalar walks the reachable subgraph in reverse topological order once.
//
// Binary operations require equal shapes, except that an operand with a single
// element is broadcast against the other. There is no other broadcasting;
// row/column expansion is spelled out with broadcast_rows / broadcast_cols.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace gmgan {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;

// Vectorized reductions peel a different number of leading elements depending
// on the buffer address, which changes the summation order. Pinning every
// buffer to a cache line keeps results bit-identical between runs.
template <class T>
struct CacheAligned {
  using value_type = T;
  static constexpr std::align_val_t align{64};
  CacheAligned() = default;
  template <class U>
  CacheAligned(const CacheAligned<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), align)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, align); }
  template <class U>
  bool operator==(const CacheAligned<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, CacheAligned<double>>;
}  // namespace detail

/// While alive, operations on the current thread record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

class Tensor {
 public:
  Tensor() = default;
  /// Constant tensor (no gradient).
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor identity(std::size_t n);
  /// Leaf tensor that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  /// Writable view of a leaf's values; used by optimizers and tests.
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  bool is_leaf() const;
  /// Only leaves may toggle; a frozen leaf stops gradient at itself.
  void set_requires_grad(bool on);

  /// Gradient buffer; empty span until a backward pass has reached the node.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Accumulates d(this)/d(leaf) into every reachable leaf that requires a
  /// gradient. `this` must hold exactly one element.
  void backward() const;

  /// Same values, cut from the graph.
  Tensor detach() const;
  /// Deep copy of the values into a fresh leaf with the same grad flag.
  Tensor clone() const;

  std::uint64_t id() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

using BackwardFn = std::function<void(Node& self)>;

struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
  std::uint64_t id = 0;
  const char* op = "leaf";

  /// Returns the gradient buffer, allocating zeros on first use.
  Buffer& grad_buffer();
};

/// Negative-control hook for the gradient checker: every later backward pass
/// multiplies the gradient arriving at nodes of type `op` by `scale`.
void set_gradient_fault(const std::string& op, double scale);
void clear_gradient_fault();

}  // namespace detail

// Elementwise.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor reciprocal(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Clamps into [lo, hi]; the gradient is zero where the clamp is active.
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& x);
Tensor operator+(const Tensor& a, double b);
Tensor operator-(const Tensor& a, double b);
Tensor operator*(const Tensor& a, double b);
Tensor operator*(double a, const Tensor& b);
Tensor operator/(const Tensor& a, double b);

// Linear algebra. All matrices are rank 2.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
/// x·W + b with x [n×in], W [in×out], b [out].
Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// Inverse of the symmetric part of x; fails if that is not positive definite.
Tensor inverse_spd(const Tensor& x);
/// log-determinant of the symmetric part of x via Cholesky.
Tensor logdet_spd(const Tensor& x);
/// Main diagonal of a square matrix, rank 1.
Tensor diag(const Tensor& x);

// Reductions.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sums out one axis; the result drops that axis.
Tensor sum_axis(const Tensor& x, std::size_t axis);
/// Row-wise softmax of an [n×K] matrix, stabilised by the row max.
Tensor softmax_rows(const Tensor& x);
/// Row-wise log-sum-exp of an [n×K] matrix, rank-1 result of length n.
Tensor logsumexp_rows(const Tensor& x);

// Per-sample distances over a batch (first axis), averaged over the batch.
/// Mean over samples of sum |a - b|; the subgradient at zero is 0.
Tensor l1_distance(const Tensor& a, const Tensor& b);
/// Mean over samples of the Euclidean norm of a - b; gradient 0 at a == b.
Tensor l2_distance(const Tensor& a, const Tensor& b);
/// Per-sample Euclidean norm of the rows of a - b, rank-1 of length n.
Tensor row_l2_distance(const Tensor& a, const Tensor& b);

// Shape manipulation.
Tensor reshape(const Tensor& x, Shape shape);
/// Column k of an [n×m] matrix as [n×1].
Tensor column(const Tensor& x, std::size_t k);
/// Rows [begin, end) of a rank-2 matrix.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
/// Repeats a length-m row ([m] or [1×m]) n times into [n×m].
Tensor broadcast_rows(const Tensor& row, std::size_t n);
/// Repeats a length-n column ([n] or [n×1]) m times into [n×m].
Tensor broadcast_cols(const Tensor& col, std::size_t m);
/// Stacks rank-1 vectors of equal length n as columns of an [n×K] matrix.
Tensor stack_cols(const std::vector<Tensor>& cols);

}  // namespace gmgan
