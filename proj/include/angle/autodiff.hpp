#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace angle {

// Row-major tensors of rank 0..2, 64-bit floats throughout.
using Shape = std::vector<std::size_t>;

inline constexpr std::size_t npos = static_cast<std::size_t>(-1);

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class Op : std::uint8_t {
  Leaf,
  MatMul,
  Add,
  Sub,
  Mul,
  Div,
  Scale,      // tensor * scalar attribute
  AddScalar,  // tensor + scalar attribute
  Sqrt,
  Abs,
  Exp,
  Log,
  Sin,
  Cos,
  SumAxis,
  MaxAxis,
  LogSumExp,
  SliceCols,
  ConcatCols,
  ConcatRows,
  SelectRows,
  Transpose,
  Reshape,
  BroadcastCol,  // (n,) or (n,1) -> (n,m)
  BroadcastRow,  // (m,) or (1,m) -> (n,m)
};

class Graph;

// Lightweight handle into a Graph node. The graph must outlive the handle;
// graphs are single-threaded builders, one per forward/backward pass.
class Tensor {
 public:
  Tensor() = default;

  bool valid() const { return graph_ != nullptr; }
  std::size_t id() const { return id_; }
  const Shape& shape() const;
  const std::vector<double>& values() const;
  // Populated by Graph::backward; same shape as values.
  const std::vector<double>& grad() const;
  bool requires_grad() const;
  // Convenience for scalar-shaped tensors.
  double value() const;

 private:
  friend class Graph;
  Tensor(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Explicit tape: every operation appends a node holding the op kind, input
// ids, attributes, and the eagerly computed forward values. backward() sweeps
// the tape once in reverse. Replaying the same ops on the same inputs is
// bit-identical.
class Graph {
 public:
  Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad = false);
  Tensor constant(Shape shape, std::vector<double> values);
  Tensor scalar(double v);  // rank-0 constant

  Tensor matmul(Tensor a, Tensor b);
  Tensor add(Tensor a, Tensor b);
  Tensor sub(Tensor a, Tensor b);
  Tensor mul(Tensor a, Tensor b);
  Tensor div(Tensor a, Tensor b);
  Tensor scale(Tensor a, double c);
  Tensor add_scalar(Tensor a, double c);
  Tensor sqrt(Tensor a);
  Tensor abs(Tensor a);
  Tensor exp(Tensor a);
  Tensor log(Tensor a);
  Tensor sin(Tensor a);
  Tensor cos(Tensor a);

  // Reductions drop the reduced axis: (n,m) axis 0 -> (m,), axis 1 -> (n,);
  // (n,) axis 0 -> scalar.
  Tensor sum(Tensor a, std::size_t axis);
  Tensor max(Tensor a, std::size_t axis);
  // Max-shifted log(sum(exp())): stable for magnitudes up to ~1e308's log range.
  Tensor logsumexp(Tensor a, std::size_t axis);

  Tensor slice_cols(Tensor a, std::size_t start, std::size_t count);
  std::pair<Tensor, Tensor> split_half(Tensor a);  // last axis, even extent
  Tensor concat_cols(Tensor a, Tensor b);          // last axis
  Tensor concat_rows(Tensor a, Tensor b);          // rank-2, axis 0
  Tensor select_rows(Tensor a, std::vector<std::size_t> rows);
  Tensor transpose(Tensor a);
  Tensor reshape(Tensor a, Shape shape);
  Tensor broadcast_col(Tensor a, std::size_t cols);
  Tensor broadcast_row(Tensor a, std::size_t rows);

  // Seeds d(root)/d(root) = 1 and accumulates exact partials into every
  // node's grad, visiting each node at most once in reverse creation order.
  // root must be scalar-shaped. Grads are reset on every call.
  void backward(Tensor root);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  friend class Tensor;

  struct Node {
    Op op = Op::Leaf;
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
    std::size_t a = npos;
    std::size_t b = npos;
    double attr = 0.0;                // Scale / AddScalar
    std::size_t axis = 0;             // reductions
    std::size_t i0 = 0;               // slice start / broadcast extent
    std::size_t i1 = 0;               // slice count
    std::vector<std::size_t> rows;    // SelectRows
  };

  const Node& node(std::size_t id) const;
  Node& node(std::size_t id);
  Tensor push(Node n);
  void check_owns(const Tensor& t, const char* who) const;

  std::vector<Node> nodes_;
};

// Max over coordinates of |analytic - central| / max(1e-8, |analytic| + |central|),
// with fn rebuilt on a fresh graph for every perturbed evaluation. fn must
// return a scalar-shaped tensor. Failures inside fn on a perturbed input are
// rethrown with the coordinate index attached.
double finite_difference_check(const std::function<Tensor(Graph&, Tensor)>& fn,
                               const Shape& x_shape, std::span<const double> x0,
                               double step);

}  // namespace angle
