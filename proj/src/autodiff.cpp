#include "angle/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "angle/errors.hpp"

namespace angle {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.size() > 2) {
    throw std::invalid_argument("tensor rank > 2 not supported: " + shape_str(shape));
  }
  for (std::size_t d : shape) {
    if (d == 0) throw std::invalid_argument("zero-sized dimension: " + shape_str(shape));
  }
}

// (rows, cols) view: rank-0 and rank-1 tensors are a single row.
std::pair<std::size_t, std::size_t> as_matrix(const Shape& s) {
  if (s.size() == 2) return {s[0], s[1]};
  if (s.size() == 1) return {1, s[0]};
  return {1, 1};
}

}  // namespace

const Shape& Tensor::shape() const { return graph_->node(id_).shape; }
const std::vector<double>& Tensor::values() const { return graph_->node(id_).values; }
bool Tensor::requires_grad() const { return graph_->node(id_).requires_grad; }

const std::vector<double>& Tensor::grad() const {
  const auto& n = graph_->node(id_);
  if (n.grad.size() != n.values.size()) {
    throw std::logic_error("grad read before backward()");
  }
  return n.grad;
}

double Tensor::value() const {
  const auto& v = values();
  if (v.size() != 1) {
    throw std::invalid_argument("value() needs a scalar tensor, got " + shape_str(shape()));
  }
  return v[0];
}

const Graph::Node& Graph::node(std::size_t id) const { return nodes_[id]; }
Graph::Node& Graph::node(std::size_t id) { return nodes_[id]; }

void Graph::check_owns(const Tensor& t, const char* who) const {
  if (t.graph_ != this || t.id_ >= nodes_.size()) {
    throw std::invalid_argument(std::string(who) + ": tensor does not belong to this graph");
  }
}

Tensor Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return Tensor(this, nodes_.size() - 1);
}

Tensor Graph::leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape);
  if (values.size() != numel(shape)) {
    throw std::invalid_argument("leaf: " + std::to_string(values.size()) +
                                " values for shape " + shape_str(shape));
  }
  Node n;
  n.op = Op::Leaf;
  n.shape = std::move(shape);
  n.values = std::move(values);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Tensor Graph::constant(Shape shape, std::vector<double> values) {
  return leaf(std::move(shape), std::move(values), false);
}

Tensor Graph::scalar(double v) { return leaf({}, {v}, false); }

Tensor Graph::matmul(Tensor a, Tensor b) {
  check_owns(a, "matmul");
  check_owns(b, "matmul");
  const Node& na = node(a.id_);
  const Node& nb = node(b.id_);
  if (na.shape.size() != 2 || nb.shape.size() != 2 || na.shape[1] != nb.shape[0]) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(na.shape) +
                                " and " + shape_str(nb.shape));
  }
  std::size_t n = na.shape[0], k = na.shape[1], m = nb.shape[1];
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      double av = na.values[i * k + l];
      if (av == 0.0) continue;
      const double* brow = &nb.values[l * m];
      double* orow = &out[i * m];
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  Node o;
  o.op = Op::MatMul;
  o.shape = {n, m};
  o.values = std::move(out);
  o.requires_grad = na.requires_grad || nb.requires_grad;
  o.a = a.id_;
  o.b = b.id_;
  return push(std::move(o));
}

namespace {

void check_same_shape(const Shape& sa, const Shape& sb, const char* who) {
  if (sa != sb) {
    throw std::invalid_argument(std::string(who) + ": shape mismatch " + shape_str(sa) +
                                " vs " + shape_str(sb));
  }
}

}  // namespace

Tensor Graph::add(Tensor a, Tensor b) {
  check_owns(a, "add");
  check_owns(b, "add");
  const Node& na = node(a.id_);
  const Node& nb = node(b.id_);
  check_same_shape(na.shape, nb.shape, "add");
  std::vector<double> out(na.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.values[i] + nb.values[i];
  Node o;
  o.op = Op::Add;
  o.shape = na.shape;
  o.values = std::move(out);
  o.requires_grad = na.requires_grad || nb.requires_grad;
  o.a = a.id_;
  o.b = b.id_;
  return push(std::move(o));
}

Tensor Graph::sub(Tensor a, Tensor b) {
  check_owns(a, "sub");
  check_owns(b, "sub");
  const Node& na = node(a.id_);
  const Node& nb = node(b.id_);
  check_same_shape(na.shape, nb.shape, "sub");
  std::vector<double> out(na.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.values[i] - nb.values[i];
  Node o;
  o.op = Op::Sub;
  o.shape = na.shape;
  o.values = std::move(out);
  o.requires_grad = na.requires_grad || nb.requires_grad;
  o.a = a.id_;
  o.b = b.id_;
  return push(std::move(o));
}

Tensor Graph::mul(Tensor a, Tensor b) {
  check_owns(a, "mul");
  check_owns(b, "mul");
  const Node& na = node(a.id_);
  const Node& nb = node(b.id_);
  check_same_shape(na.shape, nb.shape, "mul");
  std::vector<double> out(na.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.values[i] * nb.values[i];
  Node o;
  o.op = Op::Mul;
  o.shape = na.shape;
  o.values = std::move(out);
  o.requires_grad = na.requires_grad || nb.requires_grad;
  o.a = a.id_;
  o.b = b.id_;
  return push(std::move(o));
}

Tensor Graph::div(Tensor a, Tensor b) {
  check_owns(a, "div");
  check_owns(b, "div");
  const Node& na = node(a.id_);
  const Node& nb = node(b.id_);
  check_same_shape(na.shape, nb.shape, "div");
  std::vector<double> out(na.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (nb.values[i] == 0.0) {
      throw NumericError("div: division by zero at index " + std::to_string(i));
    }
    out[i] = na.values[i] / nb.values[i];
  }
  Node o;
  o.op = Op::Div;
  o.shape = na.shape;
  o.values = std::move(out);
  o.requires_grad = na.requires_grad || nb.requires_grad;
  o.a = a.id_;
  o.b = b.id_;
  return push(std::move(o));
}

Tensor Graph::scale(Tensor a, double c) {
  check_owns(a, "scale");
  const Node& na = node(a.id_);
  std::vector<double> out(na.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.values[i] * c;
  Node o;
  o.op = Op::Scale;
  o.shape = na.shape;
  o.values = std::move(out);
  o.requires_grad = na.requires_grad;
  o.a = a.id_;
  o.attr = c;
  return push(std::move(o));
}

Tensor Graph::add_scalar(Tensor a, double c) {
  check_owns(a, "add_scalar");
  const Node& na = node(a.id_);
  std::vector<double> out(na.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.values[i] + c;
  Node o;
  o.op = Op::AddScalar;
  o.shape = na.shape;
  o.values = std::move(out);
  o.requires_grad = na.requires_grad;
  o.a = a.id_;
  o.attr = c;
  return push(std::move(o));
}

Tensor Graph::sqrt(Tensor a) {
  check_owns(a, "sqrt");
  const Node& na = node(a.id_);
  std::vector<double> out(na.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (na.values[i] < 0.0) {
      throw NumericError("sqrt: negative input at index " + std::to_string(i));
    }
    out[i] = std::sqrt(na.values[i]);
  }
  Node o;
  o.op = Op::Sqrt;
  o.shape = na.shape;
  o.values = std::move(out);
  o.requires_grad = na.requires_grad;
  o.a = a.id_;
  return push(std::move(o));
}

Tensor Graph::abs(Tensor a) {
  check_owns(a, "abs");
  const Node& na = node(a.id_);
  std::vector<double> out(na.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(na.values[i]);
  Node o;
  o.op = Op::Abs;
  o.shape = na.shape;
  o.values = std::move(out);
  o.requires_grad = na.requires_grad;
  o.a = a.id_;
  return push(std::move(o));
}

Tensor Graph::exp(Tensor a) {
  check_owns(a, "exp");
  const Node& na = node(a.id_);
  std::vector<double> out(na.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(na.values[i]);
  Node o;
  o.op = Op::Exp;
  o.shape = na.shape;
  o.values = std::move(out);
  o.requires_grad = na.requires_grad;
  o.a = a.id_;
  return push(std::move(o));
}

Tensor Graph::log(Tensor a) {
  check_owns(a, "log");
  const Node& na = node(a.id_);
  std::vector<double> out(na.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (na.values[i] <= 0.0) {
      throw NumericError("log: non-positive input at index " + std::to_string(i));
    }
    out[i] = std::log(na.values[i]);
  }
  Node o;
  o.op = Op::Log;
  o.shape = na.shape;
  o.values = std::move(out);
  o.requires_grad = na.requires_grad;
  o.a = a.id_;
  return push(std::move(o));
}

Tensor Graph::sin(Tensor a) {
  check_owns(a, "sin");
  const Node& na = node(a.id_);
  std::vector<double> out(na.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sin(na.values[i]);
  Node o;
  o.op = Op::Sin;
  o.shape = na.shape;
  o.values = std::move(out);
  o.requires_grad = na.requires_grad;
  o.a = a.id_;
  return push(std::move(o));
}

Tensor Graph::cos(Tensor a) {
  check_owns(a, "cos");
  const Node& na = node(a.id_);
  std::vector<double> out(na.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::cos(na.values[i]);
  Node o;
  o.op = Op::Cos;
  o.shape = na.shape;
  o.values = std::move(out);
  o.requires_grad = na.requires_grad;
  o.a = a.id_;
  return push(std::move(o));
}

namespace {

void check_axis(const Shape& s, std::size_t axis, const char* who) {
  if (s.empty()) {
    throw std::invalid_argument(std::string(who) + ": scalar input has no axis");
  }
  if (axis >= s.size()) {
    throw std::invalid_argument(std::string(who) + ": axis " + std::to_string(axis) +
                                " out of range for " + shape_str(s));
  }
}

Shape reduced_shape(const Shape& s, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) out.push_back(s[i]);
  }
  return out;
}

// Iterates the `count` slices of length `len` and stride `stride` that a
// rank<=2 reduction over `axis` produces.
struct SliceIter {
  std::size_t count, len, stride, base_step;
};

SliceIter slices_for(const Shape& s, std::size_t axis) {
  if (s.size() == 1) return {1, s[0], 1, 0};
  std::size_t rows = s[0], cols = s[1];
  if (axis == 0) return {cols, rows, cols, 1};  // one slice per column
  return {rows, cols, 1, cols};                 // one slice per row
}

}  // namespace

Tensor Graph::sum(Tensor a, std::size_t axis) {
  check_owns(a, "sum");
  const Node& na = node(a.id_);
  check_axis(na.shape, axis, "sum");
  SliceIter it = slices_for(na.shape, axis);
  std::vector<double> out(it.count, 0.0);
  for (std::size_t s = 0; s < it.count; ++s) {
    double acc = 0.0;
    for (std::size_t k = 0; k < it.len; ++k) acc += na.values[s * it.base_step + k * it.stride];
    out[s] = acc;
  }
  Node o;
  o.op = Op::SumAxis;
  o.shape = reduced_shape(na.shape, axis);
  o.values = std::move(out);
  o.requires_grad = na.requires_grad;
  o.a = a.id_;
  o.axis = axis;
  return push(std::move(o));
}

Tensor Graph::max(Tensor a, std::size_t axis) {
  check_owns(a, "max");
  const Node& na = node(a.id_);
  check_axis(na.shape, axis, "max");
  SliceIter it = slices_for(na.shape, axis);
  std::vector<double> out(it.count);
  for (std::size_t s = 0; s < it.count; ++s) {
    double best = na.values[s * it.base_step];
    for (std::size_t k = 1; k < it.len; ++k) {
      best = std::max(best, na.values[s * it.base_step + k * it.stride]);
    }
    out[s] = best;
  }
  Node o;
  o.op = Op::MaxAxis;
  o.shape = reduced_shape(na.shape, axis);
  o.values = std::move(out);
  o.requires_grad = na.requires_grad;
  o.a = a.id_;
  o.axis = axis;
  return push(std::move(o));
}

Tensor Graph::logsumexp(Tensor a, std::size_t axis) {
  check_owns(a, "logsumexp");
  const Node& na = node(a.id_);
  check_axis(na.shape, axis, "logsumexp");
  SliceIter it = slices_for(na.shape, axis);
  if (it.len == 0) throw std::invalid_argument("logsumexp: empty axis slice");
  std::vector<double> out(it.count);
  for (std::size_t s = 0; s < it.count; ++s) {
    double m = na.values[s * it.base_step];
    for (std::size_t k = 1; k < it.len; ++k) {
      m = std::max(m, na.values[s * it.base_step + k * it.stride]);
    }
    double acc = 0.0;
    for (std::size_t k = 0; k < it.len; ++k) {
      acc += std::exp(na.values[s * it.base_step + k * it.stride] - m);
    }
    out[s] = m + std::log(acc);
  }
  Node o;
  o.op = Op::LogSumExp;
  o.shape = reduced_shape(na.shape, axis);
  o.values = std::move(out);
  o.requires_grad = na.requires_grad;
  o.a = a.id_;
  o.axis = axis;
  return push(std::move(o));
}

Tensor Graph::slice_cols(Tensor a, std::size_t start, std::size_t count) {
  check_owns(a, "slice_cols");
  const Node& na = node(a.id_);
  if (na.shape.empty()) throw std::invalid_argument("slice_cols: scalar input");
  std::size_t cols = na.shape.back();
  if (count == 0 || start + count > cols) {
    throw std::invalid_argument("slice_cols: range [" + std::to_string(start) + ", " +
                                std::to_string(start + count) + ") out of " +
                                shape_str(na.shape));
  }
  auto [rows, c] = as_matrix(na.shape);
  std::vector<double> out(rows * count);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = na.values[i * c + start + j];
  }
  Node o;
  o.op = Op::SliceCols;
  o.shape = na.shape.size() == 2 ? Shape{rows, count} : Shape{count};
  o.values = std::move(out);
  o.requires_grad = na.requires_grad;
  o.a = a.id_;
  o.i0 = start;
  o.i1 = count;
  return push(std::move(o));
}

std::pair<Tensor, Tensor> Graph::split_half(Tensor a) {
  check_owns(a, "split_half");
  const Node& na = node(a.id_);
  if (na.shape.empty()) throw std::invalid_argument("split_half: scalar input");
  std::size_t cols = na.shape.back();
  if (cols % 2 != 0) {
    throw std::invalid_argument("split_half: odd last axis in " + shape_str(na.shape));
  }
  std::size_t h = cols / 2;
  Tensor lo = slice_cols(a, 0, h);
  Tensor hi = slice_cols(a, h, h);
  return {lo, hi};
}

Tensor Graph::concat_cols(Tensor a, Tensor b) {
  check_owns(a, "concat_cols");
  check_owns(b, "concat_cols");
  const Node& na = node(a.id_);
  const Node& nb = node(b.id_);
  if (na.shape.empty() || nb.shape.empty() || na.shape.size() != nb.shape.size()) {
    throw std::invalid_argument("concat_cols: incompatible shapes " + shape_str(na.shape) +
                                " and " + shape_str(nb.shape));
  }
  if (na.shape.size() == 2 && na.shape[0] != nb.shape[0]) {
    throw std::invalid_argument("concat_cols: row mismatch " + shape_str(na.shape) +
                                " and " + shape_str(nb.shape));
  }
  auto [rows, ca] = as_matrix(na.shape);
  std::size_t cb = nb.shape.back();
  std::vector<double> out(rows * (ca + cb));
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < ca; ++j) out[i * (ca + cb) + j] = na.values[i * ca + j];
    for (std::size_t j = 0; j < cb; ++j) out[i * (ca + cb) + ca + j] = nb.values[i * cb + j];
  }
  Node o;
  o.op = Op::ConcatCols;
  o.shape = na.shape.size() == 2 ? Shape{rows, ca + cb} : Shape{ca + cb};
  o.values = std::move(out);
  o.requires_grad = na.requires_grad || nb.requires_grad;
  o.a = a.id_;
  o.b = b.id_;
  o.i0 = ca;  // split point for backward
  return push(std::move(o));
}

Tensor Graph::concat_rows(Tensor a, Tensor b) {
  check_owns(a, "concat_rows");
  check_owns(b, "concat_rows");
  const Node& na = node(a.id_);
  const Node& nb = node(b.id_);
  if (na.shape.size() != 2 || nb.shape.size() != 2 || na.shape[1] != nb.shape[1]) {
    throw std::invalid_argument("concat_rows: incompatible shapes " + shape_str(na.shape) +
                                " and " + shape_str(nb.shape));
  }
  std::vector<double> out;
  out.reserve(na.values.size() + nb.values.size());
  out.insert(out.end(), na.values.begin(), na.values.end());
  out.insert(out.end(), nb.values.begin(), nb.values.end());
  Node o;
  o.op = Op::ConcatRows;
  o.shape = {na.shape[0] + nb.shape[0], na.shape[1]};
  o.values = std::move(out);
  o.requires_grad = na.requires_grad || nb.requires_grad;
  o.a = a.id_;
  o.b = b.id_;
  o.i0 = na.shape[0];
  return push(std::move(o));
}

Tensor Graph::select_rows(Tensor a, std::vector<std::size_t> rows) {
  check_owns(a, "select_rows");
  const Node& na = node(a.id_);
  if (na.shape.empty()) throw std::invalid_argument("select_rows: scalar input");
  if (rows.empty()) throw std::invalid_argument("select_rows: empty selection");
  std::size_t n = na.shape[0];
  for (std::size_t r : rows) {
    if (r >= n) {
      throw std::invalid_argument("select_rows: row " + std::to_string(r) + " out of " +
                                  shape_str(na.shape));
    }
  }
  if (na.shape.size() == 1) {
    std::vector<double> out(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) out[i] = na.values[rows[i]];
    Node o;
    o.op = Op::SelectRows;
    o.shape = {rows.size()};
    o.values = std::move(out);
    o.requires_grad = na.requires_grad;
    o.a = a.id_;
    o.rows = std::move(rows);
    return push(std::move(o));
  }
  std::size_t cols = na.shape[1];
  std::vector<double> out(rows.size() * cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(&na.values[rows[i] * cols], cols, &out[i * cols]);
  }
  Node o;
  o.op = Op::SelectRows;
  o.shape = {rows.size(), cols};
  o.values = std::move(out);
  o.requires_grad = na.requires_grad;
  o.a = a.id_;
  o.rows = std::move(rows);
  return push(std::move(o));
}

Tensor Graph::transpose(Tensor a) {
  check_owns(a, "transpose");
  const Node& na = node(a.id_);
  if (na.shape.size() != 2) {
    throw std::invalid_argument("transpose: rank-2 tensor required, got " + shape_str(na.shape));
  }
  std::size_t n = na.shape[0], m = na.shape[1];
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = na.values[i * m + j];
  }
  Node o;
  o.op = Op::Transpose;
  o.shape = {m, n};
  o.values = std::move(out);
  o.requires_grad = na.requires_grad;
  o.a = a.id_;
  return push(std::move(o));
}

Tensor Graph::reshape(Tensor a, Shape shape) {
  check_owns(a, "reshape");
  check_shape(shape);
  const Node& na = node(a.id_);
  if (numel(shape) != na.values.size()) {
    throw std::invalid_argument("reshape: " + shape_str(na.shape) + " to " + shape_str(shape));
  }
  Node o;
  o.op = Op::Reshape;
  o.shape = std::move(shape);
  o.values = na.values;
  o.requires_grad = na.requires_grad;
  o.a = a.id_;
  return push(std::move(o));
}

Tensor Graph::broadcast_col(Tensor a, std::size_t cols) {
  check_owns(a, "broadcast_col");
  const Node& na = node(a.id_);
  bool ok = na.shape.size() == 1 || (na.shape.size() == 2 && na.shape[1] == 1);
  if (!ok || cols == 0) {
    throw std::invalid_argument("broadcast_col: need (n,) or (n,1), got " + shape_str(na.shape));
  }
  std::size_t n = na.shape[0];
  std::vector<double> out(n * cols);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill_n(&out[i * cols], cols, na.values[i]);
  }
  Node o;
  o.op = Op::BroadcastCol;
  o.shape = {n, cols};
  o.values = std::move(out);
  o.requires_grad = na.requires_grad;
  o.a = a.id_;
  o.i0 = cols;
  return push(std::move(o));
}

Tensor Graph::broadcast_row(Tensor a, std::size_t rows) {
  check_owns(a, "broadcast_row");
  const Node& na = node(a.id_);
  bool ok = na.shape.size() == 1 || (na.shape.size() == 2 && na.shape[0] == 1);
  if (!ok || rows == 0) {
    throw std::invalid_argument("broadcast_row: need (m,) or (1,m), got " + shape_str(na.shape));
  }
  std::size_t m = na.shape.back();
  std::vector<double> out(rows * m);
  for (std::size_t i = 0; i < rows; ++i) {
    std::copy_n(na.values.begin(), m, &out[i * m]);
  }
  Node o;
  o.op = Op::BroadcastRow;
  o.shape = {rows, m};
  o.values = std::move(out);
  o.requires_grad = na.requires_grad;
  o.a = a.id_;
  o.i0 = rows;
  return push(std::move(o));
}

void Graph::backward(Tensor root) {
  check_owns(root, "backward");
  const Node& r = node(root.id_);
  if (numel(r.shape) != 1) {
    throw std::invalid_argument("backward: root must be scalar-shaped, got " + shape_str(r.shape));
  }
  for (auto& n : nodes_) {
    n.grad.assign(n.values.size(), 0.0);
  }
  node(root.id_).grad[0] = 1.0;

  for (std::size_t idx = root.id_ + 1; idx-- > 0;) {
    Node& n = node(idx);
    if (!n.requires_grad || n.op == Op::Leaf) continue;
    const std::vector<double>& g = n.grad;
    switch (n.op) {
      case Op::MatMul: {
        Node& A = node(n.a);
        Node& B = node(n.b);
        std::size_t rows = A.shape[0], k = A.shape[1], m = B.shape[1];
        if (A.requires_grad) {
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t l = 0; l < k; ++l) {
              double acc = 0.0;
              for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * B.values[l * m + j];
              A.grad[i * k + l] += acc;
            }
          }
        }
        if (B.requires_grad) {
          for (std::size_t l = 0; l < k; ++l) {
            for (std::size_t i = 0; i < rows; ++i) {
              double av = A.values[i * k + l];
              if (av == 0.0) continue;
              for (std::size_t j = 0; j < m; ++j) B.grad[l * m + j] += av * g[i * m + j];
            }
          }
        }
        break;
      }
      case Op::Add: {
        Node& A = node(n.a);
        Node& B = node(n.b);
        if (A.requires_grad) {
          for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i];
        }
        if (B.requires_grad) {
          for (std::size_t i = 0; i < g.size(); ++i) B.grad[i] += g[i];
        }
        break;
      }
      case Op::Sub: {
        Node& A = node(n.a);
        Node& B = node(n.b);
        if (A.requires_grad) {
          for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i];
        }
        if (B.requires_grad) {
          for (std::size_t i = 0; i < g.size(); ++i) B.grad[i] -= g[i];
        }
        break;
      }
      case Op::Mul: {
        Node& A = node(n.a);
        Node& B = node(n.b);
        if (A.requires_grad) {
          for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i] * B.values[i];
        }
        if (B.requires_grad) {
          for (std::size_t i = 0; i < g.size(); ++i) B.grad[i] += g[i] * A.values[i];
        }
        break;
      }
      case Op::Div: {
        Node& A = node(n.a);
        Node& B = node(n.b);
        if (A.requires_grad) {
          for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i] / B.values[i];
        }
        if (B.requires_grad) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            B.grad[i] -= g[i] * A.values[i] / (B.values[i] * B.values[i]);
          }
        }
        break;
      }
      case Op::Scale: {
        Node& A = node(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i] * n.attr;
        break;
      }
      case Op::AddScalar: {
        Node& A = node(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i];
        break;
      }
      case Op::Sqrt: {
        Node& A = node(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i] * 0.5 / n.values[i];
        break;
      }
      case Op::Abs: {
        // Subgradient at 0 is 0.
        Node& A = node(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) {
          double s = A.values[i] > 0.0 ? 1.0 : (A.values[i] < 0.0 ? -1.0 : 0.0);
          A.grad[i] += g[i] * s;
        }
        break;
      }
      case Op::Exp: {
        Node& A = node(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i] * n.values[i];
        break;
      }
      case Op::Log: {
        Node& A = node(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i] / A.values[i];
        break;
      }
      case Op::Sin: {
        Node& A = node(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i] * std::cos(A.values[i]);
        break;
      }
      case Op::Cos: {
        Node& A = node(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] -= g[i] * std::sin(A.values[i]);
        break;
      }
      case Op::SumAxis: {
        Node& A = node(n.a);
        SliceIter it = slices_for(A.shape, n.axis);
        for (std::size_t s = 0; s < it.count; ++s) {
          for (std::size_t k = 0; k < it.len; ++k) {
            A.grad[s * it.base_step + k * it.stride] += g[s];
          }
        }
        break;
      }
      case Op::MaxAxis: {
        // Ties route to the first maximal element, deterministically.
        Node& A = node(n.a);
        SliceIter it = slices_for(A.shape, n.axis);
        for (std::size_t s = 0; s < it.count; ++s) {
          std::size_t arg = 0;
          double best = A.values[s * it.base_step];
          for (std::size_t k = 1; k < it.len; ++k) {
            double v = A.values[s * it.base_step + k * it.stride];
            if (v > best) {
              best = v;
              arg = k;
            }
          }
          A.grad[s * it.base_step + arg * it.stride] += g[s];
        }
        break;
      }
      case Op::LogSumExp: {
        Node& A = node(n.a);
        SliceIter it = slices_for(A.shape, n.axis);
        for (std::size_t s = 0; s < it.count; ++s) {
          for (std::size_t k = 0; k < it.len; ++k) {
            std::size_t pos = s * it.base_step + k * it.stride;
            A.grad[pos] += g[s] * std::exp(A.values[pos] - n.values[s]);
          }
        }
        break;
      }
      case Op::SliceCols: {
        Node& A = node(n.a);
        auto [rows, cols] = as_matrix(A.shape);
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < n.i1; ++j) {
            A.grad[i * cols + n.i0 + j] += g[i * n.i1 + j];
          }
        }
        break;
      }
      case Op::ConcatCols: {
        Node& A = node(n.a);
        Node& B = node(n.b);
        auto [rows, total] = as_matrix(n.shape);
        std::size_t ca = n.i0, cb = total - n.i0;
        if (A.requires_grad) {
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < ca; ++j) A.grad[i * ca + j] += g[i * total + j];
          }
        }
        if (B.requires_grad) {
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cb; ++j) B.grad[i * cb + j] += g[i * total + ca + j];
          }
        }
        break;
      }
      case Op::ConcatRows: {
        Node& A = node(n.a);
        Node& B = node(n.b);
        std::size_t split = n.i0 * n.shape[1];
        if (A.requires_grad) {
          for (std::size_t i = 0; i < split; ++i) A.grad[i] += g[i];
        }
        if (B.requires_grad) {
          for (std::size_t i = split; i < g.size(); ++i) B.grad[i - split] += g[i];
        }
        break;
      }
      case Op::SelectRows: {
        // Repeated rows accumulate.
        Node& A = node(n.a);
        std::size_t cols = A.shape.size() == 2 ? A.shape[1] : 1;
        for (std::size_t i = 0; i < n.rows.size(); ++i) {
          for (std::size_t j = 0; j < cols; ++j) {
            A.grad[n.rows[i] * cols + j] += g[i * cols + j];
          }
        }
        break;
      }
      case Op::Transpose: {
        Node& A = node(n.a);
        std::size_t m = n.shape[0], rows = n.shape[1];
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < rows; ++j) A.grad[j * m + i] += g[i * rows + j];
        }
        break;
      }
      case Op::Reshape: {
        Node& A = node(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) A.grad[i] += g[i];
        break;
      }
      case Op::BroadcastCol: {
        Node& A = node(n.a);
        std::size_t rows = n.shape[0], cols = n.shape[1];
        for (std::size_t i = 0; i < rows; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < cols; ++j) acc += g[i * cols + j];
          A.grad[i] += acc;
        }
        break;
      }
      case Op::BroadcastRow: {
        Node& A = node(n.a);
        std::size_t rows = n.shape[0], cols = n.shape[1];
        for (std::size_t j = 0; j < cols; ++j) {
          double acc = 0.0;
          for (std::size_t i = 0; i < rows; ++i) acc += g[i * cols + j];
          A.grad[j] += acc;
        }
        break;
      }
      case Op::Leaf:
        break;
    }
  }
}

double finite_difference_check(const std::function<Tensor(Graph&, Tensor)>& fn,
                               const Shape& x_shape, std::span<const double> x0,
                               double step) {
  if (step <= 0.0) throw std::invalid_argument("finite_difference_check: step must be > 0");
  if (x0.size() != numel(x_shape)) {
    throw std::invalid_argument("finite_difference_check: " + std::to_string(x0.size()) +
                                " values for shape " + shape_str(x_shape));
  }
  std::vector<double> base(x0.begin(), x0.end());

  Graph g;
  Tensor x = g.leaf(x_shape, base, true);
  Tensor y = fn(g, x);
  if (numel(y.shape()) != 1) {
    throw std::invalid_argument("finite_difference_check: fn must return a scalar, got " +
                                shape_str(y.shape()));
  }
  g.backward(y);
  std::vector<double> analytic = x.grad();

  auto eval_at = [&](std::size_t coord, double v) {
    Graph h;
    std::vector<double> pert = base;
    pert[coord] = v;
    Tensor xp = h.leaf(x_shape, std::move(pert), false);
    try {
      Tensor yp = fn(h, xp);
      return yp.value();
    } catch (const std::exception& e) {
      throw NumericError("finite_difference_check: fn failed at coordinate " +
                         std::to_string(coord) + ": " + e.what());
    }
  };

  double worst = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    double fp = eval_at(i, base[i] + step);
    double fm = eval_at(i, base[i] - step);
    double central = (fp - fm) / (2.0 * step);
    double denom = std::max(1e-8, std::abs(analytic[i]) + std::abs(central));
    worst = std::max(worst, std::abs(analytic[i] - central) / denom);
  }
  return worst;
}

}  // namespace angle
