#pragma once

// Minimal reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every operation as a node holding its value and a backward closure.
// Elementwise binary operations broadcast operands of shape (1, c), (r, 1) or (1, 1)
// against an (r, c) operand. A tape is single threaded; independent tapes may run
// concurrently over a shared, read-only ParameterStore.

#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace mts3::ad {

using Matrix = Eigen::MatrixXd;

struct Parameter {
  std::string name;
  Matrix value;
};

/// Named, ordered collection of trainable tensors.
class ParameterStore {
 public:
  int add(std::string name, Matrix value);
  int index(const std::string& name) const;  // throws std::out_of_range
  bool contains(const std::string& name) const { return by_name_.count(name) != 0; }

  Parameter& operator[](int i) { return params_[static_cast<std::size_t>(i)]; }
  const Parameter& operator[](int i) const { return params_[static_cast<std::size_t>(i)]; }
  int size() const { return static_cast<int>(params_.size()); }
  long scalar_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, int> by_name_;
};

/// One gradient matrix per parameter, same order as the store. Empty matrix = no gradient.
using GradientSet = std::vector<Matrix>;

GradientSet zero_gradients(const ParameterStore& store);

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var constant(double value, Eigen::Index rows = 1, Eigen::Index cols = 1);

  /// Leaf bound to store[index]; repeated calls return the same node.
  Var param(const ParameterStore& store, int index);
  Var param(const ParameterStore& store, const std::string& name) { return param(store, store.index(name)); }

  /// Appends a node. `requires_grad` false means `backward` is never invoked.
  Var push(Matrix value, bool requires_grad, Backward backward);

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  bool has_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad.size() != 0; }
  const Matrix& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

  /// Adds `g` into the gradient slot of node `id` (no-op for nodes without requires_grad).
  void accumulate(int id, const Matrix& g);
  void accumulate(int id, Matrix&& g);
  /// Adds `g` into rows [start, start + g.rows()) (or columns) of node `id`'s gradient, allocating
  /// a zero gradient of the node's shape on first use.
  void accumulate_rows(int id, Eigen::Index start, const Matrix& g);
  void accumulate_cols(int id, Eigen::Index start, const Matrix& g);

  /// Reverse sweep seeded with d(loss)/d(loss) = 1; loss must be 1x1. Parameter gradients are
  /// added into `grads` (resized to the store when empty).
  void backward(const Var& loss, GradientSet& grads);
  /// Reverse sweep without parameter export; node gradients remain queryable through grad().
  void backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;
  const ParameterStore* store_ = nullptr;
  std::unordered_map<int, int> param_nodes_;  // store index -> node id
};

// Elementwise arithmetic (with broadcasting).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var add_scalar(const Var& a, double s);
Var scale(const Var& a, double s);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator+(const Var& a, double s) { return add_scalar(a, s); }
inline Var operator+(double s, const Var& a) { return add_scalar(a, s); }
inline Var operator-(const Var& a, double s) { return add_scalar(a, -s); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

// Linear algebra and restructuring.
Var matmul(const Var& a, const Var& b);     // a * b
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);

// Reductions.
Var sum(const Var& a);      // 1x1
Var mean(const Var& a);     // 1x1
Var col_sum(const Var& a);  // (1, c): sum over rows
Var row_sum(const Var& a);  // (r, 1): sum over columns
/// Rows laid out as (group, member, batch) with `batch` rows per member and `members` members
/// per group; returns (groups * batch, c) with each group's members summed.
Var group_sum(const Var& a, Eigen::Index batch, Eigen::Index members);

// Elementwise functions.
Var relu(const Var& a);
Var elu(const Var& a);
Var softplus(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var reciprocal(const Var& a);
Var clamp_min(const Var& a, double lower);

/// mask(i, j) != 0 selects `a`, otherwise `b`. Mask shape (r, c), (r, 1) or (1, c).
Var where(const Matrix& mask, const Var& a, const Var& b);

/// Same forward value; no gradient flows to the input.
Var stop_gradient(const Var& a);

}  // namespace mts3::ad
