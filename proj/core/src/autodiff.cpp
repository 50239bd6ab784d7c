#include "mts3/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mts3/errors.hpp"

namespace mts3::ad {

using Eigen::Index;

// ---------------------------------------------------------------------------
// ParameterStore

int ParameterStore::add(std::string name, Matrix value) {
  if (by_name_.count(name) != 0) throw std::invalid_argument("duplicate parameter name: " + name);
  const int id = static_cast<int>(params_.size());
  by_name_.emplace(name, id);
  params_.push_back({std::move(name), std::move(value)});
  return id;
}

int ParameterStore::index(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

long ParameterStore::scalar_count() const {
  long n = 0;
  for (const auto& p : params_) n += static_cast<long>(p.value.size());
  return n;
}

GradientSet zero_gradients(const ParameterStore& store) {
  GradientSet g;
  g.reserve(static_cast<std::size_t>(store.size()));
  for (const auto& p : store) g.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  return g;
}

// ---------------------------------------------------------------------------
// Tape

const Matrix& Var::value() const { return tape_->value(id_); }

Var Tape::push(Matrix value, bool requires_grad, Backward backward) {
  const int id = static_cast<int>(nodes_.size());
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  return Var(this, id);
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::constant(double value, Index rows, Index cols) { return constant(Matrix::Constant(rows, cols, value)); }

Var Tape::param(const ParameterStore& store, int index) {
  if (store_ != nullptr && store_ != &store) {
    throw std::logic_error("tape already bound to a different parameter store");
  }
  store_ = &store;
  auto it = param_nodes_.find(index);
  if (it != param_nodes_.end()) return Var(this, it->second);
  Var v = push(store[index].value, true, nullptr);
  // Leaves keep requires_grad but have no backward closure.
  param_nodes_.emplace(index, v.id());
  return v;
}

void Tape::accumulate(int id, const Matrix& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::accumulate(int id, Matrix&& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = std::move(g);
  } else {
    n.grad += g;
  }
}

void Tape::accumulate_rows(int id, Index start, const Matrix& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  n.grad.middleRows(start, g.rows()) += g;
}

void Tape::accumulate_cols(int id, Index start, const Matrix& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  n.grad.middleCols(start, g.cols()) += g;
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw std::logic_error("backward: variable belongs to another tape");
  if (loss.rows() != 1 || loss.cols() != 1) throw ShapeError("backward: loss must be 1x1");
  accumulate(loss.id(), Matrix::Ones(1, 1));
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.backward && n.grad.size() != 0) n.backward(*this, id);
  }
}

void Tape::backward(const Var& loss, GradientSet& grads) {
  backward(loss);
  if (store_ == nullptr) return;
  if (grads.empty()) grads = zero_gradients(*store_);
  for (const auto& [index, node] : param_nodes_) {
    const Matrix& g = nodes_[static_cast<std::size_t>(node)].grad;
    if (g.size() == 0) continue;
    Matrix& dst = grads[static_cast<std::size_t>(index)];
    if (dst.size() == 0) {
      dst = g;
    } else {
      dst += g;
    }
  }
}

// ---------------------------------------------------------------------------
// Broadcasting helpers

namespace {

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw std::logic_error("operation on an unbound variable");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw std::logic_error("operands live on different tapes");
  return t;
}

Index broadcast_dim(Index a, Index b, const char* op) {
  if (a == b) return a;
  if (a == 1) return b;
  if (b == 1) return a;
  throw ShapeError(std::string(op) + ": incompatible dimensions " + std::to_string(a) + " and " + std::to_string(b));
}

Matrix expand(const Matrix& m, Index rows, Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  return m.replicate(rows / m.rows(), cols / m.cols());
}

Matrix reduce_to(const Matrix& g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
  if (rows == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

struct Shapes {
  Index rows;
  Index cols;
  bool same;
};

Shapes shapes_of(const Matrix& a, const Matrix& b, const char* op) {
  const Index r = broadcast_dim(a.rows(), b.rows(), op);
  const Index c = broadcast_dim(a.cols(), b.cols(), op);
  return {r, c, a.rows() == b.rows() && a.cols() == b.cols()};
}

template <class Fn>
Var unary(const Var& a, Matrix value, Fn grad_fn) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push(std::move(value), t.requires_grad(ia), [ia, grad_fn](Tape& tp, int self) {
    tp.accumulate(ia, grad_fn(tp.grad(self), tp.value(ia), tp.value(self)));
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise binary

Var add(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const Shapes s = shapes_of(av, bv, "add");
  Matrix out = s.same ? Matrix(av + bv) : Matrix(expand(av, s.rows, s.cols) + expand(bv, s.rows, s.cols));
  const int ia = a.id(), ib = b.id();
  const Index ar = av.rows(), ac = av.cols(), br = bv.rows(), bc = bv.cols();
  return t.push(std::move(out), t.requires_grad(ia) || t.requires_grad(ib),
                [=](Tape& tp, int self) {
                  const Matrix& g = tp.grad(self);
                  if (tp.requires_grad(ia)) tp.accumulate(ia, reduce_to(g, ar, ac));
                  if (tp.requires_grad(ib)) tp.accumulate(ib, reduce_to(g, br, bc));
                });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const Shapes s = shapes_of(av, bv, "sub");
  Matrix out = s.same ? Matrix(av - bv) : Matrix(expand(av, s.rows, s.cols) - expand(bv, s.rows, s.cols));
  const int ia = a.id(), ib = b.id();
  const Index ar = av.rows(), ac = av.cols(), br = bv.rows(), bc = bv.cols();
  return t.push(std::move(out), t.requires_grad(ia) || t.requires_grad(ib),
                [=](Tape& tp, int self) {
                  const Matrix& g = tp.grad(self);
                  if (tp.requires_grad(ia)) tp.accumulate(ia, reduce_to(g, ar, ac));
                  if (tp.requires_grad(ib)) tp.accumulate(ib, Matrix(-reduce_to(g, br, bc)));
                });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const Shapes s = shapes_of(av, bv, "mul");
  Matrix out = s.same ? Matrix(av.cwiseProduct(bv))
                      : Matrix(expand(av, s.rows, s.cols).cwiseProduct(expand(bv, s.rows, s.cols)));
  const int ia = a.id(), ib = b.id();
  const Index ar = av.rows(), ac = av.cols(), br = bv.rows(), bc = bv.cols();
  const Index r = s.rows, c = s.cols;
  return t.push(std::move(out), t.requires_grad(ia) || t.requires_grad(ib),
                [=](Tape& tp, int self) {
                  const Matrix& g = tp.grad(self);
                  if (tp.requires_grad(ia)) {
                    tp.accumulate(ia, reduce_to(g.cwiseProduct(expand(tp.value(ib), r, c)), ar, ac));
                  }
                  if (tp.requires_grad(ib)) {
                    tp.accumulate(ib, reduce_to(g.cwiseProduct(expand(tp.value(ia), r, c)), br, bc));
                  }
                });
}

Var div(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const Shapes s = shapes_of(av, bv, "div");
  Matrix out = s.same ? Matrix(av.cwiseQuotient(bv))
                      : Matrix(expand(av, s.rows, s.cols).cwiseQuotient(expand(bv, s.rows, s.cols)));
  const int ia = a.id(), ib = b.id();
  const Index ar = av.rows(), ac = av.cols(), br = bv.rows(), bc = bv.cols();
  const Index r = s.rows, c = s.cols;
  return t.push(std::move(out), t.requires_grad(ia) || t.requires_grad(ib),
                [=](Tape& tp, int self) {
                  const Matrix& g = tp.grad(self);
                  const Matrix bx = expand(tp.value(ib), r, c);
                  const Matrix ga = g.cwiseQuotient(bx);
                  if (tp.requires_grad(ia)) tp.accumulate(ia, reduce_to(ga, ar, ac));
                  if (tp.requires_grad(ib)) {
                    tp.accumulate(ib, reduce_to(Matrix(-ga.cwiseProduct(tp.value(self))), br, bc));
                  }
                });
}

Var neg(const Var& a) {
  return unary(a, -a.value(), [](const Matrix& g, const Matrix&, const Matrix&) { return Matrix(-g); });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, (a.value().array() + s).matrix(), [](const Matrix& g, const Matrix&, const Matrix&) { return g; });
}

Var scale(const Var& a, double s) {
  return unary(a, a.value() * s, [s](const Matrix& g, const Matrix&, const Matrix&) { return Matrix(g * s); });
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " times " +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Matrix out = a.value() * b.value();
  const int ia = a.id(), ib = b.id();
  return t.push(std::move(out), t.requires_grad(ia) || t.requires_grad(ib), [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.accumulate(ia, Matrix(g * tp.value(ib).transpose()));
    if (tp.requires_grad(ib)) tp.accumulate(ib, Matrix(tp.value(ia).transpose() * g));
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: inner dimensions " + std::to_string(a.cols()) + " and " + std::to_string(b.cols()));
  }
  Matrix out = a.value() * b.value().transpose();
  const int ia = a.id(), ib = b.id();
  return t.push(std::move(out), t.requires_grad(ia) || t.requires_grad(ib), [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.accumulate(ia, Matrix(g * tp.value(ib)));
    if (tp.requires_grad(ib)) tp.accumulate(ib, Matrix(g.transpose() * tp.value(ia)));
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Tape& t = tape_of(parts.front());
  const Index rows = parts.front().rows();
  Index cols = 0;
  bool req = false;
  std::vector<int> ids;
  std::vector<Index> widths;
  for (const Var& p : parts) {
    tape_of(parts.front(), p);
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
    req = req || t.requires_grad(p.id());
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  Matrix out(rows, cols);
  Index offset = 0;
  for (const Var& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  return t.push(std::move(out), req, [ids, widths](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Index off = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (tp.requires_grad(ids[i])) tp.accumulate(ids[i], Matrix(g.middleCols(off, widths[i])));
      off += widths[i];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Tape& t = tape_of(parts.front());
  const Index cols = parts.front().cols();
  Index rows = 0;
  bool req = false;
  std::vector<int> ids;
  std::vector<Index> heights;
  for (const Var& p : parts) {
    tape_of(parts.front(), p);
    if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
    rows += p.rows();
    req = req || t.requires_grad(p.id());
    ids.push_back(p.id());
    heights.push_back(p.rows());
  }
  Matrix out(rows, cols);
  Index offset = 0;
  for (const Var& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
  }
  return t.push(std::move(out), req, [ids, heights](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Index off = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (tp.requires_grad(ids[i])) tp.accumulate(ids[i], Matrix(g.middleRows(off, heights[i])));
      off += heights[i];
    }
  });
}

Var slice_cols(const Var& a, Index start, Index count) {
  Tape& t = tape_of(a);
  if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeError("slice_cols: range out of bounds");
  const int ia = a.id();
  return t.push(a.value().middleCols(start, count), t.requires_grad(ia),
                [=](Tape& tp, int self) { tp.accumulate_cols(ia, start, tp.grad(self)); });
}

Var slice_rows(const Var& a, Index start, Index count) {
  Tape& t = tape_of(a);
  if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeError("slice_rows: range out of bounds");
  const int ia = a.id();
  return t.push(a.value().middleRows(start, count), t.requires_grad(ia),
                [=](Tape& tp, int self) { tp.accumulate_rows(ia, start, tp.grad(self)); });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(const Var& a) {
  const Index r = a.rows(), c = a.cols();
  return unary(a, Matrix::Constant(1, 1, a.value().sum()),
               [r, c](const Matrix& g, const Matrix&, const Matrix&) { return Matrix(Matrix::Constant(r, c, g(0, 0))); });
}

Var mean(const Var& a) {
  const Index r = a.rows(), c = a.cols();
  const double n = static_cast<double>(r * c);
  if (n == 0) throw ShapeError("mean: empty input");
  return unary(a, Matrix::Constant(1, 1, a.value().sum() / n), [r, c, n](const Matrix& g, const Matrix&, const Matrix&) {
    return Matrix(Matrix::Constant(r, c, g(0, 0) / n));
  });
}

Var col_sum(const Var& a) {
  const Index r = a.rows();
  return unary(a, a.value().colwise().sum(),
               [r](const Matrix& g, const Matrix&, const Matrix&) { return Matrix(g.replicate(r, 1)); });
}

Var row_sum(const Var& a) {
  const Index c = a.cols();
  return unary(a, a.value().rowwise().sum(),
               [c](const Matrix& g, const Matrix&, const Matrix&) { return Matrix(g.replicate(1, c)); });
}

Var group_sum(const Var& a, Index batch, Index members) {
  if (batch <= 0 || members <= 0 || a.rows() % (batch * members) != 0) {
    throw ShapeError("group_sum: rows " + std::to_string(a.rows()) + " not divisible by batch*members");
  }
  const Index groups = a.rows() / (batch * members);
  const Index cols = a.cols();
  Matrix out = Matrix::Zero(groups * batch, cols);
  const Matrix& av = a.value();
  for (Index k = 0; k < groups; ++k) {
    for (Index m = 0; m < members; ++m) {
      out.middleRows(k * batch, batch) += av.middleRows((k * members + m) * batch, batch);
    }
  }
  return unary(a, std::move(out), [=](const Matrix& g, const Matrix&, const Matrix&) {
    Matrix ga(groups * members * batch, cols);
    for (Index k = 0; k < groups; ++k) {
      for (Index m = 0; m < members; ++m) {
        ga.middleRows((k * members + m) * batch, batch) = g.middleRows(k * batch, batch);
      }
    }
    return ga;
  });
}

// ---------------------------------------------------------------------------
// Elementwise functions

Var relu(const Var& a) {
  return unary(a, a.value().cwiseMax(0.0), [](const Matrix& g, const Matrix& x, const Matrix&) {
    return Matrix((x.array() > 0.0).select(g.array(), 0.0));
  });
}

Var elu(const Var& a) {
  Matrix out = a.value().unaryExpr([](double x) { return x > 0.0 ? x : std::expm1(x); });
  return unary(a, std::move(out), [](const Matrix& g, const Matrix& x, const Matrix& y) {
    return Matrix((x.array() > 0.0).select(g.array(), g.array() * (y.array() + 1.0)));
  });
}

Var softplus(const Var& a) {
  Matrix out = a.value().unaryExpr([](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); });
  return unary(a, std::move(out), [](const Matrix& g, const Matrix& x, const Matrix&) {
    const Matrix sig = x.unaryExpr([](double v) {
      return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    });
    return Matrix(g.cwiseProduct(sig));
  });
}

Var exp(const Var& a) {
  return unary(a, a.value().array().exp().matrix(),
               [](const Matrix& g, const Matrix&, const Matrix& y) { return Matrix(g.cwiseProduct(y)); });
}

Var log(const Var& a) {
  return unary(a, a.value().array().log().matrix(),
               [](const Matrix& g, const Matrix& x, const Matrix&) { return Matrix(g.cwiseQuotient(x)); });
}

Var square(const Var& a) {
  return unary(a, a.value().array().square().matrix(),
               [](const Matrix& g, const Matrix& x, const Matrix&) { return Matrix(2.0 * g.cwiseProduct(x)); });
}

Var reciprocal(const Var& a) {
  return unary(a, a.value().cwiseInverse(), [](const Matrix& g, const Matrix&, const Matrix& y) {
    return Matrix(-g.cwiseProduct(y).cwiseProduct(y));
  });
}

Var clamp_min(const Var& a, double lower) {
  return unary(a, a.value().cwiseMax(lower), [lower](const Matrix& g, const Matrix& x, const Matrix&) {
    return Matrix((x.array() >= lower).select(g.array(), 0.0));
  });
}

Var where(const Matrix& mask, const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  const Shapes s = shapes_of(a.value(), b.value(), "where");
  broadcast_dim(mask.rows(), s.rows, "where mask");
  broadcast_dim(mask.cols(), s.cols, "where mask");
  const Matrix m = expand(mask, s.rows, s.cols);
  const Matrix av = expand(a.value(), s.rows, s.cols);
  const Matrix bv = expand(b.value(), s.rows, s.cols);
  Matrix out = (m.array() != 0.0).select(av, bv);
  const int ia = a.id(), ib = b.id();
  const Index ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  return t.push(std::move(out), t.requires_grad(ia) || t.requires_grad(ib), [=](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.accumulate(ia, reduce_to(Matrix((m.array() != 0.0).select(g.array(), 0.0)), ar, ac));
    if (tp.requires_grad(ib)) tp.accumulate(ib, reduce_to(Matrix((m.array() != 0.0).select(0.0, g.array())), br, bc));
  });
}

Var stop_gradient(const Var& a) { return tape_of(a).constant(a.value()); }

}  // namespace mts3::ad
