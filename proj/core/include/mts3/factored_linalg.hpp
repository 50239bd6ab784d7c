#pragma once

// Covariance algebra for 2d x 2d matrices made of a 2x2 grid of diagonal blocks.
//
//   [ diag(su)  diag(ss) ]
//   [ diag(ss)  diag(sl) ]
//
// Every kernel is a template over the vector type V so that the same arithmetic runs on
// plain Eigen arrays (inference, tests) and on autodiff variables (training). V only needs
// elementwise +, -, *, / and unary minus.

#include <Eigen/Dense>

namespace mts3 {

using Vec = Eigen::ArrayXd;
using Matrix = Eigen::MatrixXd;

template <class V>
struct FactoredCovT {
  V su;  // upper block diagonal
  V sl;  // lower block diagonal
  V ss;  // side (off-diagonal) block diagonal
};

template <class V>
struct FactoredPrecT {
  V lu;
  V ll;
  V ls;
};

/// Linear map whose four d x d blocks are diagonal. Maps [x_u; x_l] to
/// [uu*x_u + ul*x_l; lu*x_u + ll*x_l].
template <class V>
struct BlockDiagT {
  V uu;
  V ul;
  V lu;
  V ll;
};

/// Pair of diagonals for the upper and lower halves (transition noise, drift, ...).
template <class V>
struct DiagPairT {
  V u;
  V l;
};

using FactoredCov = FactoredCovT<Vec>;
using FactoredPrec = FactoredPrecT<Vec>;
using BlockDiagMatrix2x2 = BlockDiagT<Vec>;
using DiagPair = DiagPairT<Vec>;

namespace kernels {

template <class V>
FactoredPrecT<V> invert(const FactoredCovT<V>& c) {
  const V det = c.su * c.sl - c.ss * c.ss;
  return {c.sl / det, c.su / det, -c.ss / det};
}

template <class V>
FactoredCovT<V> invert(const FactoredPrecT<V>& p) {
  const V det = p.lu * p.ll - p.ls * p.ls;
  return {p.ll / det, p.lu / det, -p.ls / det};
}

/// M * Sigma * M^T; exact because every block of M and Sigma is diagonal.
template <class V>
FactoredCovT<V> propagate(const BlockDiagT<V>& m, const FactoredCovT<V>& c) {
  const V su = m.uu * m.uu * c.su + 2.0 * (m.uu * m.ul) * c.ss + m.ul * m.ul * c.sl;
  const V sl = m.lu * m.lu * c.su + 2.0 * (m.lu * m.ll) * c.ss + m.ll * m.ll * c.sl;
  const V ss = m.uu * m.lu * c.su + (m.uu * m.ll + m.ul * m.lu) * c.ss + m.ul * m.ll * c.sl;
  return {su, sl, ss};
}

template <class V>
DiagPairT<V> apply(const BlockDiagT<V>& m, const V& x_u, const V& x_l) {
  return {m.uu * x_u + m.ul * x_l, m.lu * x_u + m.ll * x_l};
}

template <class V>
FactoredCovT<V> add(const FactoredCovT<V>& a, const FactoredCovT<V>& b) {
  return {a.su + b.su, a.sl + b.sl, a.ss + b.ss};
}

}  // namespace kernels

// Checked double-precision API. Domain errors are reported, never clamped.

FactoredPrec factored_invert(const FactoredCov& c);
FactoredCov factored_invert_prec(const FactoredPrec& p);
FactoredCov propagate_cov(const BlockDiagMatrix2x2& m, const FactoredCov& c);

Matrix densify(const FactoredCov& c);
Matrix densify(const FactoredPrec& p);
Matrix densify(const BlockDiagMatrix2x2& m);

/// Reads the four block diagonals out of a dense 2d x 2d matrix (off-pattern entries dropped).
BlockDiagMatrix2x2 sparsify_blocks(const Matrix& dense);
/// Symmetric variant; takes ss from the upper-right block.
FactoredCov sparsify_cov(const Matrix& dense);

/// Throws DomainError unless su > 0, sl > 0 and su*sl - ss^2 > 0 everywhere.
void check_positive_definite(const FactoredCov& c, const char* what = "covariance");
void check_same_dim(const FactoredCov& c);

BlockDiagMatrix2x2 block_identity(Eigen::Index d);
FactoredCov cov_identity(Eigen::Index d, double scale = 1.0);

}  // namespace mts3
