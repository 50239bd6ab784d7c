#include "mts3/factored_linalg.hpp"

#include <string>

#include "mts3/errors.hpp"

namespace mts3 {

namespace {

void check_determinant(const Vec& a, const Vec& b, const Vec& side, const char* what) {
  const Vec det = a * b - side * side;
  for (Eigen::Index i = 0; i < det.size(); ++i) {
    if (!(det[i] > 0.0)) {
      throw DomainError(std::string(what) + ": block determinant " + std::to_string(det[i]) +
                        " <= 0 at index " + std::to_string(i));
    }
  }
}

}  // namespace

void check_same_dim(const FactoredCov& c) {
  if (c.su.size() != c.sl.size() || c.su.size() != c.ss.size()) {
    throw ShapeError("factored covariance: su/sl/ss lengths differ");
  }
}

void check_positive_definite(const FactoredCov& c, const char* what) {
  check_same_dim(c);
  for (Eigen::Index i = 0; i < c.su.size(); ++i) {
    if (!(c.su[i] > 0.0) || !(c.sl[i] > 0.0)) {
      throw DomainError(std::string(what) + ": non-positive diagonal at index " + std::to_string(i));
    }
  }
  check_determinant(c.su, c.sl, c.ss, what);
}

FactoredPrec factored_invert(const FactoredCov& c) {
  check_positive_definite(c, "factored_invert");
  return kernels::invert(c);
}

FactoredCov factored_invert_prec(const FactoredPrec& p) {
  if (p.lu.size() != p.ll.size() || p.lu.size() != p.ls.size()) {
    throw ShapeError("factored precision: lu/ll/ls lengths differ");
  }
  for (Eigen::Index i = 0; i < p.lu.size(); ++i) {
    if (!(p.lu[i] > 0.0) || !(p.ll[i] > 0.0)) {
      throw DomainError("factored_invert_prec: non-positive diagonal at index " + std::to_string(i));
    }
  }
  check_determinant(p.lu, p.ll, p.ls, "factored_invert_prec");
  return kernels::invert(p);
}

FactoredCov propagate_cov(const BlockDiagMatrix2x2& m, const FactoredCov& c) {
  check_same_dim(c);
  const Eigen::Index d = c.su.size();
  if (m.uu.size() != d || m.ul.size() != d || m.lu.size() != d || m.ll.size() != d) {
    throw ShapeError("propagate_cov: matrix blocks have length " + std::to_string(m.uu.size()) +
                     ", covariance has " + std::to_string(d));
  }
  return kernels::propagate(m, c);
}

Matrix densify(const FactoredCov& c) {
  check_same_dim(c);
  const Eigen::Index d = c.su.size();
  Matrix out = Matrix::Zero(2 * d, 2 * d);
  for (Eigen::Index i = 0; i < d; ++i) {
    out(i, i) = c.su[i];
    out(d + i, d + i) = c.sl[i];
    out(i, d + i) = c.ss[i];
    out(d + i, i) = c.ss[i];
  }
  return out;
}

Matrix densify(const FactoredPrec& p) { return densify(FactoredCov{p.lu, p.ll, p.ls}); }

Matrix densify(const BlockDiagMatrix2x2& m) {
  const Eigen::Index d = m.uu.size();
  Matrix out = Matrix::Zero(2 * d, 2 * d);
  for (Eigen::Index i = 0; i < d; ++i) {
    out(i, i) = m.uu[i];
    out(i, d + i) = m.ul[i];
    out(d + i, i) = m.lu[i];
    out(d + i, d + i) = m.ll[i];
  }
  return out;
}

BlockDiagMatrix2x2 sparsify_blocks(const Matrix& dense) {
  if (dense.rows() != dense.cols() || dense.rows() % 2 != 0) {
    throw ShapeError("sparsify: expected an even square matrix");
  }
  const Eigen::Index d = dense.rows() / 2;
  BlockDiagMatrix2x2 m{Vec(d), Vec(d), Vec(d), Vec(d)};
  for (Eigen::Index i = 0; i < d; ++i) {
    m.uu[i] = dense(i, i);
    m.ul[i] = dense(i, d + i);
    m.lu[i] = dense(d + i, i);
    m.ll[i] = dense(d + i, d + i);
  }
  return m;
}

FactoredCov sparsify_cov(const Matrix& dense) {
  const BlockDiagMatrix2x2 b = sparsify_blocks(dense);
  return {b.uu, b.ll, b.ul};
}

BlockDiagMatrix2x2 block_identity(Eigen::Index d) {
  return {Vec::Ones(d), Vec::Zero(d), Vec::Zero(d), Vec::Ones(d)};
}

FactoredCov cov_identity(Eigen::Index d, double scale) {
  return {Vec::Constant(d, scale), Vec::Constant(d, scale), Vec::Zero(d)};
}

}  // namespace mts3
