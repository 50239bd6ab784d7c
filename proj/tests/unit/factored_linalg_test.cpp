#include <gtest/gtest.h>

#include "bridge.hpp"
#include "generators.hpp"
#include "mts3/errors.hpp"
#include "mts3/factored_linalg.hpp"

namespace {

using mts3::FactoredCov;
using mts3::FactoredPrec;
using mts3::Vec;

Vec v1(double x) { return Vec::Constant(1, x); }

TEST(FactoredInvert, IdentityCase) {
  const FactoredPrec p = mts3::factored_invert({v1(1), v1(1), v1(0)});
  EXPECT_DOUBLE_EQ(p.lu(0), 1.0);
  EXPECT_DOUBLE_EQ(p.ll(0), 1.0);
  EXPECT_DOUBLE_EQ(p.ls(0), 0.0);
}

TEST(FactoredInvert, DiagonalCase) {
  const FactoredPrec p = mts3::factored_invert({v1(2), v1(2), v1(0)});
  EXPECT_DOUBLE_EQ(p.lu(0), 0.5);
  EXPECT_DOUBLE_EQ(p.ll(0), 0.5);
  EXPECT_DOUBLE_EQ(p.ls(0), 0.0);
}

TEST(FactoredInvert, CorrelatedCaseMatchesDenseInverse) {
  const FactoredPrec p = mts3::factored_invert({v1(2), v1(3), v1(1)});
  Eigen::Matrix2d m;
  m << 2, 1, 1, 3;
  const Eigen::Matrix2d inv = m.inverse();
  EXPECT_NEAR(p.lu(0), inv(0, 0), 1e-15);
  EXPECT_NEAR(p.ll(0), inv(1, 1), 1e-15);
  EXPECT_NEAR(p.ls(0), inv(0, 1), 1e-15);
  EXPECT_NEAR(p.lu(0), 0.6, 1e-15);
  EXPECT_NEAR(p.ll(0), 0.4, 1e-15);
  EXPECT_NEAR(p.ls(0), -0.2, 1e-15);
}

TEST(FactoredInvertPrec, Examples) {
  const FactoredCov c = mts3::factored_invert_prec({v1(1), v1(1), v1(0)});
  EXPECT_DOUBLE_EQ(c.su(0), 1.0);
  EXPECT_DOUBLE_EQ(c.sl(0), 1.0);
  EXPECT_DOUBLE_EQ(c.ss(0), 0.0);
  const FactoredCov d = mts3::factored_invert_prec({v1(0.6), v1(0.4), v1(-0.2)});
  EXPECT_NEAR(d.su(0), 2.0, 1e-14);
  EXPECT_NEAR(d.sl(0), 3.0, 1e-14);
  EXPECT_NEAR(d.ss(0), 1.0, 1e-14);
}

TEST(FactoredInvert, RejectsSingularAndIndefinite) {
  EXPECT_THROW(mts3::factored_invert({v1(1), v1(1), v1(1)}), mts3::DomainError);
  EXPECT_THROW(mts3::factored_invert({v1(1), v1(1), v1(2)}), mts3::DomainError);
  EXPECT_THROW(mts3::factored_invert({v1(-1), v1(-1), v1(0)}), mts3::DomainError);
  EXPECT_THROW(mts3::factored_invert_prec({v1(1), v1(1), v1(1)}), mts3::DomainError);
}

TEST(FactoredInvert, RejectsRaggedInput) {
  FactoredCov c{Vec::Ones(2), Vec::Ones(3), Vec::Zero(2)};
  EXPECT_THROW(mts3::factored_invert(c), mts3::ShapeError);
}

TEST(FactoredInvert, PropertyMatchesDenseAndIsInvolution) {
  gen::Rng rng(11);
  for (int d : {1, 2, 4, 8}) {
    for (int trial = 0; trial < 100; ++trial) {
      const FactoredCov c = gen::factored_cov(rng, d);
      const FactoredPrec p = mts3::factored_invert(c);
      const oracle::Mat dense_inv = mts3::densify(c).inverse();
      EXPECT_LT(oracle::max_rel_error(mts3::densify(p), dense_inv), 1e-10);
      const FactoredCov back = mts3::factored_invert_prec(p);
      EXPECT_LT(oracle::max_rel_error(mts3::densify(back), mts3::densify(c)), 1e-12);
    }
  }
}

TEST(PropagateCov, IdentityLeavesCovarianceUnchanged) {
  gen::Rng rng(3);
  const FactoredCov c = gen::factored_cov(rng, 5);
  const FactoredCov out = mts3::propagate_cov(mts3::block_identity(5), c);
  EXPECT_TRUE((out.su == c.su).all());
  EXPECT_TRUE((out.sl == c.sl).all());
  EXPECT_TRUE((out.ss == c.ss).all());
}

TEST(PropagateCov, ScaledUpperBlock) {
  mts3::BlockDiagMatrix2x2 m{v1(2), v1(0), v1(0), v1(1)};
  const FactoredCov out = mts3::propagate_cov(m, {v1(1), v1(1), v1(0)});
  EXPECT_DOUBLE_EQ(out.su(0), 4.0);
  EXPECT_DOUBLE_EQ(out.sl(0), 1.0);
  EXPECT_DOUBLE_EQ(out.ss(0), 0.0);
}

TEST(PropagateCov, PropertyMatchesDenseProductExactlyInPattern) {
  gen::Rng rng(5);
  for (int d : {1, 2, 4, 8}) {
    for (int trial = 0; trial < 50; ++trial) {
      const FactoredCov c = gen::factored_cov(rng, d);
      const mts3::BlockDiagMatrix2x2 m = gen::block_matrix(rng, d, 1.0);
      const oracle::Mat md = mts3::densify(m);
      const oracle::Mat want = md * mts3::densify(c) * md.transpose();
      const oracle::Mat got = mts3::densify(mts3::propagate_cov(m, c));
      EXPECT_LT(oracle::max_rel_error(got, want), 1e-12);
      // Entries off the block-of-diagonals pattern vanish in the dense product.
      EXPECT_LT((want - mts3::densify(mts3::sparsify_cov(want))).cwiseAbs().maxCoeff(), 1e-15);
    }
  }
}

TEST(PropagateCov, PreservesPositiveDefinitenessWithNoise) {
  gen::Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const FactoredCov c = gen::factored_cov(rng, 4);
    FactoredCov out = mts3::propagate_cov(gen::block_matrix(rng, 4, 2.0), c);
    out.su += 1e-3;
    out.sl += 1e-3;
    EXPECT_NO_THROW(mts3::check_positive_definite(out));
  }
}

TEST(PropagateCov, RejectsDimensionMismatch) {
  EXPECT_THROW(mts3::propagate_cov(mts3::block_identity(3), mts3::cov_identity(2)), mts3::ShapeError);
}

TEST(Densify, SmallExamples) {
  oracle::Mat eye = mts3::densify(FactoredCov{v1(1), v1(1), v1(0)});
  EXPECT_TRUE(eye.isApprox(oracle::Mat::Identity(2, 2)));
  oracle::Mat m = mts3::densify(FactoredCov{v1(1), v1(1), v1(0.5)});
  EXPECT_DOUBLE_EQ(m(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(m(1, 0), 0.5);
  EXPECT_DOUBLE_EQ(m(0, 0), 1.0);
}

TEST(Densify, SparsifyRoundTrip) {
  gen::Rng rng(1);
  const FactoredCov c = gen::factored_cov(rng, 2);
  const FactoredCov back = mts3::sparsify_cov(mts3::densify(c));
  EXPECT_TRUE((back.su == c.su).all() && (back.sl == c.sl).all() && (back.ss == c.ss).all());
  const mts3::BlockDiagMatrix2x2 m = gen::block_matrix(rng, 2);
  const mts3::BlockDiagMatrix2x2 mb = mts3::sparsify_blocks(mts3::densify(m));
  EXPECT_TRUE((mb.uu == m.uu).all() && (mb.ul == m.ul).all() && (mb.lu == m.lu).all() && (mb.ll == m.ll).all());
}

}  // namespace
