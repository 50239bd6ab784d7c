#include <gtest/gtest.h>

#include "dense_kalman.hpp"
#include "generators.hpp"

namespace {

using oracle::DenseGaussian;
using oracle::Mat;
using oracle::Vec;

DenseGaussian random_gaussian(gen::Rng& rng, Eigen::Index n) {
  const Mat l = rng.normal_mat(n, n);
  return {rng.normal_vec(n).matrix(), l * l.transpose() + Mat::Identity(n, n)};
}

TEST(DenseOracle, PredictIdentityIsNoOp) {
  gen::Rng rng(1);
  const DenseGaussian g = random_gaussian(rng, 4);
  const DenseGaussian out = oracle::dense_kalman_predict(g, Mat::Identity(4, 4), Vec::Zero(4), Mat::Zero(4, 4));
  EXPECT_LT(oracle::max_rel_error(out.cov, g.cov), 1e-15);
  EXPECT_LT(oracle::max_rel_error(out.mean, g.mean), 1e-15);
}

TEST(DenseOracle, PredictScalarClosedForm) {
  DenseGaussian g{Vec::Constant(1, 2.0), Mat::Constant(1, 1, 3.0)};
  const DenseGaussian out =
      oracle::dense_kalman_predict(g, Mat::Constant(1, 1, 0.5), Vec::Constant(1, 1.0), Mat::Constant(1, 1, 0.25));
  EXPECT_DOUBLE_EQ(out.mean(0), 2.0);
  EXPECT_DOUBLE_EQ(out.cov(0, 0), 1.0);
}

TEST(DenseOracle, PredictOutputIsSymmetric) {
  gen::Rng rng(2);
  const DenseGaussian g = random_gaussian(rng, 6);
  const DenseGaussian out = oracle::dense_kalman_predict(g, rng.normal_mat(6, 6), Vec::Zero(6), Mat::Zero(6, 6));
  EXPECT_LT((out.cov - out.cov.transpose()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(DenseOracle, UpdateWithHugeNoiseReturnsPrior) {
  gen::Rng rng(3);
  const DenseGaussian g = random_gaussian(rng, 4);
  const DenseGaussian out =
      oracle::dense_kalman_update(g, oracle::upper_selector(2), Vec::Ones(2), 1e14 * Mat::Identity(2, 2));
  EXPECT_LT(oracle::max_rel_error(out.cov, g.cov), 1e-10);
  EXPECT_LT(oracle::max_rel_error(out.mean, g.mean), 1e-10);
}

TEST(DenseOracle, UpdateFullObservationExact) {
  gen::Rng rng(4);
  const DenseGaussian g = random_gaussian(rng, 3);
  const Vec w = rng.normal_vec(3).matrix();
  const DenseGaussian out = oracle::dense_kalman_update(g, Mat::Identity(3, 3), w, Mat::Zero(3, 3));
  EXPECT_LT((out.mean - w).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(DenseOracle, UpdateMatchesSequentialScalarConditioning) {
  gen::Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const DenseGaussian g = random_gaussian(rng, 4);
    const Mat h = rng.normal_mat(4, 4);
    const Vec w = rng.normal_vec(4).matrix();
    const Vec r = rng.uniform_vec(4, 0.1, 2.0).matrix();
    const DenseGaussian joint = oracle::dense_kalman_update(g, h, w, r.asDiagonal());
    DenseGaussian seq = g;
    for (int i = 0; i < 4; ++i) seq = oracle::dense_kalman_update(seq, h.row(i), w.segment(i, 1), r.segment(i, 1));
    EXPECT_LT(oracle::max_rel_error(seq.cov, joint.cov), 1e-10);
    EXPECT_LT(oracle::max_rel_error(seq.mean, joint.mean), 1e-10);
  }
}

TEST(DenseOracle, BatchConditionEmptySetIsPrior) {
  gen::Rng rng(6);
  const DenseGaussian g = random_gaussian(rng, 4);
  const DenseGaussian out = oracle::dense_batch_condition(g, {}, {});
  EXPECT_EQ(out.mean, g.mean);
  EXPECT_EQ(out.cov, g.cov);
}

TEST(DenseOracle, BatchConditionEqualsSequentialDenseUpdates) {
  gen::Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const int d = rng.integer(1, 5);
    const DenseGaussian g = random_gaussian(rng, 2 * d);
    std::vector<Vec> m, v;
    DenseGaussian seq = g;
    for (int k = 0, n = rng.integer(1, 30); k < n; ++k) {
      m.push_back(rng.normal_vec(d).matrix());
      v.push_back(rng.uniform_vec(d, 0.1, 2.0).matrix());
      seq = oracle::dense_kalman_update(seq, oracle::upper_selector(d), m.back(), v.back().asDiagonal());
    }
    const DenseGaussian batch = oracle::dense_batch_condition(g, m, v);
    EXPECT_LT(oracle::max_rel_error(batch.cov, seq.cov), 1e-8);
    EXPECT_LT(oracle::max_rel_error(batch.mean, seq.mean), 1e-8);
  }
}

}  // namespace
