#include <gtest/gtest.h>

#include "bridge.hpp"
#include "fd_check.hpp"
#include "generators.hpp"
#include "mts3/errors.hpp"
#include "mts3/fts.hpp"

namespace {

namespace ad = mts3::ad;
using mts3::DiagPair;
using mts3::FtsParams;
using mts3::StateBelief;
using mts3::Vec;

FtsParams random_fts(gen::Rng& rng, int d) {
  return {gen::block_matrix(rng, d, 0.3), gen::block_matrix(rng, d, 0.5), gen::noise_pair(rng, d)};
}

oracle::DenseGaussian dense_fts_predict(const StateBelief& post, const DiagPair& control,
                                        const mts3::FactoredBelief* task, const FtsParams& p) {
  oracle::Vec drift = oracle::stack(control);
  oracle::Mat extra = oracle::diag2(p.q);
  if (task != nullptr) {
    const oracle::Mat c = mts3::densify(p.c);
    const oracle::DenseGaussian t = oracle::dense(*task);
    drift += c * t.mean;
    extra += c * t.cov * c.transpose();
  }
  return oracle::dense_kalman_predict(oracle::dense(post), mts3::densify(p.a), drift, extra);
}

TEST(FtsPredict, ZeroCouplingReducesToTaskFreePredict) {
  gen::Rng rng(1);
  const int d = 4;
  FtsParams p = random_fts(rng, d);
  p.c = {Vec::Zero(d), Vec::Zero(d), Vec::Zero(d), Vec::Zero(d)};
  const StateBelief post = gen::belief(rng, d);
  const mts3::FactoredBelief task = gen::belief(rng, d);
  const DiagPair control{rng.normal_vec(d), rng.normal_vec(d)};
  const StateBelief with = mts3::fts_predict(post, control, &task, p);
  const StateBelief without = mts3::fts_predict(post, control, nullptr, p);
  EXPECT_TRUE((with.mean_u == without.mean_u).all() && (with.mean_l == without.mean_l).all());
  EXPECT_TRUE((with.cov.su == without.cov.su).all() && (with.cov.sl == without.cov.sl).all() &&
              (with.cov.ss == without.cov.ss).all());
}

TEST(FtsPredict, IdentityCouplingAddsTaskCovariance) {
  gen::Rng rng(2);
  const int d = 3;
  FtsParams p{mts3::block_identity(d), mts3::block_identity(d), {Vec::Zero(d), Vec::Zero(d)}};
  const StateBelief post = gen::belief(rng, d);
  const mts3::FactoredBelief task = gen::belief(rng, d);
  const StateBelief out = mts3::fts_predict(post, {Vec::Zero(d), Vec::Zero(d)}, &task, p);
  EXPECT_LT(((out.cov.su - post.cov.su) - task.cov.su).abs().maxCoeff(), 1e-14);
  EXPECT_LT(((out.cov.sl - post.cov.sl) - task.cov.sl).abs().maxCoeff(), 1e-14);
  EXPECT_LT(((out.cov.ss - post.cov.ss) - task.cov.ss).abs().maxCoeff(), 1e-14);
}

TEST(FtsPredict, PropertyMatchesDenseOracle) {
  gen::Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int d = rng.integer(1, 8);
    const FtsParams p = random_fts(rng, d);
    const StateBelief post = gen::belief(rng, d);
    const mts3::FactoredBelief task = gen::belief(rng, d);
    const DiagPair control{rng.normal_vec(d), rng.normal_vec(d)};
    EXPECT_LT(oracle::belief_error(mts3::fts_predict(post, control, &task, p),
                                   dense_fts_predict(post, control, &task, p)),
              1e-10);
  }
}

TEST(FtsPredict, LargerTaskCovarianceNeverShrinksUpperVariance) {
  gen::Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 4;
    const FtsParams p = random_fts(rng, d);
    const StateBelief post = gen::belief(rng, d);
    mts3::FactoredBelief task = gen::belief(rng, d);
    const StateBelief a = mts3::fts_predict(post, {Vec::Zero(d), Vec::Zero(d)}, &task, p);
    task.cov.su *= 2.0;
    task.cov.sl *= 2.0;
    task.cov.ss *= 2.0;
    const StateBelief b = mts3::fts_predict(post, {Vec::Zero(d), Vec::Zero(d)}, &task, p);
    EXPECT_TRUE((b.cov.su >= a.cov.su).all());
  }
}

TEST(FtsPredict, RejectsTaskDimensionMismatch) {
  gen::Rng rng(5);
  const FtsParams p = random_fts(rng, 3);
  const StateBelief post = gen::belief(rng, 3);
  const mts3::FactoredBelief task = gen::belief(rng, 2);
  EXPECT_THROW(mts3::fts_predict(post, {Vec::Zero(3), Vec::Zero(3)}, &task, p), mts3::ShapeError);
}

TEST(FtsUpdate, MaskedStepIsIdentity) {
  gen::Rng rng(6);
  const StateBelief prior = gen::belief(rng, 3);
  const StateBelief out = mts3::fts_update(prior, std::nullopt);
  EXPECT_TRUE((out.mean_u == prior.mean_u).all() && (out.cov.sl == prior.cov.sl).all());
}

TEST(FtsUpdate, ExactObservationSnaps) {
  gen::Rng rng(7);
  const StateBelief prior = gen::belief(rng, 3);
  const Vec w = rng.normal_vec(3);
  const StateBelief out = mts3::fts_update(prior, mts3::DiagGaussian{w, Vec::Constant(3, 1e-12)});
  EXPECT_LT((out.mean_u - w).abs().maxCoeff(), 1e-9);
}

TEST(FtsUpdate, MatchesDenseKalman) {
  gen::Rng rng(8);
  const StateBelief prior = gen::belief(rng, 5);
  const mts3::DiagGaussian w = gen::diag_gaussian(rng, 5);
  const auto want = oracle::dense_kalman_update(oracle::dense(prior), oracle::upper_selector(5), w.mean.matrix(),
                                                w.var.matrix().asDiagonal());
  EXPECT_LT(oracle::belief_error(mts3::fts_update(prior, w), want), 1e-10);
}

TEST(WindowRollforward, MatchesDenseFilterStepForStep) {
  gen::Rng rng(9);
  const int d = 4, steps = 50;
  const FtsParams p = random_fts(rng, d);
  const mts3::FactoredBelief task = gen::belief(rng, d);
  std::vector<std::optional<mts3::DiagGaussian>> obs;
  std::vector<DiagPair> controls;
  for (int t = 0; t < steps; ++t) {
    if (t % 4 == 3) {
      obs.emplace_back(std::nullopt);
    } else {
      obs.emplace_back(gen::diag_gaussian(rng, d));
    }
    controls.push_back({rng.normal_vec(d, 0.3), rng.normal_vec(d, 0.3)});
  }
  const StateBelief init = gen::belief(rng, d);
  const mts3::WindowRoll roll = mts3::window_rollforward(init, &task, obs, controls, p);
  ASSERT_EQ(roll.priors.size(), static_cast<std::size_t>(steps));

  oracle::DenseGaussian g = oracle::dense(init);
  for (int t = 0; t < steps; ++t) {
    EXPECT_LT(oracle::belief_error(roll.priors[t], g), 1e-8) << "step " << t;
    if (obs[t]) {
      g = oracle::dense_kalman_update(g, oracle::upper_selector(d), obs[t]->mean.matrix(),
                                      obs[t]->var.matrix().asDiagonal());
    }
    EXPECT_LT(oracle::belief_error(roll.posteriors[t], g), 1e-8) << "step " << t;
    g = dense_fts_predict(oracle::factored(g), controls[t], &task, p);
  }
  EXPECT_LT(oracle::belief_error(roll.carry, g), 1e-8);
}

TEST(WindowRollforward, FullyMaskedIsOpenLoopAndCarryIsOnePredict) {
  gen::Rng rng(10);
  const int d = 2;
  const FtsParams p = random_fts(rng, d);
  const mts3::FactoredBelief task = gen::belief(rng, d);
  std::vector<std::optional<mts3::DiagGaussian>> obs(5);
  std::vector<DiagPair> controls(5, DiagPair{Vec::Constant(d, 0.1), Vec::Zero(d)});
  const mts3::WindowRoll roll = mts3::window_rollforward(gen::belief(rng, d), &task, obs, controls, p);
  for (std::size_t t = 0; t < obs.size(); ++t) {
    EXPECT_TRUE((roll.priors[t].mean_u == roll.posteriors[t].mean_u).all());
    EXPECT_TRUE((roll.priors[t].cov.su == roll.posteriors[t].cov.su).all());
  }
  const StateBelief carry = mts3::fts_predict(roll.posteriors.back(), controls.back(), &task, p);
  EXPECT_TRUE((carry.mean_u == roll.carry.mean_u).all() && (carry.cov.ss == roll.carry.cov.ss).all());
  // Open loop: the observed-block variance grows along the window.
  for (std::size_t t = 1; t < obs.size(); ++t) EXPECT_TRUE((roll.priors[t].cov.su > roll.priors[t - 1].cov.su).all());
}

TEST(WindowRollforward, TracksSmoothLinearSystem) {
  // Latent observation of a slowly rotating 1-d oscillator; A holds the true dynamics.
  const int d = 1;
  const double w = 0.05;
  FtsParams p{{Vec::Constant(1, 1.0), Vec::Constant(1, w), Vec::Constant(1, -w), Vec::Constant(1, 1.0)},
              {Vec::Zero(1), Vec::Zero(1), Vec::Zero(1), Vec::Zero(1)},
              {Vec::Constant(1, 1e-6), Vec::Constant(1, 1e-6)}};
  std::vector<std::optional<mts3::DiagGaussian>> obs;
  std::vector<DiagPair> controls;
  double x = 1.0, v = 0.0;
  std::vector<double> truth;
  for (int t = 0; t < 60; ++t) {
    truth.push_back(x);
    obs.emplace_back(mts3::DiagGaussian{Vec::Constant(1, x), Vec::Constant(1, 1e-4)});
    controls.push_back({Vec::Zero(1), Vec::Zero(1)});
    const double nx = x + w * v, nv = -w * x + v;
    x = nx;
    v = nv;
  }
  const mts3::WindowRoll roll =
      mts3::window_rollforward({Vec::Zero(d), Vec::Zero(d), mts3::cov_identity(d, 10.0)}, nullptr, obs, controls, p);
  for (int t = 20; t < 60; ++t) EXPECT_NEAR(roll.priors[t].mean_u(0), truth[t], 1e-2) << t;
}

class FtsNetworkTest : public ::testing::Test {
 protected:
  void SetUp() override {
    std::mt19937_64 rng(8);
    nets = mts3::FtsNetworks(store, 3, 2, 4, 16, mts3::nn::Activation::kRelu, rng);
  }
  ad::ParameterStore store;
  mts3::FtsNetworks nets;
};

TEST_F(FtsNetworkTest, ZeroWeightsGiveConstantEncodingAndNoDrift) {
  for (auto& p : store)
    if (p.name.find(".w") != std::string::npos) p.value.setZero();
  store[store.index("fts.obs_enc.b1")].value.setConstant(-50.0);
  const auto a = nets.encode_obs(store, Vec::Constant(3, 1.0));
  const auto b = nets.encode_obs(store, Vec::Constant(3, -4.0));
  EXPECT_TRUE((a.mean == b.mean).all() && (a.var == b.var).all());
  EXPECT_TRUE((a.var > 1e-8).all());  // floored even when the head saturates
  const DiagPair drift = nets.control(store, Vec::Constant(2, 3.0));
  EXPECT_TRUE((drift.u == 0.0).all() && (drift.l == 0.0).all());
}

TEST_F(FtsNetworkTest, SingleLinearLayerIsMatrixProduct) {
  ad::ParameterStore s;
  std::mt19937_64 rng(1);
  mts3::nn::Mlp enc = mts3::nn::Mlp::create(s, "e", {3, 8}, rng);
  mts3::nn::Mlp ctl = mts3::nn::Mlp::create(s, "c", {2, 8}, rng);
  s[s.index("c.b0")].value.setZero();
  mts3::FtsNetworks linear(enc, ctl, 4);
  const Vec a = Vec::LinSpaced(2, -1.0, 2.0);
  const DiagPair drift = linear.control(s, a);
  const Eigen::VectorXd ba = s[s.index("c.w0")].value.transpose() * a.matrix();
  EXPECT_LT((drift.u.matrix() - ba.head(4)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((drift.l.matrix() - ba.tail(4)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST_F(FtsNetworkTest, ControlGradientWrtActionMatchesFiniteDifferences) {
  store.add("probe.a", gen::Rng(3).normal_mat(5, 2));
  auto f = [&](ad::Tape& tape, const ad::ParameterStore& s) {
    const mts3::DiagPairT<ad::Var> drift = nets.control(s, tape.param(s, "probe.a"));
    return ad::sum(ad::square(drift.u) + drift.l * 0.7);
  };
  EXPECT_LT(fd::max_rel_error(store, f), 1e-6);
}

TEST_F(FtsNetworkTest, DeterministicForFixedInput) {
  const auto a = nets.encode_obs(store, Vec::Constant(3, 0.2));
  const auto b = nets.encode_obs(store, Vec::Constant(3, 0.2));
  EXPECT_TRUE((a.mean == b.mean).all() && (a.var == b.var).all());
}

}  // namespace
