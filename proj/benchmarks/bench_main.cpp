#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "mts3/autodiff.hpp"
#include "mts3/datagen.hpp"
#include "mts3/gaussian.hpp"
#include "mts3/model.hpp"
#include "mts3/training.hpp"

namespace {

using mts3::DiagGaussian;
using mts3::FactoredBelief;
using mts3::Vec;

FactoredBelief random_belief(Eigen::Index d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.5, 2.0), m(-1.0, 1.0);
  FactoredBelief b;
  b.mean_u = Vec::NullaryExpr(d, [&] { return m(rng); });
  b.mean_l = Vec::NullaryExpr(d, [&] { return m(rng); });
  b.cov.su = Vec::NullaryExpr(d, [&] { return u(rng); });
  b.cov.sl = Vec::NullaryExpr(d, [&] { return u(rng); });
  b.cov.ss = 0.3 * (b.cov.su * b.cov.sl).sqrt();
  return b;
}

DiagGaussian random_obs(Eigen::Index d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.1, 1.0), m(-1.0, 1.0);
  return {Vec::NullaryExpr(d, [&] { return m(rng); }), Vec::NullaryExpr(d, [&] { return u(rng); })};
}

void BM_FactoredPredictUpdate(benchmark::State& state) {
  const Eigen::Index d = state.range(0);
  std::mt19937_64 rng(1);
  FactoredBelief b = random_belief(d, rng);
  const DiagGaussian w = random_obs(d, rng);
  mts3::BlockDiagMatrix2x2 a{Vec::Constant(d, 0.9), Vec::Constant(d, 0.1), Vec::Constant(d, -0.1),
                             Vec::Constant(d, 0.9)};
  const mts3::DiagPair drift{Vec::Zero(d), Vec::Zero(d)};
  const mts3::DiagPair noise{Vec::Constant(d, 0.01), Vec::Constant(d, 0.01)};
  for (auto _ : state) {
    b = mts3::factored_predict(mts3::factored_obs_update(b, w), a, drift, std::nullopt, noise);
    benchmark::DoNotOptimize(b.mean_u.data());
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_FactoredPredictUpdate)->RangeMultiplier(4)->Range(8, 512);

void BM_FactoredBatchUpdate(benchmark::State& state) {
  const Eigen::Index d = 32;
  std::mt19937_64 rng(2);
  const FactoredBelief prior = random_belief(d, rng);
  std::vector<DiagGaussian> obs;
  for (long i = 0; i < state.range(0); ++i) obs.push_back(random_obs(d, rng));
  for (auto _ : state) {
    FactoredBelief post = mts3::factored_batch_update(prior, obs);
    benchmark::DoNotOptimize(post.mean_u.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FactoredBatchUpdate)->Arg(1)->Arg(15)->Arg(150);

void BM_BayesAggregate(benchmark::State& state) {
  const Eigen::Index d = 64;
  std::mt19937_64 rng(3);
  const DiagGaussian prior = random_obs(d, rng);
  std::vector<DiagGaussian> obs;
  for (long i = 0; i < state.range(0); ++i) obs.push_back(random_obs(d, rng));
  for (auto _ : state) {
    DiagGaussian post = mts3::bayes_aggregate(prior, obs);
    benchmark::DoNotOptimize(post.mean.data());
  }
}
BENCHMARK(BM_BayesAggregate)->Arg(15)->Arg(150);

mts3::Mts3Config bench_config() {
  mts3::Mts3Config c;
  c.d_z = 8;
  c.d_l = 8;
  c.d_alpha = 16;
  c.window = 15;
  c.enc_width = c.set_width = c.dec_width = c.control_width = 64;
  return c;
}

// One training step's worth of work: forward, loss and backward on a springmass minibatch.
void BM_ForwardBackward(benchmark::State& state) {
  const mts3::Mts3Model model(bench_config());
  const mts3::TrajectoryBatch data = mts3::gen_springmass(state.range(0), 450, 0.02, 7);
  const mts3::TrajectoryBatch norm = mts3::normalize(data, mts3::compute_stats(data));
  std::vector<long> idx;
  for (long i = 0; i < state.range(0); ++i) idx.push_back(i);
  const mts3::SequenceBatch sb = mts3::make_sequence_batch(norm, idx, model.config().window);
  for (auto _ : state) {
    mts3::ad::Tape tape;
    const mts3::ad::Var loss = model.loss(model.forward(tape, sb), sb);
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.scalar());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBackward)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_PredictHorizon(benchmark::State& state) {
  const mts3::Mts3Model model(bench_config());
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  const mts3::Matrix ctx_obs = mts3::Matrix::NullaryExpr(150, 2, [&] { return n(rng); });
  const mts3::Matrix ctx_act = mts3::Matrix::NullaryExpr(150, 2, [&] { return n(rng); });
  const mts3::Matrix fut_act = mts3::Matrix::NullaryExpr(state.range(0), 2, [&] { return n(rng); });
  for (auto _ : state) {
    mts3::Prediction p = mts3::predict_horizon(model, ctx_obs, ctx_act, fut_act);
    benchmark::DoNotOptimize(p.mean.data());
  }
}
BENCHMARK(BM_PredictHorizon)->Arg(300)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
