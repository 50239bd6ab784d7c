#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mts3/checkpoint.hpp"
#include "mts3/datagen.hpp"
#include "mts3/errors.hpp"
#include "mts3/training.hpp"

namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "mts3_training_test" / name;
  fs::remove_all(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

mts3::RunConfig small_config() {
  mts3::RunConfig c;
  c.seed = 21;
  c.model.d_z = c.model.d_l = 2;
  c.model.d_alpha = 3;
  c.model.window = 5;
  c.model.enc_width = c.model.set_width = c.model.dec_width = c.model.control_width = 8;
  c.train.epochs = 3;
  c.train.batch_size = 4;
  c.train.threads = 1;
  c.train.horizons = {1, 5, 20};
  return c;
}

const mts3::TrajectoryBatch& small_data() {
  static const mts3::TrajectoryBatch d = mts3::gen_springmass(12, 30, 0.02, 3);
  return d;
}

TEST(MakeSequenceBatch, TimeMajorLayoutAndMasks) {
  const mts3::TrajectoryBatch& d = small_data();
  std::vector<std::vector<std::uint8_t>> masks(2, std::vector<std::uint8_t>(30, 1));
  masks[1][7] = 0;
  const mts3::SequenceBatch sb = mts3::make_sequence_batch(d, {4, 9}, 7, &masks);
  EXPECT_EQ(sb.steps, 28);
  EXPECT_EQ(sb.obs.rows(), 56);
  EXPECT_EQ(sb.obs(sb.row(3, 1), 0), d.o(9, 3, 0));
  EXPECT_EQ(sb.act(sb.row(5, 0), 1), d.a(4, 5, 1));
  EXPECT_EQ(sb.observed(sb.row(7, 1), 0), 0.0);
  EXPECT_EQ(sb.observed(sb.row(7, 0), 0), 1.0);
  EXPECT_THROW(mts3::make_sequence_batch(d, {12}, 5), std::out_of_range);
  EXPECT_THROW(mts3::make_sequence_batch(d, {1}, 5, &masks), mts3::ShapeError);
}

TEST(Train, ZeroLearningRateLeavesParametersAtInitialization) {
  mts3::RunConfig c = small_config();
  c.train.lr = 0.0;
  const fs::path dir = fresh_dir("lr0");
  const mts3::TrainResult r = mts3::train(small_data(), c, dir.string());
  EXPECT_EQ(r.epochs_completed, 3);
  mts3::Mts3Config mc = c.model;
  mc.obs_dim = mc.act_dim = 2;
  mc.seed = c.seed;
  const mts3::Mts3Model init(mc);
  const mts3::Checkpoint last = mts3::load_checkpoint(r.last_checkpoint);
  for (int i = 0; i < init.params().size(); ++i) EXPECT_EQ(last.params[i].value, init.params()[i].value);
  EXPECT_EQ(last.adam_steps, 9);
}

TEST(Train, MetricsLogShapeAndProgress) {
  mts3::RunConfig c = small_config();
  c.train.epochs = 4;
  const fs::path dir = fresh_dir("log");
  const mts3::TrainResult r = mts3::train(small_data(), c, dir.string());
  std::ifstream in(r.metrics_log);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    EXPECT_NE(line.find(n % 2 == 1 ? "\"split\":\"train\"" : "\"split\":\"val\""), std::string::npos) << line;
    EXPECT_NE(line.find("\"wallclock\":null"), std::string::npos);
  }
  EXPECT_EQ(n, 8);
  EXPECT_GE(r.best_epoch, 1);
  const mts3::Checkpoint best = mts3::load_checkpoint(r.best_checkpoint);
  EXPECT_EQ(best.epoch, r.best_epoch);
  EXPECT_EQ(best.best_val, r.best_val_nll);
  // Normalization comes from the 11 training trajectories only.
  const mts3::NormStats s = mts3::compute_stats(small_data().slice(0, 11));
  EXPECT_EQ(best.norm.obs_mean, s.obs_mean);
}

TEST(Train, SingleThreadedRunsAreByteIdentical) {
  const mts3::RunConfig c = small_config();
  const fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
  mts3::train(small_data(), c, a.string());
  mts3::train(small_data(), c, b.string());
  for (const char* f : {"metrics.jsonl", "best.ckpt", "last.ckpt"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST(Train, ResumeContinuesExactly) {
  mts3::RunConfig c = small_config();
  c.train.epochs = 4;
  const fs::path straight = fresh_dir("straight"), split = fresh_dir("split");
  mts3::train(small_data(), c, straight.string());
  mts3::RunConfig first = c;
  first.train.epochs = 2;
  mts3::train(small_data(), first, split.string());
  mts3::TrainOptions opt;
  opt.resume = true;
  const mts3::TrainResult r = mts3::train(small_data(), c, split.string(), opt);
  EXPECT_EQ(r.epochs_completed, 4);
  EXPECT_EQ(slurp(straight / "metrics.jsonl"), slurp(split / "metrics.jsonl"));
  EXPECT_EQ(slurp(straight / "last.ckpt"), slurp(split / "last.ckpt"));
}

TEST(Train, ThreadedGradientsAgreeWithSingleThread) {
  mts3::RunConfig c = small_config();
  c.train.epochs = 1;
  const fs::path a = fresh_dir("thr1"), b = fresh_dir("thr3");
  mts3::train(small_data(), c, a.string());
  c.train.threads = 3;
  mts3::train(small_data(), c, b.string());
  const mts3::Checkpoint ca = mts3::load_checkpoint((a / "last.ckpt").string());
  const mts3::Checkpoint cb = mts3::load_checkpoint((b / "last.ckpt").string());
  for (int i = 0; i < ca.params.size(); ++i) {
    EXPECT_LT((ca.params[i].value - cb.params[i].value).cwiseAbs().maxCoeff(), 1e-9) << ca.params[i].name;
  }
}

TEST(Train, RejectsUnusableInput) {
  mts3::RunConfig c = small_config();
  c.model.window = 40;
  EXPECT_THROW(mts3::train(small_data(), c, fresh_dir("short").string()), mts3::DataError);
  c = small_config();
  EXPECT_THROW(mts3::train(small_data().slice(0, 0), c, fresh_dir("empty").string()), mts3::DataError);
}

TEST(Evaluate, MatchesIndependentRolloutAndTruncatesLongHorizons) {
  const mts3::TrajectoryBatch& d = small_data();
  mts3::Mts3Config mc = small_config().model;
  mc.obs_dim = mc.act_dim = 2;
  const mts3::Mts3Model model(mc);
  const mts3::NormStats norm = mts3::compute_stats(d);
  std::vector<std::string> warnings;
  const auto rows = mts3::evaluate(model, norm, d, 10, {1, 7, 40}, &warnings);
  ASSERT_EQ(rows.size(), 3u);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("40"), std::string::npos);

  // Rebuild the cumulative horizon-7 numbers from per-trajectory predictions.
  const mts3::TrajectoryBatch n = mts3::normalize(d, norm);
  double sq1 = 0.0, sq7 = 0.0;
  for (long b = 0; b < d.batch; ++b) {
    Eigen::MatrixXd co(10, 2), ca(10, 2), fa(20, 2);
    for (long t = 0; t < 30; ++t)
      for (int i = 0; i < 2; ++i) {
        if (t < 10) {
          co(t, i) = n.o(b, t, i);
          ca(t, i) = n.a(b, t, i);
        } else {
          fa(t - 10, i) = n.a(b, t, i);
        }
      }
    mts3::Prediction p = mts3::predict_horizon(model, co, ca, fa);
    mts3::denormalize_obs(p.mean, &p.var, norm);
    for (long h = 0; h < 7; ++h)
      for (int i = 0; i < 2; ++i) {
        const double e = p.mean(h, i) - d.o(b, 10 + h, i);
        sq7 += e * e;
        if (h == 0) sq1 += e * e;
      }
  }
  EXPECT_NEAR(rows[0].rmse, std::sqrt(sq1 / (12.0 * 2)), 1e-9);
  EXPECT_NEAR(rows[1].rmse, std::sqrt(sq7 / (12.0 * 7 * 2)), 1e-9);
  EXPECT_TRUE(std::isfinite(rows[2].rmse));
  EXPECT_EQ(rows[2].horizon, 40);
  EXPECT_THROW(mts3::evaluate(model, norm, d, 0, {1}), std::invalid_argument);
}

TEST(Evaluate, PerfectPredictorGivesZeroRmse) {
  // Zero data and a model whose decoder mean is exactly zero.
  mts3::TrajectoryBatch d(3, 20, 2, 2);
  mts3::Mts3Config mc = small_config().model;
  mc.obs_dim = mc.act_dim = 2;
  mts3::Mts3Model model(mc);
  for (auto& p : model.params())
    if (p.name.rfind("dec.mean.", 0) == 0) p.value.setZero();
  const auto rows = mts3::evaluate(model, mts3::compute_stats(d), d, 5, {1, 15});
  EXPECT_EQ(rows[0].rmse, 0.0);
  EXPECT_EQ(rows[1].rmse, 0.0);
}

TEST(Ablations, WritesOneDirectoryPerRunAndComparisonTable) {
  mts3::RunConfig c = small_config();
  c.train.epochs = 1;
  c.train.variants = {"full", "no_task"};
  c.train.h_sweep = {2};
  c.train.context_steps = 10;
  const fs::path dir = fresh_dir("abl");
  const auto rows = mts3::run_ablations(small_data(), small_data().slice(0, 3), c, dir.string());
  EXPECT_EQ(rows.size(), 9u);
  for (const char* sub : {"full", "no_task", "H2"}) EXPECT_TRUE(fs::exists(dir / sub / "eval.csv")) << sub;
  EXPECT_EQ(rows[6].variant, "H2");
  EXPECT_EQ(rows[6].window, 2);
  const std::string table = slurp(dir / "comparison.csv");
  EXPECT_EQ(table.rfind("variant,window,horizon,rmse,nll\n", 0), 0u);
}

}  // namespace
