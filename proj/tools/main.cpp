// mts3: data generation, training, evaluation and ablations from the command line.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mts3/checkpoint.hpp"
#include "mts3/config.hpp"
#include "mts3/dataset_io.hpp"
#include "mts3/datagen.hpp"
#include "mts3/errors.hpp"
#include "mts3/training.hpp"

namespace {

constexpr int kUsage = 2;
constexpr int kData = 3;
constexpr int kNumeric = 4;

std::uint64_t seed_override(std::uint64_t fallback) {
  const char* env = std::getenv("MTS3_SEED");
  if (env == nullptr || *env == '\0') return fallback;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(env, &used);
    if (used != std::string(env).size()) throw std::invalid_argument(env);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument(std::string("MTS3_SEED is not an unsigned integer: ") + env);
  }
}

std::vector<long> parse_csv_longs(const std::string& text) {
  std::vector<long> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const long v = std::stol(item, &used);
    if (used != item.size() || v < 1) throw std::invalid_argument("horizons must be positive integers: " + text);
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("empty horizon list");
  return out;
}

void print_summary(const mts3::TrajectoryBatch& b) {
  const mts3::NormStats s = mts3::compute_stats(b);
  std::cout << "generator " << b.meta.generator << "  B=" << b.batch << "  T=" << b.steps << "  d_o=" << b.obs_dim
            << "  d_a=" << b.act_dim << "  dt=" << b.meta.dt << "  seed=" << b.meta.seed << '\n';
  for (int i = 0; i < b.obs_dim; ++i) {
    std::cout << "  obs[" << i << "] mean " << s.obs_mean[static_cast<std::size_t>(i)] << "  std "
              << s.obs_std[static_cast<std::size_t>(i)] << '\n';
  }
  for (int i = 0; i < b.act_dim; ++i) {
    std::cout << "  act[" << i << "] mean " << s.act_mean[static_cast<std::size_t>(i)] << "  std "
              << s.act_std[static_cast<std::size_t>(i)] << '\n';
  }
}

mts3::RunConfig config_from(const std::string& path, int threads) {
  mts3::RunConfig cfg = path.empty() ? mts3::RunConfig{} : mts3::load_config(path);
  cfg.seed = seed_override(cfg.seed);
  cfg.model.seed = cfg.seed;
  if (threads >= 0) cfg.train.threads = threads;
  return cfg;
}

void print_rows(const std::string& variant, const std::vector<mts3::HorizonRow>& rows) {
  for (const mts3::HorizonRow& r : rows) {
    std::cout << variant << "  horizon " << r.horizon << "  rmse " << r.rmse << "  nll " << r.nll << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi time scale state space world models"};
  app.require_subcommand(1);

  std::string system = "springmass", data_out;
  long traj = 500, len = 450, period = 150;
  double dt = 0.02;
  std::uint64_t seed = 0;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset (MTS3DAT1)");
  gen->add_option("--system", system, "springmass | terrain")->check(CLI::IsMember({"springmass", "terrain"}));
  gen->add_option("--out", data_out, "Output file")->required();
  gen->add_option("--traj", traj, "Number of trajectories")->check(CLI::PositiveNumber);
  gen->add_option("--len", len, "Steps per trajectory")->check(CLI::PositiveNumber);
  gen->add_option("--dt", dt, "Seconds per step")->check(CLI::PositiveNumber);
  gen->add_option("--seed", seed, "Generator seed (MTS3_SEED overrides)");
  gen->add_option("--regime-period", period, "Steps between regime switches")->check(CLI::PositiveNumber);

  std::string data_path, config_path, out_dir, test_path;
  bool resume = false;
  int threads = -1;
  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--data", data_path, "Training dataset")->required();
  tr->add_option("--config", config_path, "JSON config (defaults when omitted)");
  tr->add_option("--out", out_dir, "Output directory")->required();
  tr->add_flag("--resume", resume, "Continue from out/last.ckpt");
  tr->add_option("--threads", threads, "Worker threads (0 = all cores, 1 = deterministic)");

  std::string ckpt_path, horizons_text, eval_out;
  long context = -1;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on long-horizon rollouts");
  ev->add_option("--data", data_path, "Test dataset")->required();
  ev->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  ev->add_option("--horizons", horizons_text, "Comma separated horizons (defaults from the checkpoint)");
  ev->add_option("--context", context, "Context steps (defaults from the checkpoint)");
  ev->add_option("--out", eval_out, "CSV output")->required();

  auto* ab = app.add_subcommand("ablate", "Train and evaluate the ablation variants and the H sweep");
  ab->add_option("--data", data_path, "Training dataset")->required();
  ab->add_option("--test", test_path, "Test dataset (default: last 20% of --data)");
  ab->add_option("--config", config_path, "JSON config");
  ab->add_option("--out", out_dir, "Output directory")->required();
  ab->add_option("--threads", threads, "Worker threads (0 = all cores, 1 = deterministic)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*gen) {
      const std::uint64_t s = seed_override(seed);
      mts3::TrajectoryBatch batch;
      if (system == "springmass") {
        mts3::SpringMassOptions o;
        o.regime_period = period;
        batch = mts3::gen_springmass(traj, len, dt, s, o);
      } else {
        mts3::TerrainOptions o;
        o.regime_period = period;
        batch = mts3::gen_sine_terrain(traj, len, dt, s, o);
      }
      batch.meta.normalization = mts3::compute_stats(batch);
      mts3::write_dataset(data_out, batch);
      print_summary(batch);
      std::cout << "wrote " << data_out << '\n';
    } else if (*tr) {
      const mts3::RunConfig cfg = config_from(config_path, threads);
      const mts3::TrajectoryBatch data = mts3::read_dataset(data_path);
      mts3::TrainOptions opt;
      opt.resume = resume;
      opt.log = &std::cout;
      const mts3::TrainResult res = mts3::train(data, cfg, out_dir, opt);
      std::cout << "epochs " << res.epochs_completed << "  best epoch " << res.best_epoch << "  best val nll "
                << res.best_val_nll << "\n" << "checkpoint " << res.best_checkpoint << "\nmetrics " << res.metrics_log
                << '\n';
    } else if (*ev) {
      const mts3::TrajectoryBatch data = mts3::read_dataset(data_path);
      const mts3::Checkpoint ck = mts3::load_checkpoint(ckpt_path);
      const std::vector<long> horizons =
          horizons_text.empty() ? ck.config.train.horizons : parse_csv_longs(horizons_text);
      std::vector<std::string> warnings;
      mts3::EvalOptions eo;
      eo.context_steps = context;
      eo.warnings = &warnings;
      const auto rows = mts3::evaluate_checkpoint(ckpt_path, data, horizons, eo);
      for (const std::string& w : warnings) std::cerr << "warning: " << w << '\n';
      const std::string variant = [&] {
        const mts3::Variants& v = ck.config.model.variants;
        if (v.no_task) return "no_task";
        if (v.no_action_abstraction) return "no_action_abstraction";
        if (v.identity_obs_model) return "identity_obs_model";
        if (v.no_imputation) return "no_imputation";
        return "full";
      }();
      mts3::write_horizon_csv(eval_out, variant, rows);
      print_rows(variant, rows);
    } else if (*ab) {
      const mts3::RunConfig cfg = config_from(config_path, threads);
      const mts3::TrajectoryBatch data = mts3::read_dataset(data_path);
      mts3::TrajectoryBatch train_data, test_data;
      if (test_path.empty()) {
        const long n_test = std::max(1L, data.batch / 5);
        if (data.batch - n_test < 1) throw mts3::DataError("ablate: need at least two trajectories");
        train_data = data.slice(0, data.batch - n_test);
        test_data = data.slice(data.batch - n_test, n_test);
      } else {
        train_data = data;
        test_data = mts3::read_dataset(test_path);
      }
      mts3::TrainOptions opt;
      opt.log = &std::cout;
      const auto rows = mts3::run_ablations(train_data, test_data, cfg, out_dir, opt);
      for (const auto& r : rows) {
        std::cout << r.variant << "  H=" << r.window << "  horizon " << r.horizon << "  rmse " << r.rmse << "  nll "
                  << r.nll << '\n';
      }
      std::cout << "wrote " << (std::filesystem::path(out_dir) / "comparison.csv").string() << '\n';
    }
  } catch (const mts3::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const mts3::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n' << app.help();
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
