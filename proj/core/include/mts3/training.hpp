#pragma once

// Training loop, horizon evaluation and the ablation matrix.

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mts3/checkpoint.hpp"
#include "mts3/config.hpp"
#include "mts3/datagen.hpp"
#include "mts3/model.hpp"

namespace mts3 {

/// Time-major batch of the trajectories `indices` (steps truncated to whole windows of `window`).
/// `masks`, when given, holds one filter mask per trajectory; it is combined with the valid flags.
SequenceBatch make_sequence_batch(const TrajectoryBatch& data, const std::vector<long>& indices, int window,
                                  const std::vector<std::vector<std::uint8_t>>* masks = nullptr);

struct TrainOptions {
  bool resume = false;
  std::ostream* log = nullptr;  // human-readable progress, optional
};

struct TrainResult {
  int epochs_completed = 0;
  int best_epoch = -1;
  double best_val_nll = 0.0;
  std::string best_checkpoint;
  std::string last_checkpoint;
  std::string metrics_log;
};

/// Trains on `data` (raw units). The last val_fraction of trajectories form the validation split;
/// normalization stats come from the training split. Writes best.ckpt, last.ckpt and
/// metrics.jsonl into `out_dir`.
TrainResult train(const TrajectoryBatch& data, const RunConfig& cfg, const std::string& out_dir,
                  const TrainOptions& opt = {});

struct HorizonRow {
  long horizon = 0;
  double rmse = 0.0;  // original units, over predicted steps 1..horizon and all dimensions
  double nll = 0.0;   // normalized units, mean per step over predicted steps 1..horizon
};

struct EvalOptions {
  long context_steps = -1;  // < 0: use the checkpoint config
  std::vector<std::string>* warnings = nullptr;
};

/// Filters each trajectory on its first context steps and rolls out over the rest with every
/// future observation masked. Horizons longer than the available future are truncated.
std::vector<HorizonRow> evaluate(const Mts3Model& model, const NormStats& norm, const TrajectoryBatch& data,
                                 long context_steps, const std::vector<long>& horizons,
                                 std::vector<std::string>* warnings = nullptr);

Mts3Model model_from_checkpoint(const Checkpoint& ckpt);

std::vector<HorizonRow> evaluate_checkpoint(const std::string& ckpt_path, const TrajectoryBatch& data,
                                            const std::vector<long>& horizons, const EvalOptions& opt = {});

struct AblationRow {
  std::string variant;  // "full", ..., or "H=<n>"
  int window = 0;
  long horizon = 0;
  double rmse = 0.0;
  double nll = 0.0;
};

/// Trains and evaluates every configured variant and every H of the sweep on (train, test).
/// Each run lives in out_dir/<variant> or out_dir/H<n>.
std::vector<AblationRow> run_ablations(const TrajectoryBatch& train_data, const TrajectoryBatch& test_data,
                                       const RunConfig& cfg, const std::string& out_dir,
                                       const TrainOptions& opt = {});

void write_horizon_csv(const std::string& path, const std::string& variant, const std::vector<HorizonRow>& rows);
void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);

}  // namespace mts3
