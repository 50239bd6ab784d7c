#pragma once

// Run configuration: model architecture plus training protocol, read from JSON.
// Unknown keys are rejected.

#include <cstdint>
#include <string>
#include <vector>

#include "mts3/model.hpp"

namespace mts3 {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 32;
  double lr = 3e-3;
  double clip_norm = 5.0;
  int patience = 15;
  double val_fraction = 0.1;
  int context_windows = 2;
  long context_steps = -1;  // overrides context_windows * H when >= 0
  double mask_step_fraction = 0.5;
  double mask_window_fraction = 0.25;
  int batches_per_epoch = 0;  // 0 = all minibatches
  int threads = 0;            // 0 = all cores, 1 = deterministic single thread
  std::vector<long> horizons{1, 15, 30, 75, 150, 300};
  std::vector<int> h_sweep{2, 5, 15, 45, 150};
  std::vector<std::string> variants{"full", "no_task", "no_action_abstraction", "identity_obs_model",
                                    "no_imputation"};

  void validate() const;
};

struct RunConfig {
  std::uint64_t seed = 0;
  Mts3Config model;
  TrainConfig train;

  /// Context length in steps for evaluation and masking.
  long context_len() const {
    return train.context_steps >= 0 ? train.context_steps : static_cast<long>(train.context_windows) * model.window;
  }
};

/// Parses a JSON document; missing keys keep their defaults. Throws DataError on unknown keys,
/// wrong types or invalid values.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);
std::string config_to_json(const RunConfig& cfg, int indent = 2);

/// Applies a named ablation variant ("full", "no_task", ...) to the model flags.
void apply_variant(RunConfig& cfg, const std::string& variant);

}  // namespace mts3
