#pragma once

// "MTS3CKP1" checkpoints: 8-byte magic, u64 manifest length, JSON manifest (tensor names, shapes,
// byte offsets, config echo, RNG state, optimizer state, epoch), then a little-endian f64 blob.

#include <string>
#include <vector>

#include "mts3/autodiff.hpp"
#include "mts3/config.hpp"
#include "mts3/datagen.hpp"

namespace mts3 {

struct Checkpoint {
  RunConfig config;
  int obs_dim = 0;
  int act_dim = 0;
  ad::ParameterStore params;
  std::vector<Matrix> adam_m;  // empty when no optimizer state is stored
  std::vector<Matrix> adam_v;
  long adam_steps = 0;
  std::string rng_state;
  int epoch = 0;  // epochs completed
  double best_val = 0.0;
  int best_epoch = -1;
  int bad_epochs = 0;
  NormStats norm;
};

std::vector<char> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<char>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Copies stored tensors into `dst` by name. Throws DataError on missing names or shape mismatch.
void restore_params(const ad::ParameterStore& src, ad::ParameterStore& dst);

}  // namespace mts3
