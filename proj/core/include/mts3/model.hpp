#pragma once

// Full two-scale model: windowing, belief initialization, imputation-aware filtering,
// decoding and the Gaussian predictive log-likelihood.

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "mts3/autodiff.hpp"
#include "mts3/fts.hpp"
#include "mts3/nn.hpp"
#include "mts3/sts.hpp"

namespace mts3 {

struct Variants {
  bool no_task = false;
  bool no_action_abstraction = false;
  bool identity_obs_model = false;
  bool no_imputation = false;
};

struct Mts3Config {
  int obs_dim = 2;
  int act_dim = 2;
  int d_z = 30;      // latent observation size; the state is [p, m] of size 2 * d_z
  int d_l = 30;      // task half size; the task is [u, v] of size 2 * d_l
  int d_alpha = 60;  // abstract action size
  int window = 15;   // H
  double dt = 0.02;
  int enc_width = 120;
  int set_width = 240;
  int dec_width = 120;
  int control_width = 120;
  nn::Activation activation = nn::Activation::kRelu;
  TemporalEncoding tau = TemporalEncoding::kScalar;
  int tau_frequencies = 4;
  double init_diag = 1.0;
  double init_offdiag = 0.2;
  double init_noise = 0.01;
  double init_belief_var = 10.0;
  bool cut_fts_gradients = true;
  // > 0: after every optimizer step each 2x2 block of A and X is rescaled so its spectral
  // radius does not exceed this value. 0 leaves the transitions unconstrained.
  double max_transition_radius = 0.0;
  Variants variants;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on inconsistent sizes.
  void validate() const;
};

/// Time-major rows: row t * batch + b holds step t of trajectory b.
struct SequenceBatch {
  Eigen::Index batch = 0;
  Eigen::Index steps = 0;
  Matrix obs;       // (steps * batch, d_o), targets and filter inputs
  Matrix act;       // (steps * batch, d_a)
  Matrix observed;  // (steps * batch, 1), 1 = the filter sees the observation
  Matrix act_valid; // (steps * batch, 1) or empty; 0 rows are left out of action aggregation

  Eigen::Index row(Eigen::Index t, Eigen::Index b) const { return t * batch + b; }
};

struct ForwardResult {
  ad::Var mean;  // (steps * batch, d_o) predictive mean for each step's observation
  ad::Var var;   // predictive variance
  Eigen::Index steps = 0;
  Eigen::Index batch = 0;
  std::vector<FactoredBeliefT<ad::Var>> state_priors;  // per step, when requested
  std::vector<FactoredBeliefT<ad::Var>> task_priors;   // per window, when requested
  std::vector<FactoredBeliefT<ad::Var>> task_posteriors;
};

/// Zero means, covariance init_belief_var * I: (task, state).
std::pair<FactoredBelief, FactoredBelief> init_beliefs(const Mts3Config& cfg);

class Mts3Model {
 public:
  explicit Mts3Model(const Mts3Config& cfg);

  const Mts3Config& config() const { return cfg_; }
  ad::ParameterStore& params() { return store_; }
  const ad::ParameterStore& params() const { return store_; }

  /// Filters the batch (truncated to whole windows) and decodes every step's prior belief.
  ForwardResult forward(ad::Tape& tape, const SequenceBatch& batch, bool keep_latents = false) const;

  /// Mean over rows of the per-row Gaussian NLL summed over observation dimensions.
  /// Throws NumericError naming the first step with a non-finite value.
  ad::Var loss(const ForwardResult& fr, const SequenceBatch& batch) const;

  /// Current parameter values in the checked double representation.
  FtsParams fts_params() const;
  StsParams sts_params() const;
  const FtsNetworks& fts_networks() const { return fts_nets_; }
  const StsEncoders& sts_encoders() const { return sts_enc_; }

  /// Applies max_transition_radius to A and X. Returns the number of blocks rescaled.
  int limit_transition_radius();

  /// Steps actually used for a sequence of `steps` (whole windows only).
  Eigen::Index usable_steps(Eigen::Index steps) const;

 private:
  BlockDiagT<ad::Var> block(ad::Tape& tape, const std::string& prefix, bool structural_offdiag) const;
  DiagPairT<ad::Var> noise(ad::Tape& tape, const std::string& prefix) const;

  Mts3Config cfg_;
  ad::ParameterStore store_;
  FtsNetworks fts_nets_;
  StsEncoders sts_enc_;
  nn::Mlp dec_mean_;
  nn::Mlp dec_var_;
};

/// Per-trajectory filter mask: the first context_steps are observed; beyond that each step is
/// dropped with probability step_fraction and each whole window with probability window_fraction.
std::vector<std::uint8_t> sample_imputation_mask(Eigen::Index steps, int window, Eigen::Index context_steps,
                                                 double step_fraction, double window_fraction,
                                                 std::mt19937_64& rng);

struct Prediction {
  Matrix mean;  // (horizon, d_o)
  Matrix var;
};

/// Filters on `context_obs` (context steps x d_o), then rolls out over `future_actions`
/// (horizon x d_a) with every future observation masked. `context_actions` has one row per
/// context step.
Prediction predict_horizon(const Mts3Model& model, const Matrix& context_obs, const Matrix& context_actions,
                           const Matrix& future_actions);

/// round(T^(1/N)), at least 1.
int suggest_window(long steps, int levels);

}  // namespace mts3
