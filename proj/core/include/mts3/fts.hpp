#pragma once

// Fast time scale SSM over z = [p, m]: latent observation encoder, control model b(a),
// task-conditioned prediction and the factorized observation update.

#include <optional>
#include <random>
#include <vector>

#include "mts3/autodiff.hpp"
#include "mts3/gaussian.hpp"
#include "mts3/nn.hpp"

namespace mts3 {

template <class V>
struct FtsParamsT {
  BlockDiagT<V> a;
  BlockDiagT<V> c;  // task -> state, requires d_l = d_z
  DiagPairT<V> q;
};

using FtsParams = FtsParamsT<Vec>;
using StateBelief = FactoredBelief;

/// mu- = A mu+ + b(a) + C mu_l;  Sigma- = A Sigma+ A^T + C Sigma_l C^T + Q.
/// `task == nullptr` drops the C terms.
template <class V>
FactoredBeliefT<V> fts_predict(const FactoredBeliefT<V>& post, const DiagPairT<V>& control,
                               const FactoredBeliefT<V>* task, const FtsParamsT<V>& p) {
  if (task == nullptr) {
    return kernels::predict(post, p.a, &control, static_cast<const FactoredCovT<V>*>(nullptr), p.q);
  }
  const DiagPairT<V> task_mean = kernels::apply(p.c, task->mean_u, task->mean_l);
  const DiagPairT<V> drift{control.u + task_mean.u, control.l + task_mean.l};
  const FactoredCovT<V> extra = kernels::propagate(p.c, task->cov);
  return kernels::predict(post, p.a, &drift, &extra, p.q);
}

/// Latent observation encoder (w, sigma) and the control model b(a).
class FtsNetworks {
 public:
  FtsNetworks() = default;
  FtsNetworks(ad::ParameterStore& store, int obs_dim, int act_dim, int state_dim, int width, nn::Activation act,
              std::mt19937_64& rng);
  /// Wraps existing networks: `encoder` maps d_o -> 2 d_z (mean, raw variance), `control` d_a -> 2 d_z.
  FtsNetworks(nn::Mlp encoder, nn::Mlp control, int state_dim);

  /// Rows of `obs` (N, d_o) -> w (N, d_z), sigma (N, d_z) with sigma > 1e-8.
  DiagGaussianT<ad::Var> encode_obs(const ad::ParameterStore& store, const ad::Var& obs) const;
  /// Rows of `act` (N, d_a) -> b(a) split into upper / lower halves.
  DiagPairT<ad::Var> control(const ad::ParameterStore& store, const ad::Var& act) const;

  DiagGaussian encode_obs(const ad::ParameterStore& store, const Vec& obs) const;
  DiagPair control(const ad::ParameterStore& store, const Vec& act) const;

  int state_dim() const { return state_dim_; }

 private:
  nn::Mlp encoder_;
  nn::Mlp control_;
  int state_dim_ = 0;
};

/// Checked double API.
StateBelief fts_predict(const StateBelief& post, const DiagPair& control, const FactoredBelief* task,
                        const FtsParams& p);
StateBelief fts_predict(const StateBelief& post, const Vec& action, const FactoredBelief& task, const FtsParams& p,
                        const FtsNetworks& nets, const ad::ParameterStore& store);

/// Masked step (no observation) returns the prior unchanged.
StateBelief fts_update(const StateBelief& prior, const std::optional<DiagGaussian>& w);

struct WindowRoll {
  std::vector<StateBelief> priors;
  std::vector<StateBelief> posteriors;
  StateBelief carry;  // prior of the step after the window
};

/// Step t: priors[t] is updated with obs[t] into posteriors[t], then predicted with controls[t].
WindowRoll window_rollforward(const StateBelief& init, const FactoredBelief* task,
                              const std::vector<std::optional<DiagGaussian>>& obs,
                              const std::vector<DiagPair>& controls, const FtsParams& p);

namespace kernels {

/// Observation update on batched rows; rows with mask == 0 keep the prior bit for bit.
FactoredBeliefT<ad::Var> masked_obs_update(const FactoredBeliefT<ad::Var>& prior, const ad::Var& w_mean,
                                           const ad::Var& w_var, const Matrix& mask);

}  // namespace kernels

}  // namespace mts3
