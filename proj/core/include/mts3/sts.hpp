#pragma once

// Slow time scale SSM: abstract observations and actions aggregated over a window of H fast
// steps, and the task predict / task update pair acting on the latent task l = [u, v].

#include <random>
#include <span>
#include <vector>

#include "mts3/autodiff.hpp"
#include "mts3/gaussian.hpp"
#include "mts3/nn.hpp"

namespace mts3 {

template <class V>
struct DenseOf;
template <>
struct DenseOf<Vec> {
  using type = Matrix;
};
template <>
struct DenseOf<ad::Var> {
  using type = ad::Var;
};

/// X (block-of-diagonals), Y (dense, 2*d_l x d_alpha) and diagonal noise S.
template <class V>
struct StsParamsT {
  BlockDiagT<V> x;
  typename DenseOf<V>::type y;
  DiagPairT<V> s;
};

using StsParams = StsParamsT<Vec>;
using TaskBelief = FactoredBelief;
using AbstractObs = DiagGaussian;
using AbstractAction = DiagGaussian;

// Y applied to a vector, and the block-of-diagonals part of Y diag(var) Y^T.
DiagPairT<Vec> dense_apply(const Matrix& y, const Vec& x);
FactoredCovT<Vec> dense_sandwich(const Matrix& y, const Vec& var);
DiagPairT<ad::Var> dense_apply(const ad::Var& y, const ad::Var& x);
FactoredCovT<ad::Var> dense_sandwich(const ad::Var& y, const ad::Var& var);

/// mu- = X mu+ + Y mu_alpha;  Sigma- = X Sigma+ X^T + proj(Y Sigma_alpha Y^T) + S.
/// `action == nullptr` drops the Y terms (no action abstraction).
template <class V>
FactoredBeliefT<V> task_predict(const FactoredBeliefT<V>& prev, const DiagGaussianT<V>* action,
                                const StsParamsT<V>& p) {
  if (action == nullptr) {
    return kernels::predict(prev, p.x, static_cast<const DiagPairT<V>*>(nullptr),
                            static_cast<const FactoredCovT<V>*>(nullptr), p.s);
  }
  const DiagPairT<V> drift = dense_apply(p.y, action->mean);
  const FactoredCovT<V> extra = dense_sandwich(p.y, action->var);
  return kernels::predict(prev, p.x, &drift, &extra, p.s);
}

/// Checked double version of task_predict (no action when `action` is empty).
TaskBelief task_predict(const TaskBelief& prev, const std::optional<AbstractAction>& action, const StsParams& p);

/// Permutation invariant set update; an empty set (fully masked window) returns the prior.
TaskBelief task_update(const TaskBelief& prior, std::span<const AbstractObs> obs);

enum class TemporalEncoding { kScalar, kSinusoidal };

/// tau(t) for window step t in [1, H]: either the single scalar t/H or
/// [sin(2^j pi t/H), cos(2^j pi t/H)] for j < frequencies.
Matrix temporal_encoding(int t, int window, TemporalEncoding kind, int frequencies);
int temporal_encoding_width(TemporalEncoding kind, int frequencies);

/// Set encoders and the learnable abstract-action prior (mu0, log sigma0).
class StsEncoders {
 public:
  StsEncoders() = default;
  StsEncoders(ad::ParameterStore& store, int obs_dim, int act_dim, int task_dim, int action_dim, int width,
              TemporalEncoding tau, int tau_frequencies, nn::Activation act, std::mt19937_64& rng,
              bool with_actions = true);

  /// Rows of `obs` (N, d_o) paired with rows of `tau` (N, tau width) -> (beta, nu), nu > 0.
  DiagGaussianT<ad::Var> encode_obs(ad::Tape& tape, const ad::ParameterStore& store, const ad::Var& obs,
                                    const ad::Var& tau) const;
  DiagGaussianT<ad::Var> encode_actions(ad::Tape& tape, const ad::ParameterStore& store, const ad::Var& act,
                                        const ad::Var& tau) const;
  DiagGaussianT<ad::Var> action_prior(ad::Tape& tape, const ad::ParameterStore& store) const;

  TemporalEncoding tau_kind() const { return tau_; }
  int tau_frequencies() const { return tau_frequencies_; }
  bool has_actions() const { return with_actions_; }

 private:
  nn::Mlp obs_net_;
  nn::Mlp act_net_;
  int task_dim_ = 0;
  int action_dim_ = 0;
  int prior_mean_ = -1;
  int prior_log_var_ = -1;
  TemporalEncoding tau_ = TemporalEncoding::kScalar;
  int tau_frequencies_ = 0;
  bool with_actions_ = true;
};

/// Abstract observation of a single observation at window step t (1-based).
AbstractObs encode_abstract_obs(const StsEncoders& enc, const ad::ParameterStore& store, const Vec& obs, int t,
                                int window);

/// Bayesian aggregation of the encoded window actions onto the learnable prior. Action i is stamped
/// with window step steps[i] (1-based); when `steps` is empty, step i + 1.
AbstractAction aggregate_actions(const StsEncoders& enc, const ad::ParameterStore& store,
                                 std::span<const Vec> actions, int window, std::span<const int> steps = {});

/// Batched aggregation: `alpha`, `rho` rows laid out (window, step, batch); returns one row per
/// (window, batch). Rows whose `weights` entry is 0 are left out of their window's set.
DiagGaussianT<ad::Var> aggregate_windows(const DiagGaussianT<ad::Var>& prior, const ad::Var& alpha,
                                         const ad::Var& rho, Eigen::Index batch, Eigen::Index window,
                                         const Matrix* weights = nullptr);

}  // namespace mts3
