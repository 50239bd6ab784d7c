#pragma once

// Gaussian inference kernels shared by the fast and slow time scales:
//   * Bayesian aggregation of a set of diagonal Gaussians,
//   * factorized Kalman observation update with H = [I, 0],
//   * permutation invariant batch update in precision form,
//   * factorized prediction with a caller-composed drift.

#include <optional>
#include <span>
#include <vector>

#include "mts3/factored_linalg.hpp"

namespace mts3 {

template <class V>
struct DiagGaussianT {
  V mean;
  V var;
};

/// Belief over a 2d-dimensional latent [upper; lower] with block-of-diagonals covariance.
template <class V>
struct FactoredBeliefT {
  V mean_u;
  V mean_l;
  FactoredCovT<V> cov;
};

using DiagGaussian = DiagGaussianT<Vec>;
using FactoredBelief = FactoredBeliefT<Vec>;

namespace kernels {

/// Single observation w ~ N([I,0] z, diag(w.var)).
template <class V>
FactoredBeliefT<V> obs_update(const FactoredBeliefT<V>& prior, const V& w_mean, const V& w_var) {
  const auto& c = prior.cov;
  const V denom = c.su + w_var;
  const V gain_u = c.su / denom;
  const V gain_s = c.ss / denom;
  const V residual = w_mean - prior.mean_u;
  const V obs_share = w_var / denom;  // 1 - gain_u
  return {prior.mean_u + gain_u * residual,
          prior.mean_l + gain_s * residual,
          {c.su * obs_share, c.sl - gain_s * c.ss, c.ss * obs_share}};
}

/// Batch update given precision_sum = sum_t 1/nu_t and residual_sum = sum_t (beta_t - mu_u)/nu_t.
/// Only the upper precision block changes; the mean moves along [sigma_u+; sigma_s+].
template <class V>
FactoredBeliefT<V> batch_update_from_sums(const FactoredBeliefT<V>& prior, const V& precision_sum,
                                          const V& residual_sum) {
  FactoredPrecT<V> prec = invert(prior.cov);
  prec.lu = prec.lu + precision_sum;
  FactoredCovT<V> post = invert(prec);
  V mean_u = prior.mean_u + post.su * residual_sum;
  V mean_l = prior.mean_l + post.ss * residual_sum;
  return {std::move(mean_u), std::move(mean_l), std::move(post)};
}

/// `drift` and `extra_cov` may be null (zero drift / no extra covariance).
template <class V>
FactoredBeliefT<V> predict(const FactoredBeliefT<V>& prior, const BlockDiagT<V>& a, const DiagPairT<V>* drift,
                           const FactoredCovT<V>* extra_cov, const DiagPairT<V>& noise) {
  DiagPairT<V> mean = apply(a, prior.mean_u, prior.mean_l);
  if (drift != nullptr) mean = {mean.u + drift->u, mean.l + drift->l};
  FactoredCovT<V> cov = propagate(a, prior.cov);
  if (extra_cov != nullptr) cov = add(cov, *extra_cov);
  return {std::move(mean.u), std::move(mean.l), {cov.su + noise.u, cov.sl + noise.l, std::move(cov.ss)}};
}

}  // namespace kernels

/// Closed-form conditioning of a diagonal prior on independent diagonal observations.
/// Empty set returns the prior.
DiagGaussian bayes_aggregate(const DiagGaussian& prior, std::span<const DiagGaussian> obs);

FactoredBelief factored_obs_update(const FactoredBelief& prior, const DiagGaussian& w);

/// Precision-form set update; invariant under permutation of `obs`.
FactoredBelief factored_batch_update(const FactoredBelief& prior, std::span<const DiagGaussian> obs);

FactoredBelief factored_predict(const FactoredBelief& prior, const BlockDiagMatrix2x2& a, const DiagPair& drift,
                                const std::optional<FactoredCov>& extra_cov, const DiagPair& noise);

void check_belief(const FactoredBelief& b, const char* what = "belief");

}  // namespace mts3
