#include "mts3/gaussian.hpp"

#include <string>

#include "mts3/errors.hpp"

namespace mts3 {

namespace {

void check_variance(const Vec& var, const char* what) {
  for (Eigen::Index i = 0; i < var.size(); ++i) {
    if (!(var[i] > 0.0)) {
      throw DomainError(std::string(what) + ": non-positive variance at index " + std::to_string(i));
    }
  }
}

void check_dim(Eigen::Index got, Eigen::Index want, const char* what) {
  if (got != want) {
    throw ShapeError(std::string(what) + ": dimension " + std::to_string(got) + ", expected " +
                     std::to_string(want));
  }
}

}  // namespace

void check_belief(const FactoredBelief& b, const char* what) {
  check_dim(b.mean_l.size(), b.mean_u.size(), what);
  check_dim(b.cov.su.size(), b.mean_u.size(), what);
  check_positive_definite(b.cov, what);
}

DiagGaussian bayes_aggregate(const DiagGaussian& prior, std::span<const DiagGaussian> obs) {
  const Eigen::Index m = prior.mean.size();
  check_dim(prior.var.size(), m, "bayes_aggregate prior");
  check_variance(prior.var, "bayes_aggregate prior");
  Vec precision = prior.var.inverse();
  Vec weighted = Vec::Zero(m);
  for (const DiagGaussian& o : obs) {
    check_dim(o.mean.size(), m, "bayes_aggregate observation");
    check_dim(o.var.size(), m, "bayes_aggregate observation");
    check_variance(o.var, "bayes_aggregate observation");
    precision += o.var.inverse();
    weighted += (o.mean - prior.mean) / o.var;
  }
  Vec var = precision.inverse();
  Vec mean = prior.mean + var * weighted;
  return {std::move(mean), std::move(var)};
}

FactoredBelief factored_obs_update(const FactoredBelief& prior, const DiagGaussian& w) {
  check_belief(prior, "factored_obs_update prior");
  check_dim(w.mean.size(), prior.mean_u.size(), "factored_obs_update observation");
  check_dim(w.var.size(), prior.mean_u.size(), "factored_obs_update observation");
  check_variance(w.var, "factored_obs_update observation");
  return kernels::obs_update(prior, w.mean, w.var);
}

FactoredBelief factored_batch_update(const FactoredBelief& prior, std::span<const DiagGaussian> obs) {
  check_belief(prior, "factored_batch_update prior");
  if (obs.empty()) return prior;
  const Eigen::Index d = prior.mean_u.size();
  Vec precision_sum = Vec::Zero(d);
  Vec residual_sum = Vec::Zero(d);
  for (const DiagGaussian& o : obs) {
    check_dim(o.mean.size(), d, "factored_batch_update observation");
    check_dim(o.var.size(), d, "factored_batch_update observation");
    check_variance(o.var, "factored_batch_update observation");
    precision_sum += o.var.inverse();
    residual_sum += (o.mean - prior.mean_u) / o.var;
  }
  return kernels::batch_update_from_sums(prior, precision_sum, residual_sum);
}

FactoredBelief factored_predict(const FactoredBelief& prior, const BlockDiagMatrix2x2& a, const DiagPair& drift,
                                const std::optional<FactoredCov>& extra_cov, const DiagPair& noise) {
  const Eigen::Index d = prior.mean_u.size();
  check_dim(prior.mean_l.size(), d, "factored_predict prior");
  check_dim(a.uu.size(), d, "factored_predict transition");
  check_dim(drift.u.size(), d, "factored_predict drift");
  check_dim(drift.l.size(), d, "factored_predict drift");
  check_dim(noise.u.size(), d, "factored_predict noise");
  check_dim(noise.l.size(), d, "factored_predict noise");
  if (extra_cov) check_dim(extra_cov->su.size(), d, "factored_predict extra covariance");
  return kernels::predict(prior, a, &drift, extra_cov ? &*extra_cov : nullptr, noise);
}

}  // namespace mts3
