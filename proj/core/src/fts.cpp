#include "mts3/fts.hpp"

#include <string>

#include "mts3/errors.hpp"

namespace mts3 {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

void check_params(const FtsParams& p, Eigen::Index d) {
  for (const Vec* v : {&p.a.uu, &p.a.ul, &p.a.lu, &p.a.ll, &p.c.uu, &p.c.ul, &p.c.lu, &p.c.ll, &p.q.u, &p.q.l}) {
    require(v->size() == d, "fts: parameter dimension mismatch");
  }
}

Vec first_row(const Matrix& m) { return m.row(0).transpose().array(); }

}  // namespace

FtsNetworks::FtsNetworks(ad::ParameterStore& store, int obs_dim, int act_dim, int state_dim, int width,
                         nn::Activation act, std::mt19937_64& rng)
    : state_dim_(state_dim) {
  encoder_ = nn::Mlp::create(store, "fts.obs_enc", {obs_dim, width, 2 * state_dim}, rng, act);
  control_ = nn::Mlp::create(store, "fts.control", {act_dim, width, 2 * state_dim}, rng, act);
}

FtsNetworks::FtsNetworks(nn::Mlp encoder, nn::Mlp control, int state_dim)
    : encoder_(std::move(encoder)), control_(std::move(control)), state_dim_(state_dim) {}

DiagGaussianT<ad::Var> FtsNetworks::encode_obs(const ad::ParameterStore& store, const ad::Var& obs) const {
  const ad::Var out = encoder_.forward(*obs.tape(), store, obs);
  return {ad::slice_cols(out, 0, state_dim_), ad::softplus(ad::slice_cols(out, state_dim_, state_dim_)) + 1e-8};
}

DiagPairT<ad::Var> FtsNetworks::control(const ad::ParameterStore& store, const ad::Var& act) const {
  const ad::Var out = control_.forward(*act.tape(), store, act);
  return {ad::slice_cols(out, 0, state_dim_), ad::slice_cols(out, state_dim_, state_dim_)};
}

DiagGaussian FtsNetworks::encode_obs(const ad::ParameterStore& store, const Vec& obs) const {
  ad::Tape tape;
  const DiagGaussianT<ad::Var> w = encode_obs(store, tape.constant(Matrix(obs.matrix().transpose())));
  return {first_row(w.mean.value()), first_row(w.var.value())};
}

DiagPair FtsNetworks::control(const ad::ParameterStore& store, const Vec& act) const {
  ad::Tape tape;
  const DiagPairT<ad::Var> b = control(store, tape.constant(Matrix(act.matrix().transpose())));
  return {first_row(b.u.value()), first_row(b.l.value())};
}

StateBelief fts_predict(const StateBelief& post, const DiagPair& control, const FactoredBelief* task,
                        const FtsParams& p) {
  check_belief(post, "fts_predict posterior");
  const Eigen::Index d = post.mean_u.size();
  check_params(p, d);
  require(control.u.size() == d && control.l.size() == d, "fts_predict: control dimension mismatch");
  if (task != nullptr) {
    check_belief(*task, "fts_predict task");
    require(task->mean_u.size() == d, "fts_predict: task dimension must equal state dimension");
  }
  return fts_predict<Vec>(post, control, task, p);
}

StateBelief fts_predict(const StateBelief& post, const Vec& action, const FactoredBelief& task, const FtsParams& p,
                        const FtsNetworks& nets, const ad::ParameterStore& store) {
  return fts_predict(post, nets.control(store, action), &task, p);
}

StateBelief fts_update(const StateBelief& prior, const std::optional<DiagGaussian>& w) {
  if (!w) return prior;
  return factored_obs_update(prior, *w);
}

WindowRoll window_rollforward(const StateBelief& init, const FactoredBelief* task,
                              const std::vector<std::optional<DiagGaussian>>& obs,
                              const std::vector<DiagPair>& controls, const FtsParams& p) {
  if (obs.size() != controls.size()) throw ShapeError("window_rollforward: obs and actions differ in length");
  WindowRoll out;
  out.priors.reserve(obs.size());
  out.posteriors.reserve(obs.size());
  StateBelief prior = init;
  for (std::size_t t = 0; t < obs.size(); ++t) {
    out.priors.push_back(prior);
    out.posteriors.push_back(fts_update(prior, obs[t]));
    prior = fts_predict(out.posteriors.back(), controls[t], task, p);
  }
  out.carry = std::move(prior);
  return out;
}

namespace kernels {

FactoredBeliefT<ad::Var> masked_obs_update(const FactoredBeliefT<ad::Var>& prior, const ad::Var& w_mean,
                                           const ad::Var& w_var, const Matrix& mask) {
  if ((mask.array() == 0.0).all()) return prior;
  const FactoredBeliefT<ad::Var> post = obs_update(prior, w_mean, w_var);
  if ((mask.array() != 0.0).all()) return post;
  return {ad::where(mask, post.mean_u, prior.mean_u),
          ad::where(mask, post.mean_l, prior.mean_l),
          {ad::where(mask, post.cov.su, prior.cov.su), ad::where(mask, post.cov.sl, prior.cov.sl),
           ad::where(mask, post.cov.ss, prior.cov.ss)}};
}

}  // namespace kernels

}  // namespace mts3
