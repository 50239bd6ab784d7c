#include "mts3/sts.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "mts3/errors.hpp"

namespace mts3 {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

DiagGaussianT<ad::Var> split_head(const ad::Var& out, int dim) {
  ad::Var mean = ad::slice_cols(out, 0, dim);
  ad::Var var = ad::softplus(ad::slice_cols(out, dim, dim)) + 1e-8;
  return {mean, var};
}

Matrix tau_rows(std::span<const int> steps, int window, TemporalEncoding kind, int freqs) {
  Matrix out(static_cast<Eigen::Index>(steps.size()), temporal_encoding_width(kind, freqs));
  for (std::size_t i = 0; i < steps.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = temporal_encoding(steps[i], window, kind, freqs);
  }
  return out;
}

Vec row_to_vec(const Matrix& m) { return m.row(0).transpose().array(); }

}  // namespace

DiagPairT<Vec> dense_apply(const Matrix& y, const Vec& x) {
  require(y.cols() == x.size() && y.rows() % 2 == 0, "dense_apply: shape mismatch");
  const Eigen::Index d = y.rows() / 2;
  const Eigen::VectorXd v = y * x.matrix();
  return {v.head(d).array(), v.tail(d).array()};
}

FactoredCovT<Vec> dense_sandwich(const Matrix& y, const Vec& var) {
  require(y.cols() == var.size() && y.rows() % 2 == 0, "dense_sandwich: shape mismatch");
  const Eigen::Index d = y.rows() / 2;
  const Matrix top = y.topRows(d), bot = y.bottomRows(d);
  const Eigen::VectorXd v = var.matrix();
  return {(top.array().square().matrix() * v).array(), (bot.array().square().matrix() * v).array(),
          (top.cwiseProduct(bot) * v).array()};
}

DiagPairT<ad::Var> dense_apply(const ad::Var& y, const ad::Var& x) {
  require(y.cols() == x.cols() && y.rows() % 2 == 0, "dense_apply: shape mismatch");
  const Eigen::Index d = y.rows() / 2;
  const ad::Var v = ad::matmul_nt(x, y);
  return {ad::slice_cols(v, 0, d), ad::slice_cols(v, d, d)};
}

FactoredCovT<ad::Var> dense_sandwich(const ad::Var& y, const ad::Var& var) {
  require(y.cols() == var.cols() && y.rows() % 2 == 0, "dense_sandwich: shape mismatch");
  const Eigen::Index d = y.rows() / 2;
  const ad::Var top = ad::slice_rows(y, 0, d), bot = ad::slice_rows(y, d, d);
  return {ad::matmul_nt(var, ad::square(top)), ad::matmul_nt(var, ad::square(bot)), ad::matmul_nt(var, top * bot)};
}

TaskBelief task_predict(const TaskBelief& prev, const std::optional<AbstractAction>& action, const StsParams& p) {
  check_belief(prev, "task_predict prior");
  const Eigen::Index d = prev.mean_u.size();
  require(p.x.uu.size() == d && p.x.ul.size() == d && p.x.lu.size() == d && p.x.ll.size() == d,
          "task_predict: X dimension mismatch");
  require(p.s.u.size() == d && p.s.l.size() == d, "task_predict: S dimension mismatch");
  if (!action) return task_predict<Vec>(prev, nullptr, p);
  require(p.y.rows() == 2 * d && p.y.cols() == action->mean.size() && action->var.size() == action->mean.size(),
          "task_predict: Y / abstract action shape mismatch");
  return task_predict<Vec>(prev, &*action, p);
}

TaskBelief task_update(const TaskBelief& prior, std::span<const AbstractObs> obs) {
  return factored_batch_update(prior, obs);
}

int temporal_encoding_width(TemporalEncoding kind, int frequencies) {
  return kind == TemporalEncoding::kScalar ? 1 : 2 * frequencies;
}

Matrix temporal_encoding(int t, int window, TemporalEncoding kind, int frequencies) {
  if (window < 1 || t < 1 || t > window) {
    throw std::out_of_range("temporal_encoding: step " + std::to_string(t) + " outside window of " +
                            std::to_string(window));
  }
  const double x = static_cast<double>(t) / static_cast<double>(window);
  if (kind == TemporalEncoding::kScalar) return Matrix::Constant(1, 1, x);
  Matrix out(1, 2 * frequencies);
  for (int j = 0; j < frequencies; ++j) {
    const double w = std::ldexp(std::numbers::pi, j) * x;
    out(0, 2 * j) = std::sin(w);
    out(0, 2 * j + 1) = std::cos(w);
  }
  return out;
}

StsEncoders::StsEncoders(ad::ParameterStore& store, int obs_dim, int act_dim, int task_dim, int action_dim,
                         int width, TemporalEncoding tau, int tau_frequencies, nn::Activation act,
                         std::mt19937_64& rng, bool with_actions)
    : task_dim_(task_dim),
      action_dim_(action_dim),
      tau_(tau),
      tau_frequencies_(tau_frequencies),
      with_actions_(with_actions) {
  const int tw = temporal_encoding_width(tau, tau_frequencies);
  obs_net_ = nn::Mlp::create(store, "sts.obs_enc", {obs_dim + tw, width, 2 * task_dim}, rng, act);
  if (with_actions) {
    act_net_ = nn::Mlp::create(store, "sts.act_enc", {act_dim + tw, width, 2 * action_dim}, rng, act);
    prior_mean_ = store.add("sts.act_prior_mean", Matrix::Zero(1, action_dim));
    prior_log_var_ = store.add("sts.act_prior_log_var", Matrix::Zero(1, action_dim));
  }
}

DiagGaussianT<ad::Var> StsEncoders::encode_obs(ad::Tape&, const ad::ParameterStore& store, const ad::Var& obs,
                                               const ad::Var& tau) const {
  return split_head(obs_net_.forward(*obs.tape(), store, ad::concat_cols({obs, tau})), task_dim_);
}

DiagGaussianT<ad::Var> StsEncoders::encode_actions(ad::Tape&, const ad::ParameterStore& store, const ad::Var& act,
                                                   const ad::Var& tau) const {
  if (!with_actions_) throw std::logic_error("encode_actions: encoders built without action abstraction");
  return split_head(act_net_.forward(*act.tape(), store, ad::concat_cols({act, tau})), action_dim_);
}

DiagGaussianT<ad::Var> StsEncoders::action_prior(ad::Tape& tape, const ad::ParameterStore& store) const {
  if (!with_actions_) throw std::logic_error("action_prior: encoders built without action abstraction");
  return {tape.param(store, prior_mean_), ad::exp(tape.param(store, prior_log_var_))};
}

AbstractObs encode_abstract_obs(const StsEncoders& enc, const ad::ParameterStore& store, const Vec& obs, int t,
                                int window) {
  ad::Tape tape;
  const ad::Var o = tape.constant(Matrix(obs.matrix().transpose()));
  const ad::Var tau = tape.constant(temporal_encoding(t, window, enc.tau_kind(), enc.tau_frequencies()));
  const DiagGaussianT<ad::Var> out = enc.encode_obs(tape, store, o, tau);
  return {row_to_vec(out.mean.value()), row_to_vec(out.var.value())};
}

AbstractAction aggregate_actions(const StsEncoders& enc, const ad::ParameterStore& store,
                                 std::span<const Vec> actions, int window, std::span<const int> steps) {
  if (!steps.empty() && steps.size() != actions.size()) {
    throw ShapeError("aggregate_actions: steps and actions differ in length");
  }
  ad::Tape tape;
  const DiagGaussianT<ad::Var> prior_v = enc.action_prior(tape, store);
  const AbstractAction prior{row_to_vec(prior_v.mean.value()), row_to_vec(prior_v.var.value())};
  if (actions.empty()) return prior;

  std::vector<int> stamps(steps.begin(), steps.end());
  if (stamps.empty()) {
    for (std::size_t i = 0; i < actions.size(); ++i) stamps.push_back(static_cast<int>(i) + 1);
  }
  Matrix a(static_cast<Eigen::Index>(actions.size()), actions.front().size());
  for (std::size_t i = 0; i < actions.size(); ++i) {
    require(actions[i].size() == a.cols(), "aggregate_actions: action width mismatch");
    a.row(static_cast<Eigen::Index>(i)) = actions[i].matrix().transpose();
  }
  const DiagGaussianT<ad::Var> enc_out = enc.encode_actions(
      tape, store, tape.constant(a), tape.constant(tau_rows(stamps, window, enc.tau_kind(), enc.tau_frequencies())));
  std::vector<DiagGaussian> set;
  set.reserve(actions.size());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    set.push_back({enc_out.mean.value().row(i).transpose().array(), enc_out.var.value().row(i).transpose().array()});
  }
  return bayes_aggregate(prior, set);
}

DiagGaussianT<ad::Var> aggregate_windows(const DiagGaussianT<ad::Var>& prior, const ad::Var& alpha,
                                         const ad::Var& rho, Eigen::Index batch, Eigen::Index window,
                                         const Matrix* weights) {
  ad::Var inv_rho = ad::reciprocal(rho);
  if (weights != nullptr) {
    require(weights->rows() == rho.rows() && weights->cols() == 1, "aggregate_windows: weight shape mismatch");
    inv_rho = ad::where(*weights, inv_rho, rho.tape()->constant(0.0));
  }
  const ad::Var precision = ad::group_sum(inv_rho, batch, window) + ad::reciprocal(prior.var);
  const ad::Var weighted = ad::group_sum((alpha - prior.mean) * inv_rho, batch, window);
  const ad::Var var = ad::reciprocal(precision);
  return {prior.mean + var * weighted, var};
}

}  // namespace mts3
