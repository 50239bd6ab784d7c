#include "mts3/model.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "mts3/errors.hpp"

namespace mts3 {

using ad::Var;
using Index = Eigen::Index;

namespace {

// A Sigma A^T with the products of A's blocks hoisted out of the step loop.
struct Propagator {
  Var uu2, uu_ul2, ul2;
  Var lu2, lu_ll2, ll2;
  Var uu_lu, cross, ul_ll;

  explicit Propagator(const BlockDiagT<Var>& m)
      : uu2(m.uu * m.uu),
        uu_ul2(2.0 * (m.uu * m.ul)),
        ul2(m.ul * m.ul),
        lu2(m.lu * m.lu),
        lu_ll2(2.0 * (m.lu * m.ll)),
        ll2(m.ll * m.ll),
        uu_lu(m.uu * m.lu),
        cross(m.uu * m.ll + m.ul * m.lu),
        ul_ll(m.ul * m.ll) {}

  FactoredCovT<Var> operator()(const FactoredCovT<Var>& c, const FactoredCovT<Var>& extra) const {
    return {uu2 * c.su + uu_ul2 * c.ss + ul2 * c.sl + extra.su, lu2 * c.su + lu_ll2 * c.ss + ll2 * c.sl + extra.sl,
            uu_lu * c.su + cross * c.ss + ul_ll * c.sl + extra.ss};
  }
};

double inverse_softplus(double y) { return std::log(std::expm1(y)); }

FactoredBeliefT<Var> constant_belief(ad::Tape& tape, Index rows, Index d, double var) {
  return {tape.constant(0.0, rows, d),
          tape.constant(0.0, rows, d),
          {tape.constant(var, rows, d), tape.constant(var, rows, d), tape.constant(0.0, rows, d)}};
}

FactoredBeliefT<Var> stop(const FactoredBeliefT<Var>& b) {
  return {ad::stop_gradient(b.mean_u),
          ad::stop_gradient(b.mean_l),
          {ad::stop_gradient(b.cov.su), ad::stop_gradient(b.cov.sl), ad::stop_gradient(b.cov.ss)}};
}

FactoredBeliefT<Var> select(const Matrix& mask, const FactoredBeliefT<Var>& a, const FactoredBeliefT<Var>& b) {
  if ((mask.array() != 0.0).all()) return a;
  if ((mask.array() == 0.0).all()) return b;
  return {ad::where(mask, a.mean_u, b.mean_u),
          ad::where(mask, a.mean_l, b.mean_l),
          {ad::where(mask, a.cov.su, b.cov.su), ad::where(mask, a.cov.sl, b.cov.sl),
           ad::where(mask, a.cov.ss, b.cov.ss)}};
}

Vec row_vec(const Matrix& m) { return m.row(0).transpose().array(); }

Vec softplus_floor(const Matrix& raw, double floor) {
  Vec x = row_vec(raw);
  return x.max(0.0) + (-x.abs()).exp().log1p() + floor;
}

constexpr double kNoiseFloor = 1e-6;

}  // namespace

void Mts3Config::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (obs_dim < 1) fail("obs_dim must be >= 1");
  if (act_dim < 1) fail("act_dim must be >= 1");
  if (d_z < 1) fail("d_z must be >= 1");
  if (window < 1) fail("window must be >= 1");
  if (!(dt > 0.0)) fail("dt must be positive");
  if (enc_width < 1 || set_width < 1 || dec_width < 1 || control_width < 1) fail("widths must be >= 1");
  if (!variants.no_task) {
    if (d_l != d_z) fail("d_l must equal d_z unless the task level is disabled");
    if (d_alpha < 1) fail("d_alpha must be >= 1");
  }
  if (tau == TemporalEncoding::kSinusoidal && tau_frequencies < 1) fail("tau_frequencies must be >= 1");
  if (!(init_noise > 0.0) || !(init_belief_var > 0.0)) fail("initial variances must be positive");
  if (!(max_transition_radius >= 0.0)) fail("max_transition_radius must be >= 0");
}

std::pair<FactoredBelief, FactoredBelief> init_beliefs(const Mts3Config& cfg) {
  auto make = [&](Index d) {
    return FactoredBelief{Vec::Zero(d), Vec::Zero(d), cov_identity(d, cfg.init_belief_var)};
  };
  return {make(cfg.d_l), make(cfg.d_z)};
}

Mts3Model::Mts3Model(const Mts3Config& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  const int dz = cfg_.d_z;
  auto add_block = [&](const std::string& prefix, double diag, double off) {
    store_.add(prefix + ".uu", Matrix::Constant(1, dz, diag));
    store_.add(prefix + ".ul", Matrix::Constant(1, dz, off));
    store_.add(prefix + ".lu", Matrix::Constant(1, dz, off));
    store_.add(prefix + ".ll", Matrix::Constant(1, dz, diag));
  };
  auto add_noise = [&](const std::string& prefix, int d) {
    const double raw = inverse_softplus(cfg_.init_noise - kNoiseFloor);
    store_.add(prefix + ".raw_u", Matrix::Constant(1, d, raw));
    store_.add(prefix + ".raw_l", Matrix::Constant(1, d, raw));
  };

  add_block("fts.A", cfg_.init_diag, cfg_.init_offdiag);
  add_noise("fts.Q", dz);
  fts_nets_ = FtsNetworks(store_, cfg_.obs_dim, cfg_.act_dim, dz, cfg_.enc_width, cfg_.activation, rng);
  if (!cfg_.variants.no_task) {
    add_block("fts.C", 0.0, 0.0);
    add_block("sts.X", cfg_.init_diag, cfg_.init_offdiag);
    add_noise("sts.S", cfg_.d_l);
    const bool actions = !cfg_.variants.no_action_abstraction;
    if (actions) {
      // Small random start so the abstract action channel is not symmetric.
      std::normal_distribution<double> n(0.0, 0.01);
      Matrix y(2 * cfg_.d_l, cfg_.d_alpha);
      for (Index c = 0; c < y.cols(); ++c)
        for (Index r = 0; r < y.rows(); ++r) y(r, c) = n(rng);
      store_.add("sts.Y", std::move(y));
    }
    sts_enc_ = StsEncoders(store_, cfg_.obs_dim, cfg_.act_dim, cfg_.d_l, cfg_.d_alpha, cfg_.set_width, cfg_.tau,
                           cfg_.tau_frequencies, cfg_.activation, rng, actions);
  }
  const int dec_in = cfg_.variants.identity_obs_model ? dz : 2 * dz;
  dec_mean_ = nn::Mlp::create(store_, "dec.mean", {dec_in, cfg_.dec_width, cfg_.obs_dim}, rng, cfg_.activation);
  dec_var_ = nn::Mlp::create(store_, "dec.var", {dz, cfg_.dec_width, cfg_.obs_dim}, rng, cfg_.activation);
}

int Mts3Model::limit_transition_radius() {
  const double r_max = cfg_.max_transition_radius;
  if (r_max <= 0.0) return 0;
  const bool identity = cfg_.variants.identity_obs_model;
  int rescaled = 0;
  auto limit = [&](const std::string& prefix) {
    Matrix& uu = store_[store_.index(prefix + ".uu")].value;
    Matrix& ul = store_[store_.index(prefix + ".ul")].value;
    Matrix& lu = store_[store_.index(prefix + ".lu")].value;
    Matrix& ll = store_[store_.index(prefix + ".ll")].value;
    for (Index i = 0; i < uu.size(); ++i) {
      const double b = identity ? 0.0 : ul(i);
      const double c = identity ? 0.0 : lu(i);
      const double half_tr = 0.5 * (uu(i) + ll(i));
      const double det = uu(i) * ll(i) - b * c;
      const double disc = half_tr * half_tr - det;
      const double radius = disc >= 0.0 ? std::abs(half_tr) + std::sqrt(disc) : std::sqrt(det);
      if (radius <= r_max) continue;
      const double f = r_max / radius;
      uu(i) *= f;
      ul(i) *= f;
      lu(i) *= f;
      ll(i) *= f;
      ++rescaled;
    }
  };
  limit("fts.A");
  if (!cfg_.variants.no_task) limit("sts.X");
  return rescaled;
}

Index Mts3Model::usable_steps(Index steps) const { return (steps / cfg_.window) * cfg_.window; }

BlockDiagT<Var> Mts3Model::block(ad::Tape& tape, const std::string& prefix, bool structural_offdiag) const {
  auto p = [&](const char* name) { return tape.param(store_, prefix + name); };
  if (!structural_offdiag) {
    const Var zero = tape.constant(0.0, 1, cfg_.d_z);
    return {p(".uu"), zero, zero, p(".ll")};
  }
  return {p(".uu"), p(".ul"), p(".lu"), p(".ll")};
}

DiagPairT<Var> Mts3Model::noise(ad::Tape& tape, const std::string& prefix) const {
  return {ad::softplus(tape.param(store_, prefix + ".raw_u")) + kNoiseFloor,
          ad::softplus(tape.param(store_, prefix + ".raw_l")) + kNoiseFloor};
}

ForwardResult Mts3Model::forward(ad::Tape& tape, const SequenceBatch& batch, bool keep_latents) const {
  const Index B = batch.batch;
  const Index H = cfg_.window;
  const Index T = usable_steps(batch.steps);
  const Index K = T / H;
  const Index N = T * B;
  const Index dz = cfg_.d_z;
  if (T == 0 || B == 0) throw ShapeError("forward: batch shorter than one window");
  if (batch.obs.rows() < N || batch.obs.cols() != cfg_.obs_dim) throw ShapeError("forward: observation shape");
  if (batch.act.rows() < N || batch.act.cols() != cfg_.act_dim) throw ShapeError("forward: action shape");
  if (batch.observed.rows() < N || batch.observed.cols() != 1) throw ShapeError("forward: mask shape");
  if (batch.act_valid.size() != 0 && (batch.act_valid.rows() < N || batch.act_valid.cols() != 1)) {
    throw ShapeError("forward: action mask shape");
  }
  const bool identity = cfg_.variants.identity_obs_model;
  const bool with_task = !cfg_.variants.no_task;
  const bool with_actions = with_task && !cfg_.variants.no_action_abstraction;

  const Matrix mask = batch.observed.topRows(N);
  const Var obs = tape.constant(batch.obs.topRows(N));
  const Var act = tape.constant(batch.act.topRows(N));

  // Per-step encodings for every row at once.
  const DiagGaussianT<Var> w = fts_nets_.encode_obs(store_, obs);
  DiagPairT<Var> ctrl = fts_nets_.control(store_, act);
  if (identity) ctrl.l = tape.constant(0.0, 1, dz);

  const BlockDiagT<Var> a = block(tape, "fts.A", !identity);
  const Propagator prop_a(a);
  const DiagPairT<Var> q = noise(tape, "fts.Q");

  BlockDiagT<Var> c;
  StsParamsT<Var> sts;
  Var s0, s1;
  Matrix window_seen;
  DiagGaussianT<Var> agg;
  if (with_task) {
    if (identity) {
      const Var zero = tape.constant(0.0, 1, dz);
      c = {tape.param(store_, "fts.C.uu"), zero, zero, zero};
    } else {
      c = block(tape, "fts.C", true);
    }
    sts.x = block(tape, "sts.X", !identity);
    sts.s = noise(tape, "sts.S");
    if (with_actions) sts.y = tape.param(store_, "sts.Y");

    const int tw = temporal_encoding_width(cfg_.tau, cfg_.tau_frequencies);
    Matrix tau(N, tw);
    for (Index t = 0; t < T; ++t) {
      const Matrix row = temporal_encoding(static_cast<int>(t % H) + 1, cfg_.window, cfg_.tau, cfg_.tau_frequencies);
      for (Index b = 0; b < B; ++b) tau.row(t * B + b) = row;
    }
    const Var tau_v = tape.constant(std::move(tau));

    const DiagGaussianT<Var> beta = sts_enc_.encode_obs(tape, store_, obs, tau_v);
    const Var inv_nu = tape.constant(mask) * ad::reciprocal(beta.var);
    s0 = ad::group_sum(inv_nu, B, H);
    s1 = ad::group_sum(inv_nu * beta.mean, B, H);
    window_seen = Matrix::Zero(K * B, 1);
    for (Index k = 0; k < K; ++k)
      for (Index t = 0; t < H; ++t)
        for (Index b = 0; b < B; ++b) {
          if (mask((k * H + t) * B + b, 0) != 0.0) window_seen(k * B + b, 0) = 1.0;
        }

    if (with_actions) {
      const DiagGaussianT<Var> alpha = sts_enc_.encode_actions(tape, store_, act, tau_v);
      const Matrix weights = batch.act_valid.size() != 0 ? Matrix(batch.act_valid.topRows(N)) : Matrix();
      agg = aggregate_windows(sts_enc_.action_prior(tape, store_), alpha.mean, alpha.var, B, H,
                              weights.size() != 0 ? &weights : nullptr);
    }
  }

  ForwardResult out;
  out.steps = T;
  out.batch = B;
  std::vector<Var> prior_mu_u, prior_mu_l, prior_su;
  prior_mu_u.reserve(static_cast<std::size_t>(T));
  prior_mu_l.reserve(static_cast<std::size_t>(T));
  prior_su.reserve(static_cast<std::size_t>(T));

  FactoredBeliefT<Var> task_post = constant_belief(tape, B, cfg_.d_l, cfg_.init_belief_var);
  FactoredBeliefT<Var> z = constant_belief(tape, B, dz, cfg_.init_belief_var);

  for (Index k = 0; k < K; ++k) {
    FactoredCovT<Var> extra{q.u, q.l, tape.constant(0.0, 1, dz)};
    DiagPairT<Var> task_drift;
    FactoredBeliefT<Var> task_prior;
    if (with_task) {
      if (with_actions) {
        const DiagGaussianT<Var> alpha_k{ad::slice_rows(agg.mean, k * B, B), ad::slice_rows(agg.var, k * B, B)};
        task_prior = task_predict<Var>(task_post, &alpha_k, sts);
      } else {
        task_prior = task_predict<Var>(task_post, nullptr, sts);
      }
      task_drift = kernels::apply(c, task_prior.mean_u, task_prior.mean_l);
      const FactoredCovT<Var> tc = kernels::propagate(c, task_prior.cov);
      extra = {tc.su + q.u, tc.sl + q.l, tc.ss};
      if (keep_latents) out.task_priors.push_back(task_prior);
    }

    for (Index t = 0; t < H; ++t) {
      const Index step = k * H + t;
      const Index r0 = step * B;
      prior_mu_u.push_back(z.mean_u);
      prior_mu_l.push_back(z.mean_l);
      prior_su.push_back(z.cov.su);
      if (keep_latents) out.state_priors.push_back(z);

      const Matrix m = mask.middleRows(r0, B);
      FactoredBeliefT<Var> post = z;
      if (!(m.array() == 0.0).all()) {
        post = kernels::masked_obs_update(z, ad::slice_rows(w.mean, r0, B), ad::slice_rows(w.var, r0, B), m);
      }
      DiagPairT<Var> mean = kernels::apply(a, post.mean_u, post.mean_l);
      Var mu_u = mean.u + ad::slice_rows(ctrl.u, r0, B);
      Var mu_l = identity ? mean.l : mean.l + ad::slice_rows(ctrl.l, r0, B);
      if (with_task) {
        mu_u = mu_u + task_drift.u;
        mu_l = mu_l + task_drift.l;
      }
      z = {mu_u, mu_l, prop_a(post.cov, extra)};
    }
    if (cfg_.cut_fts_gradients) z = stop(z);

    if (with_task) {
      const Var s0k = ad::slice_rows(s0, k * B, B);
      const Var residual = ad::slice_rows(s1, k * B, B) - task_prior.mean_u * s0k;
      const Matrix seen = window_seen.middleRows(k * B, B);
      if ((seen.array() == 0.0).all()) {
        task_post = task_prior;
      } else {
        task_post = select(seen, kernels::batch_update_from_sums(task_prior, s0k, residual), task_prior);
      }
      if (keep_latents) out.task_posteriors.push_back(task_post);
    }
  }

  const Var mu_u_all = ad::concat_rows(prior_mu_u);
  const Var dec_in = identity ? mu_u_all : ad::concat_cols({mu_u_all, ad::concat_rows(prior_mu_l)});
  out.mean = dec_mean_.forward(tape, store_, dec_in);
  out.var = ad::softplus(dec_var_.forward(tape, store_, ad::concat_rows(prior_su))) + 1e-8;
  return out;
}

Var Mts3Model::loss(const ForwardResult& fr, const SequenceBatch& batch) const {
  const Index N = fr.steps * fr.batch;
  const Matrix& mu = fr.mean.value();
  const Matrix& var = fr.var.value();
  for (Index r = 0; r < N; ++r) {
    if (!mu.row(r).allFinite() || !var.row(r).allFinite()) {
      throw NumericError("non-finite prediction at step " + std::to_string(r / fr.batch), r / fr.batch);
    }
  }
  ad::Tape& tape = *fr.mean.tape();
  const Var target = tape.constant(batch.obs.topRows(N));
  const Var diff = target - fr.mean;
  const Var terms = ad::log(fr.var) + ad::square(diff) / fr.var;
  const double log2pi = std::log(2.0 * std::numbers::pi);
  const Var total = ad::scale(ad::sum(terms), 0.5 / static_cast<double>(N)) +
                    0.5 * log2pi * static_cast<double>(cfg_.obs_dim);
  if (!std::isfinite(total.scalar())) {
    const Matrix t = terms.value();
    Index bad = 0;
    for (Index r = 0; r < N; ++r) {
      if (!t.row(r).allFinite()) {
        bad = r / fr.batch;
        break;
      }
    }
    throw NumericError("non-finite loss at step " + std::to_string(bad), bad);
  }
  return total;
}

FtsParams Mts3Model::fts_params() const {
  const Index dz = cfg_.d_z;
  auto val = [&](const std::string& name) { return row_vec(store_[store_.index(name)].value); };
  const bool identity = cfg_.variants.identity_obs_model;
  FtsParams p;
  p.a = {val("fts.A.uu"), identity ? Vec(Vec::Zero(dz)) : val("fts.A.ul"), identity ? Vec(Vec::Zero(dz)) : val("fts.A.lu"),
         val("fts.A.ll")};
  if (cfg_.variants.no_task) {
    p.c = {Vec::Zero(dz), Vec::Zero(dz), Vec::Zero(dz), Vec::Zero(dz)};
  } else if (identity) {
    p.c = {val("fts.C.uu"), Vec::Zero(dz), Vec::Zero(dz), Vec::Zero(dz)};
  } else {
    p.c = {val("fts.C.uu"), val("fts.C.ul"), val("fts.C.lu"), val("fts.C.ll")};
  }
  p.q = {softplus_floor(store_[store_.index("fts.Q.raw_u")].value, kNoiseFloor),
         softplus_floor(store_[store_.index("fts.Q.raw_l")].value, kNoiseFloor)};
  return p;
}

StsParams Mts3Model::sts_params() const {
  if (cfg_.variants.no_task) throw std::logic_error("sts_params: model built without the task level");
  const Index d = cfg_.d_l;
  auto val = [&](const std::string& name) { return row_vec(store_[store_.index(name)].value); };
  const bool identity = cfg_.variants.identity_obs_model;
  StsParams p;
  p.x = {val("sts.X.uu"), identity ? Vec(Vec::Zero(d)) : val("sts.X.ul"), identity ? Vec(Vec::Zero(d)) : val("sts.X.lu"),
         val("sts.X.ll")};
  p.y = store_.contains("sts.Y") ? store_[store_.index("sts.Y")].value : Matrix::Zero(2 * d, cfg_.d_alpha);
  p.s = {softplus_floor(store_[store_.index("sts.S.raw_u")].value, kNoiseFloor),
         softplus_floor(store_[store_.index("sts.S.raw_l")].value, kNoiseFloor)};
  return p;
}

std::vector<std::uint8_t> sample_imputation_mask(Index steps, int window, Index context_steps, double step_fraction,
                                                 double window_fraction, std::mt19937_64& rng) {
  if (!(step_fraction >= 0.0 && step_fraction <= 1.0) || !(window_fraction >= 0.0 && window_fraction <= 1.0)) {
    throw std::invalid_argument("sample_imputation_mask: fractions must lie in [0, 1]");
  }
  if (window < 1) throw std::invalid_argument("sample_imputation_mask: window must be >= 1");
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(steps), 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Index windows = (steps + window - 1) / window;
  for (Index k = 0; k < windows; ++k) {
    const bool drop_window = u(rng) < window_fraction;
    for (Index t = k * window; t < std::min(steps, (k + 1) * window); ++t) {
      const bool drop_step = u(rng) < step_fraction;
      if (t >= context_steps && (drop_window || drop_step)) mask[static_cast<std::size_t>(t)] = 0;
    }
  }
  return mask;
}

Prediction predict_horizon(const Mts3Model& model, const Matrix& context_obs, const Matrix& context_actions,
                           const Matrix& future_actions) {
  const Mts3Config& cfg = model.config();
  const Index ctx = context_obs.rows();
  const Index hz = future_actions.rows();
  if (hz == 0) return {Matrix(0, cfg.obs_dim), Matrix(0, cfg.obs_dim)};
  if (ctx < cfg.window) throw ShapeError("predict_horizon: context shorter than one window");
  if (context_actions.rows() != ctx) throw ShapeError("predict_horizon: context actions length mismatch");
  const Index total = ctx + hz;
  const Index padded = ((total + cfg.window - 1) / cfg.window) * cfg.window;

  SequenceBatch sb;
  sb.batch = 1;
  sb.steps = padded;
  sb.obs = Matrix::Zero(padded, cfg.obs_dim);
  sb.obs.topRows(ctx) = context_obs;
  sb.act = Matrix::Zero(padded, cfg.act_dim);
  sb.act.topRows(ctx) = context_actions;
  sb.act.middleRows(ctx, hz) = future_actions;
  sb.observed = Matrix::Zero(padded, 1);
  sb.observed.topRows(ctx).setOnes();
  sb.act_valid = Matrix::Zero(padded, 1);
  sb.act_valid.topRows(total).setOnes();

  ad::Tape tape;
  const ForwardResult fr = model.forward(tape, sb);
  return {fr.mean.value().middleRows(ctx, hz), fr.var.value().middleRows(ctx, hz)};
}

int suggest_window(long steps, int levels) {
  if (steps < 1) throw std::invalid_argument("suggest_window: T must be >= 1");
  if (levels < 2) throw std::invalid_argument("suggest_window: N must be >= 2");
  const double h = std::pow(static_cast<double>(steps), 1.0 / static_cast<double>(levels));
  return std::max(1, static_cast<int>(std::lround(h)));
}

}  // namespace mts3
