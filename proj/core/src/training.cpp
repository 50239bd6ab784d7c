#include "mts3/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "mts3/errors.hpp"
#include "mts3/nn.hpp"

namespace mts3 {

using nlohmann::json;
using Index = Eigen::Index;

SequenceBatch make_sequence_batch(const TrajectoryBatch& data, const std::vector<long>& indices, int window,
                                  const std::vector<std::vector<std::uint8_t>>* masks) {
  if (masks != nullptr && masks->size() != indices.size()) throw ShapeError("make_sequence_batch: one mask per trajectory");
  SequenceBatch sb;
  sb.batch = static_cast<Index>(indices.size());
  sb.steps = (data.steps / window) * window;
  const Index n = sb.steps * sb.batch;
  sb.obs.resize(n, data.obs_dim);
  sb.act.resize(n, data.act_dim);
  sb.observed.resize(n, 1);
  for (Index b = 0; b < sb.batch; ++b) {
    const long traj = indices[static_cast<std::size_t>(b)];
    if (traj < 0 || traj >= data.batch) throw std::out_of_range("make_sequence_batch: trajectory index");
    for (Index t = 0; t < sb.steps; ++t) {
      const Index r = sb.row(t, b);
      for (int i = 0; i < data.obs_dim; ++i) sb.obs(r, i) = data.o(traj, t, i);
      for (int i = 0; i < data.act_dim; ++i) sb.act(r, i) = data.a(traj, t, i);
      bool seen = data.valid[static_cast<std::size_t>(traj * data.steps + t)] != 0;
      if (masks != nullptr) seen = seen && (*masks)[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)] != 0;
      sb.observed(r, 0) = seen ? 1.0 : 0.0;
    }
  }
  return sb;
}

namespace {

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

struct ShardOutput {
  double loss = 0.0;
  double sq_err = 0.0;  // in original units, summed over rows and dims
  Index rows = 0;
  ad::GradientSet grads;
};

// Rows of a time-major batch restricted to a subset of trajectories.
SequenceBatch shard_of(const SequenceBatch& sb, Index first, Index count) {
  SequenceBatch out;
  out.batch = count;
  out.steps = sb.steps;
  out.obs.resize(sb.steps * count, sb.obs.cols());
  out.act.resize(sb.steps * count, sb.act.cols());
  out.observed.resize(sb.steps * count, 1);
  for (Index t = 0; t < sb.steps; ++t) {
    out.obs.middleRows(t * count, count) = sb.obs.middleRows(t * sb.batch + first, count);
    out.act.middleRows(t * count, count) = sb.act.middleRows(t * sb.batch + first, count);
    out.observed.middleRows(t * count, count) = sb.observed.middleRows(t * sb.batch + first, count);
  }
  return out;
}

double weighted_sq_err(const Matrix& err, const NormStats& norm) {
  double s = 0.0;
  for (Index i = 0; i < err.cols(); ++i) {
    const double sd = norm.obs_std[static_cast<std::size_t>(i)];
    s += err.col(i).squaredNorm() * sd * sd;
  }
  return s;
}

// Loss and gradients of one minibatch, split across threads by trajectory and reduced in
// fixed shard order.
ShardOutput batch_gradients(const Mts3Model& model, const SequenceBatch& sb, const NormStats& norm, int threads) {
  const Index shards = std::max<Index>(1, std::min<Index>(threads, sb.batch));
  std::vector<ShardOutput> outs(static_cast<std::size_t>(shards));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(shards));
  auto work = [&](Index s) {
    try {
      const Index first = s * sb.batch / shards, last = (s + 1) * sb.batch / shards;
      const SequenceBatch part = shards == 1 ? sb : shard_of(sb, first, last - first);
      ad::Tape tape;
      const ForwardResult fr = model.forward(tape, part);
      const ad::Var loss = model.loss(fr, part);
      ShardOutput& o = outs[static_cast<std::size_t>(s)];
      o.loss = loss.scalar();
      o.rows = fr.steps * fr.batch;
      o.sq_err = weighted_sq_err(part.obs.topRows(o.rows) - fr.mean.value(), norm);
      tape.backward(loss, o.grads);
    } catch (...) {
      errors[static_cast<std::size_t>(s)] = std::current_exception();
    }
  };
  if (shards == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (Index s = 0; s < shards; ++s) pool.emplace_back(work, s);
    for (std::thread& t : pool) t.join();
  }
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  ShardOutput total;
  for (const ShardOutput& o : outs) total.rows += o.rows;
  total.grads = ad::zero_gradients(model.params());
  for (const ShardOutput& o : outs) {
    const double w = static_cast<double>(o.rows) / static_cast<double>(total.rows);
    total.loss += w * o.loss;
    total.sq_err += o.sq_err;
    for (std::size_t i = 0; i < o.grads.size(); ++i) {
      if (o.grads[i].size() != 0) total.grads[i] += w * o.grads[i];
    }
  }
  return total;
}

// Per-future-step sums over trajectories for a rollout that only observes the first ctx steps.
struct RolloutSums {
  std::vector<double> sq;   // original units, summed over dims
  std::vector<double> nll;  // normalized units, summed over dims
  std::vector<long> count;  // trajectories contributing
};

RolloutSums rollout_sums(const Mts3Model& model, const NormStats& norm, const TrajectoryBatch& normalized,
                         long ctx, int threads) {
  const int window = model.config().window;
  const long usable = (normalized.steps / window) * window;
  const long future = std::max(0L, usable - ctx);
  RolloutSums sums{std::vector<double>(static_cast<std::size_t>(future), 0.0),
                   std::vector<double>(static_cast<std::size_t>(future), 0.0),
                   std::vector<long>(static_cast<std::size_t>(future), 0)};
  if (future == 0 || normalized.batch == 0) return sums;

  const long chunk = 32;
  std::vector<std::vector<long>> chunks;
  for (long first = 0; first < normalized.batch; first += chunk) {
    std::vector<long> idx;
    for (long i = first; i < std::min(normalized.batch, first + chunk); ++i) idx.push_back(i);
    chunks.push_back(std::move(idx));
  }
  std::vector<RolloutSums> parts(chunks.size(), sums);
  std::vector<std::exception_ptr> errors(chunks.size());
  const double log2pi = std::log(2.0 * std::numbers::pi);
  auto work = [&](std::size_t c) {
    try {
      std::vector<std::vector<std::uint8_t>> masks;
      for (std::size_t i = 0; i < chunks[c].size(); ++i) {
        std::vector<std::uint8_t> m(static_cast<std::size_t>(normalized.steps), 0);
        std::fill(m.begin(), m.begin() + std::min(ctx, normalized.steps), 1);
        masks.push_back(std::move(m));
      }
      const SequenceBatch sb = make_sequence_batch(normalized, chunks[c], window, &masks);
      ad::Tape tape;
      const ForwardResult fr = model.forward(tape, sb);
      const Matrix& mu = fr.mean.value();
      const Matrix& var = fr.var.value();
      RolloutSums& p = parts[c];
      for (long s = ctx; s < usable; ++s) {
        for (Index b = 0; b < sb.batch; ++b) {
          const long traj = chunks[c][static_cast<std::size_t>(b)];
          if (!normalized.valid[static_cast<std::size_t>(traj * normalized.steps + s)]) continue;
          const Index r = sb.row(s, b);
          double sq = 0.0, nll = 0.0;
          for (Index i = 0; i < mu.cols(); ++i) {
            const double e = sb.obs(r, i) - mu(r, i);
            const double sd = norm.obs_std[static_cast<std::size_t>(i)];
            sq += e * e * sd * sd;
            nll += 0.5 * (log2pi + std::log(var(r, i)) + e * e / var(r, i));
          }
          const std::size_t h = static_cast<std::size_t>(s - ctx);
          p.sq[h] += sq;
          p.nll[h] += nll;
          p.count[h] += 1;
        }
      }
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, threads)), chunks.size());
  if (workers <= 1) {
    for (std::size_t c = 0; c < chunks.size(); ++c) work(c);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t c = w; c < chunks.size(); c += workers) work(c);
      });
    }
    for (std::thread& t : pool) t.join();
  }
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  for (const RolloutSums& p : parts) {
    for (std::size_t h = 0; h < sums.sq.size(); ++h) {
      sums.sq[h] += p.sq[h];
      sums.nll[h] += p.nll[h];
      sums.count[h] += p.count[h];
    }
  }
  for (double v : sums.nll) {
    if (!std::isfinite(v)) throw NumericError("non-finite rollout likelihood", 0);
  }
  return sums;
}

std::vector<HorizonRow> horizon_rows(const RolloutSums& sums, int obs_dim, const std::vector<long>& horizons,
                                     std::vector<std::string>* warnings) {
  std::vector<HorizonRow> rows;
  const long available = static_cast<long>(sums.sq.size());
  for (long h : horizons) {
    long used = h;
    if (h > available) {
      used = available;
      if (warnings != nullptr) {
        warnings->push_back("horizon " + std::to_string(h) + " exceeds the " + std::to_string(available) +
                            " predicted steps; truncated");
      }
    }
    double sq = 0.0, nll = 0.0;
    long n = 0;
    for (long i = 0; i < used; ++i) {
      sq += sums.sq[static_cast<std::size_t>(i)];
      nll += sums.nll[static_cast<std::size_t>(i)];
      n += sums.count[static_cast<std::size_t>(i)];
    }
    HorizonRow row;
    row.horizon = h;
    row.rmse = n > 0 ? std::sqrt(sq / static_cast<double>(n * obs_dim)) : std::nan("");
    row.nll = n > 0 ? nll / static_cast<double>(n) : std::nan("");
    rows.push_back(row);
  }
  return rows;
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

void write_metric(std::ofstream& out, int epoch, const char* split, double nll, double rmse,
                  std::optional<double> wallclock) {
  json rec{{"epoch", epoch},
           {"split", split},
           {"nll", number_or_null(nll)},
           {"rmse", number_or_null(rmse)},
           {"wallclock", wallclock ? json(*wallclock) : json(nullptr)}};
  out << rec.dump() << '\n';
  out.flush();
}

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void rng_from_string(std::mt19937_64& rng, const std::string& s) {
  std::istringstream is(s);
  is >> rng;
  if (!is) throw DataError("checkpoint: malformed RNG state");
}

}  // namespace

Mts3Model model_from_checkpoint(const Checkpoint& ckpt) {
  Mts3Config mc = ckpt.config.model;
  mc.obs_dim = ckpt.obs_dim;
  mc.act_dim = ckpt.act_dim;
  Mts3Model model(mc);
  restore_params(ckpt.params, model.params());
  return model;
}

TrainResult train(const TrajectoryBatch& data, const RunConfig& cfg_in, const std::string& out_dir,
                  const TrainOptions& opt) {
  data.validate();
  RunConfig cfg = cfg_in;
  cfg.model.obs_dim = data.obs_dim;
  cfg.model.act_dim = data.act_dim;
  cfg.model.seed = cfg.seed;
  cfg.train.validate();
  const TrainConfig& tc = cfg.train;
  const bool deterministic = tc.threads == 1;
  const int threads = resolve_threads(tc.threads);
  const long ctx = cfg.context_len();
  if (data.steps < cfg.model.window) throw DataError("train: trajectories shorter than one window");

  long n_val = static_cast<long>(std::floor(tc.val_fraction * static_cast<double>(data.batch)));
  if (tc.val_fraction > 0.0 && n_val == 0 && data.batch > 1) n_val = 1;
  const long n_train = data.batch - n_val;
  if (n_train < 1) throw DataError("train: no training trajectories");
  const TrajectoryBatch train_raw = data.slice(0, n_train);
  const NormStats norm = compute_stats(train_raw);
  const TrajectoryBatch train_set = normalize(train_raw, norm);
  const TrajectoryBatch val_set = n_val > 0 ? normalize(data.slice(n_train, n_val), norm) : train_set;

  std::filesystem::create_directories(out_dir);
  TrainResult result;
  result.best_checkpoint = (std::filesystem::path(out_dir) / "best.ckpt").string();
  result.last_checkpoint = (std::filesystem::path(out_dir) / "last.ckpt").string();
  result.metrics_log = (std::filesystem::path(out_dir) / "metrics.jsonl").string();

  Mts3Model model(cfg.model);
  nn::Adam adam(model.params(), nn::AdamConfig{tc.lr, 0.9, 0.999, 1e-8});
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 0x7a11u};
  std::mt19937_64 rng(seq);
  int start_epoch = 0;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int bad_epochs = 0;

  if (opt.resume && std::filesystem::exists(result.last_checkpoint)) {
    const Checkpoint ck = load_checkpoint(result.last_checkpoint);
    restore_params(ck.params, model.params());
    if (!ck.adam_m.empty()) {
      adam.first_moments() = ck.adam_m;
      adam.second_moments() = ck.adam_v;
      adam.set_steps(ck.adam_steps);
    }
    rng_from_string(rng, ck.rng_state);
    start_epoch = ck.epoch;
    best_val = ck.best_val;
    best_epoch = ck.best_epoch;
    bad_epochs = ck.bad_epochs;
  }

  std::ofstream metrics(result.metrics_log, opt.resume ? std::ios::app : std::ios::trunc);
  if (!metrics) throw DataError("cannot open metrics log '" + result.metrics_log + "'");

  auto snapshot = [&](int epochs_done) {
    Checkpoint ck;
    ck.config = cfg;
    ck.obs_dim = data.obs_dim;
    ck.act_dim = data.act_dim;
    ck.params = model.params();
    ck.adam_m = adam.first_moments();
    ck.adam_v = adam.second_moments();
    ck.adam_steps = adam.steps();
    ck.rng_state = rng_to_string(rng);
    ck.epoch = epochs_done;
    ck.best_val = best_val;
    ck.best_epoch = best_epoch;
    ck.bad_epochs = bad_epochs;
    ck.norm = norm;
    return ck;
  };

  const auto t0 = std::chrono::steady_clock::now();
  auto wallclock = [&]() -> std::optional<double> {
    if (deterministic) return std::nullopt;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  std::vector<long> order(static_cast<std::size_t>(n_train));
  const bool impute = !cfg.model.variants.no_imputation;
  const long batches_total = (n_train + tc.batch_size - 1) / tc.batch_size;
  const long batches = tc.batches_per_epoch > 0 ? std::min<long>(tc.batches_per_epoch, batches_total) : batches_total;

  int epoch = start_epoch;
  for (; epoch < tc.epochs; ++epoch) {
    if (bad_epochs >= tc.patience) break;
    // Each epoch's order depends only on the RNG state, so a resumed run replays it exactly.
    for (long i = 0; i < n_train; ++i) order[static_cast<std::size_t>(i)] = i;
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0, sq_sum = 0.0;
    long rows = 0;
    for (long bi = 0; bi < batches; ++bi) {
      const long first = bi * tc.batch_size;
      const long last = std::min(n_train, first + tc.batch_size);
      std::vector<long> idx(order.begin() + first, order.begin() + last);
      std::vector<std::vector<std::uint8_t>> masks;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (impute) {
          masks.push_back(sample_imputation_mask(train_set.steps, cfg.model.window, ctx, tc.mask_step_fraction,
                                                 tc.mask_window_fraction, rng));
        } else {
          masks.emplace_back(static_cast<std::size_t>(train_set.steps), 1);
        }
      }
      const SequenceBatch sb = make_sequence_batch(train_set, idx, cfg.model.window, &masks);
      ShardOutput out;
      try {
        out = batch_gradients(model, sb, norm, threads);
      } catch (const NumericError& e) {
        throw NumericError(std::string("training aborted in epoch ") + std::to_string(epoch) + ", batch " +
                               std::to_string(bi) + ": " + e.what(),
                           bi);
      }
      nn::clip_gradients(out.grads, tc.clip_norm);
      try {
        adam.step(model.params(), out.grads);
      } catch (const NumericError& e) {
        throw NumericError(std::string("training aborted in batch ") + std::to_string(bi) + ": " + e.what(), bi);
      }
      model.limit_transition_radius();
      loss_sum += out.loss * static_cast<double>(out.rows);
      sq_sum += out.sq_err;
      rows += out.rows;
    }
    const double train_nll = loss_sum / static_cast<double>(rows);
    const double train_rmse = std::sqrt(sq_sum / static_cast<double>(rows * data.obs_dim));
    write_metric(metrics, epoch + 1, "train", train_nll, train_rmse, wallclock());

    const RolloutSums vs = rollout_sums(model, norm, val_set, ctx, threads);
    double vsq = 0.0, vnll = 0.0;
    long vn = 0;
    for (std::size_t h = 0; h < vs.sq.size(); ++h) {
      vsq += vs.sq[h];
      vnll += vs.nll[h];
      vn += vs.count[h];
    }
    const double val_nll = vn > 0 ? vnll / static_cast<double>(vn) : train_nll;
    const double val_rmse = vn > 0 ? std::sqrt(vsq / static_cast<double>(vn * data.obs_dim)) : train_rmse;
    write_metric(metrics, epoch + 1, "val", val_nll, val_rmse, wallclock());
    if (opt.log != nullptr) {
      *opt.log << "epoch " << epoch + 1 << "  train nll " << train_nll << "  val nll " << val_nll << "  val rmse "
               << val_rmse << '\n';
    }

    if (val_nll < best_val) {
      best_val = val_nll;
      best_epoch = epoch + 1;
      bad_epochs = 0;
      save_checkpoint(result.best_checkpoint, snapshot(epoch + 1));
    } else {
      ++bad_epochs;
    }
    save_checkpoint(result.last_checkpoint, snapshot(epoch + 1));
  }
  if (!std::filesystem::exists(result.best_checkpoint)) {
    save_checkpoint(result.best_checkpoint, snapshot(epoch));
  }
  if (!std::filesystem::exists(result.last_checkpoint)) {
    save_checkpoint(result.last_checkpoint, snapshot(epoch));
  }
  result.epochs_completed = epoch;
  result.best_epoch = best_epoch;
  result.best_val_nll = best_val;
  return result;
}

std::vector<HorizonRow> evaluate(const Mts3Model& model, const NormStats& norm, const TrajectoryBatch& data,
                                 long context_steps, const std::vector<long>& horizons,
                                 std::vector<std::string>* warnings) {
  data.validate();
  if (context_steps < 1) throw std::invalid_argument("evaluate: context must be at least one step");
  const TrajectoryBatch normalized = normalize(data, norm);
  const RolloutSums sums = rollout_sums(model, norm, normalized, context_steps, 1);
  return horizon_rows(sums, data.obs_dim, horizons, warnings);
}

std::vector<HorizonRow> evaluate_checkpoint(const std::string& ckpt_path, const TrajectoryBatch& data,
                                            const std::vector<long>& horizons, const EvalOptions& opt) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  if (ck.obs_dim != data.obs_dim || ck.act_dim != data.act_dim) {
    throw DataError("evaluate: dataset dimensions do not match the checkpoint");
  }
  const Mts3Model model = model_from_checkpoint(ck);
  const long ctx = opt.context_steps >= 0 ? opt.context_steps : ck.config.context_len();
  return evaluate(model, ck.norm, data, ctx, horizons, opt.warnings);
}

std::vector<AblationRow> run_ablations(const TrajectoryBatch& train_data, const TrajectoryBatch& test_data,
                                       const RunConfig& cfg, const std::string& out_dir, const TrainOptions& opt) {
  std::vector<AblationRow> rows;
  const long ctx = cfg.context_len();
  auto run = [&](RunConfig rc, const std::string& name) {
    rc.train.context_steps = ctx;
    const std::string dir = (std::filesystem::path(out_dir) / name).string();
    if (opt.log != nullptr) *opt.log << "== " << name << '\n';
    const TrainResult tr = train(train_data, rc, dir, opt);
    EvalOptions eo;
    eo.context_steps = ctx;
    const std::vector<HorizonRow> hr = evaluate_checkpoint(tr.best_checkpoint, test_data, rc.train.horizons, eo);
    write_horizon_csv((std::filesystem::path(dir) / "eval.csv").string(), name, hr);
    for (const HorizonRow& h : hr) rows.push_back({name, rc.model.window, h.horizon, h.rmse, h.nll});
  };
  for (const std::string& v : cfg.train.variants) {
    RunConfig rc = cfg;
    apply_variant(rc, v);
    run(rc, v);
  }
  for (int h : cfg.train.h_sweep) {
    RunConfig rc = cfg;
    apply_variant(rc, "full");
    rc.model.window = h;
    run(rc, "H" + std::to_string(h));
  }
  write_ablation_csv((std::filesystem::path(out_dir) / "comparison.csv").string(), rows);
  return rows;
}

namespace {

std::string csv_number(double v) {
  if (!std::isfinite(v)) return "nan";
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

void write_horizon_csv(const std::string& path, const std::string& variant, const std::vector<HorizonRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "variant,horizon,rmse,nll\n";
  for (const HorizonRow& r : rows) {
    out << variant << ',' << r.horizon << ',' << csv_number(r.rmse) << ',' << csv_number(r.nll) << '\n';
  }
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "variant,window,horizon,rmse,nll\n";
  for (const AblationRow& r : rows) {
    out << r.variant << ',' << r.window << ',' << r.horizon << ',' << csv_number(r.rmse) << ',' << csv_number(r.nll)
        << '\n';
  }
}

}  // namespace mts3
