#include "mts3/datagen.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Eigenvalues>

#include "mts3/errors.hpp"

namespace mts3 {

namespace {

std::mt19937_64 trajectory_rng(std::uint64_t seed, long index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), 0x5eedu};
  return std::mt19937_64(seq);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

double normal(std::mt19937_64& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

template <class Draw>
RegimeSchedule draw_schedule(long steps, long period, double persistence, std::mt19937_64& rng, Draw draw) {
  RegimeSchedule schedule;
  if (period < 1) period = steps;
  for (long start = 0; start < steps; start += period) {
    if (!schedule.empty() && uniform(rng, 0.0, 1.0) < persistence) {
      schedule.push_back({start, schedule.back().params});
    } else {
      schedule.push_back({start, draw()});
    }
  }
  return schedule;
}

const RegimeSegment& segment_at(const RegimeSchedule& s, long t) {
  std::size_t i = 0;
  while (i + 1 < s.size() && s[i + 1].start <= t) ++i;
  return s[i];
}

}  // namespace

TrajectoryBatch::TrajectoryBatch(long b, long t, int d_o, int d_a)
    : batch(b),
      steps(t),
      obs_dim(d_o),
      act_dim(d_a),
      obs(static_cast<std::size_t>(b * t * d_o), 0.0),
      acts(static_cast<std::size_t>(b * t * d_a), 0.0),
      valid(static_cast<std::size_t>(b * t), 1) {}

void TrajectoryBatch::validate() const {
  if (batch < 0 || steps < 0 || obs_dim < 1 || act_dim < 0) throw DataError("trajectory batch: invalid header");
  if (obs.size() != static_cast<std::size_t>(batch * steps * obs_dim) ||
      acts.size() != static_cast<std::size_t>(batch * steps * act_dim) ||
      valid.size() != static_cast<std::size_t>(batch * steps)) {
    throw DataError("trajectory batch: array sizes do not match the header");
  }
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (!std::isfinite(obs[i])) throw DataError("trajectory batch: non-finite observation at " + std::to_string(i));
  }
  for (std::size_t i = 0; i < acts.size(); ++i) {
    if (!std::isfinite(acts[i])) throw DataError("trajectory batch: non-finite action at " + std::to_string(i));
  }
  for (std::uint8_t f : valid) {
    if (f > 1) throw DataError("trajectory batch: flags must be 0 or 1");
  }
  if (!meta.regimes.empty() && meta.regimes.size() != static_cast<std::size_t>(batch)) {
    throw DataError("trajectory batch: one regime schedule per trajectory expected");
  }
  for (const RegimeSchedule& s : meta.regimes) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      if ((i == 0 && s[i].start != 0) || (i > 0 && s[i].start <= s[i - 1].start)) {
        throw DataError("trajectory batch: regime starts must increase from 0");
      }
    }
  }
}

TrajectoryBatch TrajectoryBatch::slice(long first, long count) const {
  std::vector<long> idx;
  for (long i = 0; i < count; ++i) idx.push_back(first + i);
  return select(idx);
}

TrajectoryBatch TrajectoryBatch::select(const std::vector<long>& indices) const {
  TrajectoryBatch out(static_cast<long>(indices.size()), steps, obs_dim, act_dim);
  out.meta = meta;
  out.meta.regimes.clear();
  const std::size_t so = static_cast<std::size_t>(steps * obs_dim), sa = static_cast<std::size_t>(steps * act_dim);
  const std::size_t sv = static_cast<std::size_t>(steps);
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const long i = indices[j];
    if (i < 0 || i >= batch) throw std::out_of_range("trajectory index " + std::to_string(i));
    const std::size_t ui = static_cast<std::size_t>(i);
    std::copy_n(obs.begin() + static_cast<std::ptrdiff_t>(ui * so), so, out.obs.begin() + static_cast<std::ptrdiff_t>(j * so));
    std::copy_n(acts.begin() + static_cast<std::ptrdiff_t>(ui * sa), sa, out.acts.begin() + static_cast<std::ptrdiff_t>(j * sa));
    std::copy_n(valid.begin() + static_cast<std::ptrdiff_t>(ui * sv), sv, out.valid.begin() + static_cast<std::ptrdiff_t>(j * sv));
    if (!meta.regimes.empty()) out.meta.regimes.push_back(meta.regimes[ui]);
  }
  return out;
}

Eigen::Matrix4d springmass_transition(double k1, double k2, double c1, double c2, double m1, double m2, double dt) {
  // Continuous accelerations a = K x + D v.
  Eigen::Matrix2d kmat, dmat;
  kmat << -(k1 + k2) / m1, k2 / m1, k2 / m2, -k2 / m2;
  dmat << -(c1 + c2) / m1, c2 / m1, c2 / m2, -c2 / m2;
  // v' = v + dt (K x + D v);  x' = x + dt v'.
  Eigen::Matrix4d f;
  f.topLeftCorner<2, 2>() = Eigen::Matrix2d::Identity() + dt * dt * kmat;
  f.topRightCorner<2, 2>() = dt * (Eigen::Matrix2d::Identity() + dt * dmat);
  f.bottomLeftCorner<2, 2>() = dt * kmat;
  f.bottomRightCorner<2, 2>() = Eigen::Matrix2d::Identity() + dt * dmat;
  return f;
}

TrajectoryBatch gen_springmass(long batch, long steps, double dt, std::uint64_t seed, const SpringMassOptions& opt) {
  if (batch < 0 || steps < 0 || !(dt > 0.0)) throw std::invalid_argument("gen_springmass: invalid sizes or dt");
  TrajectoryBatch out(batch, steps, 2, 2);
  out.meta.dt = dt;
  out.meta.generator = "springmass";
  out.meta.seed = seed;
  out.meta.param_names = {"k1", "k2", "c1", "c2", "payload"};

  for (long b = 0; b < batch; ++b) {
    std::mt19937_64 rng = trajectory_rng(seed, b);
    auto draw = [&]() {
      for (;;) {
        std::vector<double> p{uniform(rng, opt.k_min, opt.k_max), uniform(rng, opt.k_min, opt.k_max),
                              uniform(rng, opt.c_min, opt.c_max), uniform(rng, opt.c_min, opt.c_max),
                              uniform(rng, 0.0, opt.payload_max)};
        const Eigen::Matrix4d f = springmass_transition(p[0], p[1], p[2], p[3], opt.mass1, opt.mass2 + p[4], dt);
        const double radius = f.eigenvalues().cwiseAbs().maxCoeff();
        if (radius < 1.0 - 1e-9) return p;
      }
    };
    out.meta.regimes.push_back(draw_schedule(steps, opt.regime_period, opt.persistence, rng, draw));
    const RegimeSchedule& schedule = out.meta.regimes.back();

    Eigen::Vector2d x(opt.init_scale * normal(rng), opt.init_scale * normal(rng));
    Eigen::Vector2d v = Eigen::Vector2d::Zero();
    Eigen::Vector2d force = Eigen::Vector2d::Zero();
    const double innov = std::sqrt(1.0 - opt.force_smoothing * opt.force_smoothing);
    for (long t = 0; t < steps; ++t) {
      for (int i = 0; i < 2; ++i) force[i] = opt.force_smoothing * force[i] + innov * opt.force_scale * normal(rng);
      for (int i = 0; i < 2; ++i) out.a(b, t, i) = force[i];
      for (int i = 0; i < 2; ++i) out.o(b, t, i) = x[i] + opt.obs_noise * normal(rng);

      const std::vector<double>& p = segment_at(schedule, t).params;
      const double k1 = p[0], k2 = p[1], c1 = p[2], c2 = p[3], m1 = opt.mass1, m2 = opt.mass2 + p[4];
      const double f1 = force[0] - k1 * x[0] + k2 * (x[1] - x[0]) - c1 * v[0] + c2 * (v[1] - v[0]);
      const double f2 = force[1] - k2 * (x[1] - x[0]) - c2 * (v[1] - v[0]) - p[4] * opt.load_accel;
      v[0] += dt * f1 / m1;
      v[1] += dt * f2 / m2;
      x += dt * v;
    }
  }
  out.validate();
  return out;
}

double TerrainField::height(double x, double y) const {
  double h = 0.0;
  for (Eigen::Index i = 0; i < waves.rows(); ++i) h += waves(i, 0) * std::sin(waves(i, 1) * x + waves(i, 2) * y + waves(i, 3));
  return h;
}

Eigen::Vector2d TerrainField::gradient(double x, double y) const {
  Eigen::Vector2d g = Eigen::Vector2d::Zero();
  for (Eigen::Index i = 0; i < waves.rows(); ++i) {
    const double c = waves(i, 0) * std::cos(waves(i, 1) * x + waves(i, 2) * y + waves(i, 3));
    g += c * Eigen::Vector2d(waves(i, 1), waves(i, 2));
  }
  return g;
}

Eigen::Vector2d roll_pitch(const Eigen::Vector2d& g, double yaw) {
  const Eigen::Vector2d fwd(std::cos(yaw), std::sin(yaw));
  const Eigen::Vector2d left(-std::sin(yaw), std::cos(yaw));
  // Pitch positive when climbing, roll positive when the left side is higher.
  return {std::atan(g.dot(left)), std::atan(g.dot(fwd))};
}

TrajectoryBatch gen_sine_terrain(long batch, long steps, double dt, std::uint64_t seed, const TerrainOptions& opt) {
  if (batch < 0 || steps < 0 || !(dt > 0.0)) throw std::invalid_argument("gen_sine_terrain: invalid sizes or dt");
  TrajectoryBatch out(batch, steps, 9, 2);
  out.meta.dt = dt;
  out.meta.generator = "terrain";
  out.meta.seed = seed;
  out.meta.param_names = {"traction"};

  for (long b = 0; b < batch; ++b) {
    std::mt19937_64 rng = trajectory_rng(seed, b);
    TerrainField field;
    field.waves.resize(opt.waves, 4);
    for (int i = 0; i < opt.waves; ++i) {
      const double dir = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const double k = uniform(rng, 0.2, 1.0) * opt.wavenumber_max;
      field.waves.row(i) << uniform(rng, 0.0, opt.amp_max), k * std::cos(dir), k * std::sin(dir),
          uniform(rng, 0.0, 2.0 * std::numbers::pi);
    }
    auto draw = [&]() { return std::vector<double>{uniform(rng, opt.traction_min, opt.traction_max)}; };
    out.meta.regimes.push_back(draw_schedule(steps, opt.regime_period, opt.persistence, rng, draw));
    const RegimeSchedule& schedule = out.meta.regimes.back();

    double px = 0.0, py = 0.0, yaw = uniform(rng, -std::numbers::pi, std::numbers::pi);
    double cmd_v = 0.0, cmd_w = 0.0;
    const double innov = std::sqrt(1.0 - opt.command_smoothing * opt.command_smoothing);
    for (long t = 0; t < steps; ++t) {
      cmd_v = opt.command_smoothing * cmd_v + innov * normal(rng);
      cmd_w = opt.command_smoothing * cmd_w + innov * normal(rng);
      const double v = opt.speed_max * std::tanh(cmd_v);
      const double w = opt.turn_max * std::tanh(cmd_w);
      out.a(b, t, 0) = v;
      out.a(b, t, 1) = w;

      const Eigen::Vector2d g = field.gradient(px, py);
      const Eigen::Vector2d rp = roll_pitch(g, yaw);
      const double obs[9] = {px,
                             py,
                             field.height(px, py),
                             std::cos(rp[0]),
                             std::sin(rp[0]),
                             std::cos(rp[1]),
                             std::sin(rp[1]),
                             std::cos(yaw),
                             std::sin(yaw)};
      for (int i = 0; i < 9; ++i) out.o(b, t, i) = obs[i] + opt.obs_noise * normal(rng);

      // Uphill motion is slowed in proportion to the slope; traction sets the sensitivity.
      const double traction = segment_at(schedule, t).params[0];
      const double slope = g.dot(Eigen::Vector2d(std::cos(yaw), std::sin(yaw)));
      const double speed = v * std::max(0.0, 1.0 - slope / traction);
      px += dt * speed * std::cos(yaw);
      py += dt * speed * std::sin(yaw);
      yaw += dt * w;
    }
  }
  out.validate();
  return out;
}

NormStats compute_stats(const TrajectoryBatch& batch) {
  NormStats s;
  auto stats = [&](const std::vector<double>& data, int dim, std::vector<double>& mean, std::vector<double>& sd) {
    mean.assign(static_cast<std::size_t>(dim), 0.0);
    sd.assign(static_cast<std::size_t>(dim), 1.0);
    std::vector<double> m2(static_cast<std::size_t>(dim), 0.0);
    long n = 0;
    for (long r = 0; r < batch.batch * batch.steps; ++r) {
      if (!batch.valid[static_cast<std::size_t>(r)]) continue;
      ++n;
      for (int i = 0; i < dim; ++i) {
        const double x = data[static_cast<std::size_t>(r * dim + i)];
        const double delta = x - mean[static_cast<std::size_t>(i)];
        mean[static_cast<std::size_t>(i)] += delta / static_cast<double>(n);
        m2[static_cast<std::size_t>(i)] += delta * (x - mean[static_cast<std::size_t>(i)]);
      }
    }
    for (int i = 0; i < dim; ++i) {
      const double var = n > 0 ? m2[static_cast<std::size_t>(i)] / static_cast<double>(n) : 0.0;
      sd[static_cast<std::size_t>(i)] = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
  };
  stats(batch.obs, batch.obs_dim, s.obs_mean, s.obs_std);
  stats(batch.acts, batch.act_dim, s.act_mean, s.act_std);
  return s;
}

namespace {

TrajectoryBatch transform(const TrajectoryBatch& batch, const NormStats& s, bool forward) {
  if (s.obs_mean.size() != static_cast<std::size_t>(batch.obs_dim) ||
      s.act_mean.size() != static_cast<std::size_t>(batch.act_dim)) {
    throw DataError("normalization stats do not match the data dimensions");
  }
  TrajectoryBatch out = batch;
  auto apply = [&](std::vector<double>& data, int dim, const std::vector<double>& mean, const std::vector<double>& sd) {
    for (std::size_t r = 0; r < data.size(); ++r) {
      const std::size_t i = r % static_cast<std::size_t>(dim);
      data[r] = forward ? (data[r] - mean[i]) / sd[i] : data[r] * sd[i] + mean[i];
    }
  };
  apply(out.obs, batch.obs_dim, s.obs_mean, s.obs_std);
  if (batch.act_dim > 0) apply(out.acts, batch.act_dim, s.act_mean, s.act_std);
  return out;
}

}  // namespace

TrajectoryBatch normalize(const TrajectoryBatch& batch, const NormStats& stats) { return transform(batch, stats, true); }

TrajectoryBatch denormalize(const TrajectoryBatch& batch, const NormStats& stats) {
  return transform(batch, stats, false);
}

void denormalize_obs(Eigen::MatrixXd& mean, Eigen::MatrixXd* var, const NormStats& stats) {
  if (mean.cols() != static_cast<Eigen::Index>(stats.obs_mean.size())) {
    throw DataError("denormalize_obs: dimension mismatch");
  }
  for (Eigen::Index i = 0; i < mean.cols(); ++i) {
    const double sd = stats.obs_std[static_cast<std::size_t>(i)];
    mean.col(i) = mean.col(i).array() * sd + stats.obs_mean[static_cast<std::size_t>(i)];
    if (var != nullptr) var->col(i) *= sd * sd;
  }
}

}  // namespace mts3
