#pragma once

// Synthetic non-stationary systems and the in-memory trajectory container.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mts3 {

struct RegimeSegment {
  long start = 0;
  std::vector<double> params;
};

/// Segments with strictly increasing starts, the first at 0.
using RegimeSchedule = std::vector<RegimeSegment>;

struct NormStats {
  std::vector<double> obs_mean, obs_std;
  std::vector<double> act_mean, act_std;
  bool empty() const { return obs_mean.empty(); }
};

struct DatasetMeta {
  double dt = 0.02;
  std::string generator;
  std::uint64_t seed = 0;
  std::vector<std::string> param_names;
  std::vector<RegimeSchedule> regimes;  // one per trajectory (may be empty)
  NormStats normalization;
};

/// obs[b, t, i] at ((b * T) + t) * d_o + i; likewise for actions; valid[b * T + t].
struct TrajectoryBatch {
  long batch = 0;
  long steps = 0;
  int obs_dim = 0;
  int act_dim = 0;
  std::vector<double> obs;
  std::vector<double> acts;
  std::vector<std::uint8_t> valid;
  DatasetMeta meta;

  TrajectoryBatch() = default;
  TrajectoryBatch(long b, long t, int d_o, int d_a);

  double& o(long b, long t, int i) { return obs[static_cast<std::size_t>((b * steps + t) * obs_dim + i)]; }
  double o(long b, long t, int i) const { return obs[static_cast<std::size_t>((b * steps + t) * obs_dim + i)]; }
  double& a(long b, long t, int i) { return acts[static_cast<std::size_t>((b * steps + t) * act_dim + i)]; }
  double a(long b, long t, int i) const { return acts[static_cast<std::size_t>((b * steps + t) * act_dim + i)]; }

  /// Throws DataError on non-finite values, bad flags or inconsistent sizes.
  void validate() const;

  /// Trajectories [first, first + count).
  TrajectoryBatch slice(long first, long count) const;
  /// Trajectories in `indices`, in order.
  TrajectoryBatch select(const std::vector<long>& indices) const;
};

struct SpringMassOptions {
  double mass1 = 1.0;
  double mass2 = 1.0;
  double k_min = 15.0, k_max = 60.0;   // both springs
  double c_min = 0.5, c_max = 3.0;     // both dampers
  double payload_max = 1.5;            // extra mass on body 2, also loaded by `load_accel`
  double load_accel = 9.81;
  double force_scale = 8.0;
  double force_smoothing = 0.97;       // AR(1) coefficient of the force process
  double persistence = 0.8;            // probability a segment keeps the previous regime
  double init_scale = 0.1;
  double obs_noise = 0.005;
  long regime_period = 150;
};

struct TerrainOptions {
  int waves = 4;
  double amp_max = 0.4;
  double wavenumber_max = 1.2;
  double speed_max = 1.0;
  double turn_max = 1.0;
  double command_smoothing = 0.95;
  double traction_min = 0.3, traction_max = 1.0;  // slope slowdown per regime
  double persistence = 0.5;
  long regime_period = 150;
  double obs_noise = 0.0;
};

/// Two coupled masses (wall - k1 - m1 - k2 - m2) with dampers, integrated by semi-implicit Euler.
/// Actions are forces on both masses; observations are the two positions.
/// Regime parameters: k1, k2, c1, c2, payload.
TrajectoryBatch gen_springmass(long batch, long steps, double dt, std::uint64_t seed,
                               const SpringMassOptions& opt = {});

/// Unicycle on a sum-of-sines height field. Actions (v, omega); observations
/// (x, y, z, cos/sin roll, cos/sin pitch, cos/sin yaw). Regime parameter: traction.
TrajectoryBatch gen_sine_terrain(long batch, long steps, double dt, std::uint64_t seed,
                                 const TerrainOptions& opt = {});

/// Height and gradient of the terrain described by `waves` rows (amp, kx, ky, phase).
struct TerrainField {
  Eigen::MatrixXd waves;  // (n, 4)
  double height(double x, double y) const;
  Eigen::Vector2d gradient(double x, double y) const;
};

/// Roll and pitch of a body at heading `yaw` resting on a surface with gradient `g`.
Eigen::Vector2d roll_pitch(const Eigen::Vector2d& g, double yaw);

/// Discrete transition matrix of the semi-implicit Euler step for state (x1, x2, v1, v2).
Eigen::Matrix4d springmass_transition(double k1, double k2, double c1, double c2, double m1, double m2, double dt);

/// Per-dimension mean / std over all valid steps; zero variance maps to std 1.
NormStats compute_stats(const TrajectoryBatch& batch);
TrajectoryBatch normalize(const TrajectoryBatch& batch, const NormStats& stats);
TrajectoryBatch denormalize(const TrajectoryBatch& batch, const NormStats& stats);
/// Observation-space helpers for predictions: value * std + mean, var * std^2.
void denormalize_obs(Eigen::MatrixXd& mean, Eigen::MatrixXd* var, const NormStats& stats);

}  // namespace mts3
