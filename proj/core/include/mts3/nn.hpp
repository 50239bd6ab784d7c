#pragma once

#include <random>
#include <string>
#include <vector>

#include "mts3/autodiff.hpp"

namespace mts3::nn {

using ad::GradientSet;
using ad::Matrix;
using ad::ParameterStore;
using ad::Tape;
using ad::Var;

enum class Activation { kRelu, kElu };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

/// Fully connected network: hidden layers use `activation`, the output layer is linear.
/// Weights are stored (in, out) so that y = x W + b for row-major batches x.
class Mlp {
 public:
  Mlp() = default;

  /// Registers "<name>.w<i>" and "<name>.b<i>" in `store`; Xavier-uniform weights, zero biases.
  static Mlp create(ParameterStore& store, const std::string& name, const std::vector<int>& sizes,
                    std::mt19937_64& rng, Activation activation = Activation::kRelu);

  Var forward(Tape& tape, const ParameterStore& store, const Var& x) const;

  int input_size() const { return sizes_.empty() ? 0 : sizes_.front(); }
  int output_size() const { return sizes_.empty() ? 0 : sizes_.back(); }
  const std::vector<int>& weight_ids() const { return weights_; }
  const std::vector<int>& bias_ids() const { return biases_; }

 private:
  std::vector<int> sizes_;
  std::vector<int> weights_;
  std::vector<int> biases_;
  Activation activation_ = Activation::kRelu;
};

double global_norm(const GradientSet& grads);

/// Rescales all gradients jointly so their global L2 norm is at most `max_norm`.
/// Returns the factor applied (1.0 when already within bounds or all zero).
double clip_gradients(GradientSet& grads, double max_norm);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  Adam(const ParameterStore& store, AdamConfig config);

  /// Bias-corrected Adam update. Throws NumericError (index = parameter) on a non-finite gradient,
  /// leaving the parameters untouched.
  void step(ParameterStore& store, const GradientSet& grads);

  long steps() const { return t_; }
  const AdamConfig& config() const { return config_; }
  std::vector<Matrix>& first_moments() { return m_; }
  std::vector<Matrix>& second_moments() { return v_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }
  void set_steps(long t) { t_ = t; }

 private:
  AdamConfig config_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long t_ = 0;
};

}  // namespace mts3::nn
