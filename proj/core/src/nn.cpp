#include "mts3/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "mts3/errors.hpp"

namespace mts3::nn {

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "elu") return Activation::kElu;
  throw std::invalid_argument("unknown activation: " + name);
}

std::string to_string(Activation a) { return a == Activation::kRelu ? "relu" : "elu"; }

Mlp Mlp::create(ParameterStore& store, const std::string& name, const std::vector<int>& sizes, std::mt19937_64& rng,
                Activation activation) {
  if (sizes.size() < 2) throw std::invalid_argument("Mlp needs at least input and output sizes");
  Mlp mlp;
  mlp.sizes_ = sizes;
  mlp.activation_ = activation;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const int in = sizes[i], out = sizes[i + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix w(in, out);
    // Column-major fill order is part of the reproducibility contract.
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = u(rng);
    mlp.weights_.push_back(store.add(name + ".w" + std::to_string(i), std::move(w)));
    mlp.biases_.push_back(store.add(name + ".b" + std::to_string(i), Matrix::Zero(1, out)));
  }
  return mlp;
}

Var Mlp::forward(Tape& tape, const ParameterStore& store, const Var& x) const {
  if (x.cols() != input_size()) {
    throw ShapeError("Mlp input width " + std::to_string(x.cols()) + ", expected " + std::to_string(input_size()));
  }
  Var h = x;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    h = ad::matmul(h, tape.param(store, weights_[i])) + tape.param(store, biases_[i]);
    if (i + 1 < weights_.size()) h = activation_ == Activation::kRelu ? ad::relu(h) : ad::elu(h);
  }
  return h;
}

double global_norm(const GradientSet& grads) {
  double sq = 0.0;
  for (const Matrix& g : grads) {
    if (g.size() != 0) sq += g.squaredNorm();
  }
  return std::sqrt(sq);
}

double clip_gradients(GradientSet& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_gradients: max_norm must be positive");
  const double norm = global_norm(grads);
  if (!(norm > max_norm)) return 1.0;
  const double factor = max_norm / norm;
  for (Matrix& g : grads) {
    if (g.size() != 0) g *= factor;
  }
  return factor;
}

Adam::Adam(const ParameterStore& store, AdamConfig config) : config_(config) {
  for (const auto& p : store) {
    m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  }
}

void Adam::step(ParameterStore& store, const GradientSet& grads) {
  if (static_cast<int>(grads.size()) != store.size() || static_cast<int>(m_.size()) != store.size()) {
    throw ShapeError("Adam::step: gradient/parameter count mismatch");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].size() != 0 && !grads[i].allFinite()) {
      throw NumericError("non-finite gradient for parameter '" + store[static_cast<int>(i)].name + "'",
                         static_cast<long>(i));
    }
  }
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    Matrix& value = store[static_cast<int>(i)].value;
    if (grads[i].size() == 0) {
      m_[i] *= b1;
      v_[i] *= b2;
    } else {
      m_[i] = b1 * m_[i] + (1.0 - b1) * grads[i];
      v_[i] = b2 * v_[i] + (1.0 - b2) * grads[i].cwiseProduct(grads[i]);
    }
    const auto m_hat = m_[i].array() / c1;
    const auto v_hat = v_[i].array() / c2;
    value.array() -= config_.lr * m_hat / (v_hat.sqrt() + config_.eps);
  }
}

}  // namespace mts3::nn
