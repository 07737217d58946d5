#include "diffcal/nn.hpp"

#include <cmath>

#include "diffcal/errors.hpp"

namespace diffcal::nn {

DenseLayer::DenseLayer(int in, int out, Rng& rng) {
  if (in <= 0 || out <= 0) throw DimensionError("dense layer sizes must be positive");
  const double limit = std::sqrt(6.0 / (in + out));
  weight.resize(out, in);
  // column-major fill order matches the seeded draw order
  for (Eigen::Index c = 0; c < weight.cols(); ++c)
    for (Eigen::Index r = 0; r < weight.rows(); ++r)
      weight(r, c) = static_cast<float>(rng.uniform(-limit, limit));
  bias = Eigen::VectorXf::Zero(out);
  grad_w = Eigen::MatrixXf::Zero(out, in);
  grad_b = Eigen::VectorXf::Zero(out);
  m_w = Eigen::MatrixXf::Zero(out, in);
  v_w = Eigen::MatrixXf::Zero(out, in);
  m_b = Eigen::VectorXf::Zero(out);
  v_b = Eigen::VectorXf::Zero(out);
}

Eigen::MatrixXf DenseLayer::forward(const Eigen::MatrixXf& x) {
  if (x.rows() != weight.cols())
    throw DimensionError("dense layer input has wrong feature count");
  input = x;
  Eigen::MatrixXf y = weight * x;
  y.colwise() += bias;
  return y;
}

Eigen::MatrixXf DenseLayer::backward(const Eigen::MatrixXf& grad_out) {
  grad_w = grad_out * input.transpose();
  grad_b = grad_out.rowwise().sum();
  return weight.transpose() * grad_out;
}

void DenseLayer::adam_step(float lr, int t) {
  constexpr float b1 = 0.9f, b2 = 0.999f, eps = 1e-8f;
  const float bc1 = 1.0f - std::pow(b1, static_cast<float>(t));
  const float bc2 = 1.0f - std::pow(b2, static_cast<float>(t));
  m_w = b1 * m_w + (1.0f - b1) * grad_w;
  v_w = b2 * v_w + (1.0f - b2) * grad_w.array().square().matrix();
  weight.array() -=
      lr * (m_w.array() / bc1) / ((v_w.array() / bc2).sqrt() + eps);
  m_b = b1 * m_b + (1.0f - b1) * grad_b;
  v_b = b2 * v_b + (1.0f - b2) * grad_b.array().square().matrix();
  bias.array() -= lr * (m_b.array() / bc1) / ((v_b.array() / bc2).sqrt() + eps);
}

Eigen::MatrixXf relu(const Eigen::MatrixXf& x) {
  return x.array().max(0.0f).matrix();
}

Eigen::MatrixXf relu_backward(const Eigen::MatrixXf& pre,
                              const Eigen::MatrixXf& grad) {
  return (pre.array() > 0.0f).select(grad, Eigen::MatrixXf::Zero(grad.rows(), grad.cols()));
}

Eigen::MatrixXf sigmoid(const Eigen::MatrixXf& x) {
  return (1.0f / (1.0f + (-x.array()).exp())).matrix();
}

Eigen::MatrixXf dropout_mask(Eigen::Index rows, Eigen::Index cols, float rate,
                             Rng& rng) {
  if (rate < 0.0f || rate >= 1.0f) throw ConfigError("dropout rate must lie in [0, 1)");
  Eigen::MatrixXf mask(rows, cols);
  const float keep = 1.0f - rate;
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r)
      mask(r, c) = rng.uniform() < rate ? 0.0f : 1.0f / keep;
  return mask;
}

}  // namespace diffcal::nn
