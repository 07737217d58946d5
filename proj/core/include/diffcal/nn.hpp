#pragma once

#include <Eigen/Dense>

#include "diffcal/rng.hpp"

namespace diffcal::nn {

// Activations are (features x batch) matrices. All arithmetic is
// single-threaded float with a fixed evaluation order, so repeated runs
// from the same seed produce identical bytes.

struct DenseLayer {
  Eigen::MatrixXf weight;  // out x in
  Eigen::VectorXf bias;
  Eigen::MatrixXf grad_w;
  Eigen::VectorXf grad_b;
  Eigen::MatrixXf m_w, v_w;  // Adam moments
  Eigen::VectorXf m_b, v_b;
  Eigen::MatrixXf input;  // cached by forward for the backward pass

  DenseLayer(int in, int out, Rng& rng);

  Eigen::MatrixXf forward(const Eigen::MatrixXf& x);
  // Fills grad_w / grad_b and returns the gradient w.r.t. the input.
  Eigen::MatrixXf backward(const Eigen::MatrixXf& grad_out);
  void adam_step(float lr, int t);
};

Eigen::MatrixXf relu(const Eigen::MatrixXf& x);
// grad flows where the pre-activation was positive
Eigen::MatrixXf relu_backward(const Eigen::MatrixXf& pre,
                              const Eigen::MatrixXf& grad);
Eigen::MatrixXf sigmoid(const Eigen::MatrixXf& x);
// Inverted dropout: entries are 0 or 1/(1-rate). rate = 0 gives all ones.
Eigen::MatrixXf dropout_mask(Eigen::Index rows, Eigen::Index cols, float rate,
                             Rng& rng);

}  // namespace diffcal::nn
