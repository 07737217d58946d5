#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "diffcal/datamodel.hpp"
#include "diffcal/nn.hpp"

namespace diffcal {

struct VaeConfig {
  int latent_dim = 32;
  double kld_weight = 0.5;
  std::vector<int> hidden_dims = {256, 128};
  int epochs = 200;
  double learning_rate = 1e-3;  // full-batch Adam
  int num_generate = 200;
  std::uint64_t seed = 42;

  void validate() const;
};

struct SamplingConfig {
  int num_generate = 200;
  std::uint64_t seed = 42;
};

// Per-question correctness rate over observed (administered, not held-out)
// cells. A fully masked column is an error naming the question.
std::vector<double> empirical_rates(const ResponseMatrix& matrix);

// Independent Bernoulli(C_j) draws per cell, deterministic given the seed.
std::vector<std::vector<std::uint8_t>> sample_students(
    const std::vector<double>& rates, const SamplingConfig& config);

// Response-row VAE: mirrored MLP encoder/decoder, Gaussian latent, Bernoulli
// observation model. Held-out cells do not contribute to the reconstruction
// loss.
struct VaeGenerator {
  VaeConfig config;
  int num_questions = 0;
  std::vector<nn::DenseLayer> encoder;  // trunk, ReLU between layers
  std::vector<nn::DenseLayer> heads;    // [0] latent mean, [1] latent log-var
  std::vector<nn::DenseLayer> decoder;  // mirror trunk + output logits
  std::vector<double> loss_trace;       // per-epoch mean loss per student

  // Per-question Bernoulli probabilities for a latent code.
  Eigen::VectorXf decode_probs(const Eigen::VectorXf& z) const;
};

VaeGenerator train_vae(const ResponseMatrix& matrix, const VaeConfig& config);

// Rows sampled as z ~ N(0, I), cell ~ Bernoulli(pi(z)). Row r uses an rng
// stream derived from (seed, r), so rows are independent of generation order.
std::vector<std::vector<std::uint8_t>> generate_vae_students(
    const VaeGenerator& generator, int count, std::uint64_t seed);

// Stacks base + VAE rows + sampled rows into an (M+S+T) x N matrix with
// origin-tagged synthetic students ("vae-###", "smp-###"). base is copied,
// never mutated.
ResponseMatrix augment_matrix(
    const ResponseMatrix& base,
    const std::vector<std::vector<std::uint8_t>>& vae_rows,
    const std::vector<std::vector<std::uint8_t>>& sampled_rows);

}  // namespace diffcal
