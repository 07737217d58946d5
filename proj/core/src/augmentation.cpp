#include "diffcal/augmentation.hpp"

#include <cmath>
#include <cstdio>

#include "diffcal/errors.hpp"
#include "diffcal/metrics.hpp"

namespace diffcal {

namespace {

Eigen::MatrixXf apply_linear(const nn::DenseLayer& layer,
                             const Eigen::MatrixXf& x) {
  Eigen::MatrixXf y = layer.weight * x;
  y.colwise() += layer.bias;
  return y;
}

std::vector<StudentRecord> tag_rows(std::size_t count, const char* prefix,
                                    StudentOrigin origin) {
  std::vector<StudentRecord> students(count);
  char buf[32];
  for (std::size_t i = 0; i < count; ++i) {
    std::snprintf(buf, sizeof buf, "%s-%03zu", prefix, i);
    students[i] = StudentRecord{buf, buf, true, origin};
  }
  return students;
}

}  // namespace

void VaeConfig::validate() const {
  if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
  if (kld_weight < 0.0) throw ConfigError("kld_weight must be >= 0");
  if (hidden_dims.empty()) throw ConfigError("hidden_dims must be nonempty");
  for (int h : hidden_dims)
    if (h < 1) throw ConfigError("hidden_dims entries must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (num_generate < 0) throw ConfigError("num_generate must be >= 0");
}

std::vector<double> empirical_rates(const ResponseMatrix& matrix) {
  if (matrix.num_students() == 0 || matrix.num_questions() == 0)
    throw DimensionError("response matrix is empty");
  std::vector<double> rates(matrix.num_questions());
  for (std::size_t j = 0; j < matrix.num_questions(); ++j) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < matrix.num_students(); ++i) {
      if (!matrix.observed(i, j)) continue;
      sum += matrix.entry(i, j);
      ++count;
    }
    if (count == 0)
      throw MissingDataError("question " + matrix.question_ids()[j] +
                             " has no observed responses");
    rates[j] = sum / static_cast<double>(count);
  }
  return rates;
}

std::vector<std::vector<std::uint8_t>> sample_students(
    const std::vector<double>& rates, const SamplingConfig& config) {
  if (config.num_generate < 0) throw ConfigError("num_generate must be >= 0");
  for (double c : rates)
    if (c < 0.0 || c > 1.0) throw NumericError("rates must lie in [0, 1]");
  Rng rng(config.seed);
  std::vector<std::vector<std::uint8_t>> rows(config.num_generate);
  for (auto& row : rows) {
    row.resize(rates.size());
    for (std::size_t j = 0; j < rates.size(); ++j)
      row[j] = rng.bernoulli(rates[j]) ? 1 : 0;
  }
  return rows;
}

Eigen::VectorXf VaeGenerator::decode_probs(const Eigen::VectorXf& z) const {
  if (z.size() != config.latent_dim)
    throw DimensionError("latent code has wrong dimension");
  Eigen::MatrixXf h = z;
  for (std::size_t l = 0; l + 1 < decoder.size(); ++l)
    h = nn::relu(apply_linear(decoder[l], h));
  return nn::sigmoid(apply_linear(decoder.back(), h)).col(0);
}

VaeGenerator train_vae(const ResponseMatrix& matrix, const VaeConfig& config) {
  config.validate();
  const std::size_t M = matrix.num_students();
  const Eigen::Index N = static_cast<Eigen::Index>(matrix.num_questions());
  if (M < 2) throw DimensionError("VAE training needs at least two rows");

  VaeGenerator gen;
  gen.config = config;
  gen.num_questions = static_cast<int>(N);

  Rng rng(config.seed);
  int in = static_cast<int>(N);
  for (int h : config.hidden_dims) {
    gen.encoder.emplace_back(in, h, rng);
    in = h;
  }
  gen.heads.emplace_back(in, config.latent_dim, rng);  // mean
  gen.heads.emplace_back(in, config.latent_dim, rng);  // log-variance
  int dec_in = config.latent_dim;
  for (auto it = config.hidden_dims.rbegin(); it != config.hidden_dims.rend(); ++it) {
    gen.decoder.emplace_back(dec_in, *it, rng);
    dec_in = *it;
  }
  gen.decoder.emplace_back(dec_in, static_cast<int>(N), rng);

  const Eigen::Index B = static_cast<Eigen::Index>(M);
  Eigen::MatrixXf x(N, B), mask(N, B);
  for (Eigen::Index b = 0; b < B; ++b) {
    for (Eigen::Index j = 0; j < N; ++j) {
      const bool obs = matrix.observed(b, j);
      mask(j, b) = obs ? 1.0f : 0.0f;
      x(j, b) = obs ? static_cast<float>(matrix.entry(b, j)) : 0.0f;
    }
  }

  const float beta = static_cast<float>(config.kld_weight);
  const float lr = static_cast<float>(config.learning_rate);
  gen.loss_trace.reserve(config.epochs);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    // encoder
    std::vector<Eigen::MatrixXf> pre(gen.encoder.size());
    Eigen::MatrixXf h = x;
    for (std::size_t l = 0; l < gen.encoder.size(); ++l) {
      pre[l] = gen.encoder[l].forward(h);
      h = nn::relu(pre[l]);
    }
    Eigen::MatrixXf mu = gen.heads[0].forward(h);
    Eigen::MatrixXf logvar = gen.heads[1].forward(h);

    Eigen::MatrixXf eps(config.latent_dim, B);
    for (Eigen::Index c = 0; c < B; ++c)
      for (Eigen::Index r = 0; r < config.latent_dim; ++r)
        eps(r, c) = static_cast<float>(rng.gauss());
    Eigen::MatrixXf sd = (0.5f * logvar.array()).exp().matrix();
    Eigen::MatrixXf z = mu + sd.cwiseProduct(eps);

    // decoder
    std::vector<Eigen::MatrixXf> dpre(gen.decoder.size());
    Eigen::MatrixXf dh = z;
    for (std::size_t l = 0; l + 1 < gen.decoder.size(); ++l) {
      dpre[l] = gen.decoder[l].forward(dh);
      dh = nn::relu(dpre[l]);
    }
    Eigen::MatrixXf logits = gen.decoder.back().forward(dh);
    Eigen::MatrixXf probs = nn::sigmoid(logits);

    // masked Bernoulli NLL, accumulated in double:
    // softplus(logit) - y * logit is the stable per-cell form
    double nll = 0.0;
    for (Eigen::Index c = 0; c < B; ++c)
      for (Eigen::Index r = 0; r < N; ++r)
        if (mask(r, c) > 0.0f)
          nll += log1p_exp(logits(r, c)) -
                 static_cast<double>(x(r, c)) * logits(r, c);
    double kld = 0.0;
    for (Eigen::Index c = 0; c < B; ++c)
      for (Eigen::Index r = 0; r < config.latent_dim; ++r)
        kld += -0.5 * (1.0 + logvar(r, c) - mu(r, c) * mu(r, c) -
                       std::exp(static_cast<double>(logvar(r, c))));
    // recorded per student so traces compare across corpus sizes
    const double loss = (nll + config.kld_weight * kld) / static_cast<double>(B);
    if (!std::isfinite(loss))
      throw NumericError("non-finite VAE loss at epoch " + std::to_string(epoch));
    gen.loss_trace.push_back(loss);

    // backward
    Eigen::MatrixXf dlogits = (probs - x).cwiseProduct(mask);
    Eigen::MatrixXf dback = gen.decoder.back().backward(dlogits);
    for (std::size_t l = gen.decoder.size() - 1; l-- > 0;)
      dback = gen.decoder[l].backward(nn::relu_backward(dpre[l], dback));
    Eigen::MatrixXf dz = dback;

    Eigen::MatrixXf dmu = dz + beta * mu;
    Eigen::MatrixXf dlogvar =
        (0.5f * dz.array() * sd.array() * eps.array() +
         beta * 0.5f * (logvar.array().exp() - 1.0f))
            .matrix();
    Eigen::MatrixXf dh_enc =
        gen.heads[0].backward(dmu) + gen.heads[1].backward(dlogvar);
    for (std::size_t l = gen.encoder.size(); l-- > 0;)
      dh_enc = gen.encoder[l].backward(nn::relu_backward(pre[l], dh_enc));

    const int t = epoch + 1;
    for (auto& layer : gen.encoder) layer.adam_step(lr, t);
    for (auto& layer : gen.heads) layer.adam_step(lr, t);
    for (auto& layer : gen.decoder) layer.adam_step(lr, t);
  }
  return gen;
}

std::vector<std::vector<std::uint8_t>> generate_vae_students(
    const VaeGenerator& generator, int count, std::uint64_t seed) {
  if (count < 0) throw ConfigError("count must be >= 0");
  std::vector<std::vector<std::uint8_t>> rows(count);
  for (int r = 0; r < count; ++r) {
    Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(r)));
    Eigen::VectorXf z(generator.config.latent_dim);
    for (Eigen::Index k = 0; k < z.size(); ++k)
      z(k) = static_cast<float>(rng.gauss());
    const Eigen::VectorXf probs = generator.decode_probs(z);
    rows[r].resize(probs.size());
    for (Eigen::Index j = 0; j < probs.size(); ++j)
      rows[r][j] = rng.bernoulli(probs(j)) ? 1 : 0;
  }
  return rows;
}

ResponseMatrix augment_matrix(
    const ResponseMatrix& base,
    const std::vector<std::vector<std::uint8_t>>& vae_rows,
    const std::vector<std::vector<std::uint8_t>>& sampled_rows) {
  ResponseMatrix out = base;
  auto convert = [&](const std::vector<std::vector<std::uint8_t>>& src) {
    std::vector<std::vector<std::int8_t>> rows(src.size());
    for (std::size_t r = 0; r < src.size(); ++r) {
      if (src[r].size() != base.num_questions())
        throw DimensionError("synthetic row width " +
                             std::to_string(src[r].size()) +
                             " does not match matrix width " +
                             std::to_string(base.num_questions()));
      rows[r].assign(src[r].begin(), src[r].end());
    }
    return rows;
  };
  out.append_rows(tag_rows(vae_rows.size(), "vae", StudentOrigin::vae),
                  convert(vae_rows));
  out.append_rows(tag_rows(sampled_rows.size(), "smp", StudentOrigin::sampled),
                  convert(sampled_rows));
  return out;
}

}  // namespace diffcal
