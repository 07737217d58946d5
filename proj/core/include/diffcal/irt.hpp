#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffcal/datamodel.hpp"

namespace diffcal {

enum class IrtModelKind { onePL, twoPL, threePL };
enum class PriorKind { vague, hierarchical };

const char* to_string(IrtModelKind kind);
const char* to_string(PriorKind kind);
IrtModelKind irt_model_kind_from_string(const std::string& s);
PriorKind prior_kind_from_string(const std::string& s);

struct IrtModelConfig {
  IrtModelKind model_kind = IrtModelKind::onePL;
  PriorKind prior_kind = PriorKind::vague;
  std::uint64_t seed = 42;
  int steps = 2000;
  double learning_rate = 0.1;
  int mc_samples = 4;

  void validate() const;
};

// Group-level guide for one latent family under the hierarchical prior:
// x_i ~ Normal(mu, sigma) with mu ~ Normal(0,1) and log sigma ~ Normal(0,1).
struct HyperGroup {
  double mu_mean = 0.0;
  double mu_std = 1.0;
  double logsd_mean = 0.0;
  double logsd_std = 1.0;
};

// Mean-field Normal guide. Discrimination is stored in log space and
// guessing in logit space; both are absent unless the model kind uses them.
struct VariationalPosterior {
  std::vector<double> theta_mean, theta_std;  // per student
  std::vector<double> diff_mean, diff_std;    // per question
  std::vector<double> disc_mean, disc_std;    // per question, log a
  std::vector<double> guess_mean, guess_std;  // per question, logit c

  std::optional<HyperGroup> theta_group, diff_group, disc_group, guess_group;

  static VariationalPosterior standard(std::size_t num_students,
                                       std::size_t num_questions,
                                       IrtModelKind kind, PriorKind prior);
  IrtModelKind infer_kind() const;
};

struct CalibrationResult {
  VariationalPosterior posterior;
  std::vector<std::string> student_ids;
  std::vector<std::string> question_ids;
  std::vector<double> point_abilities;        // posterior means of theta
  std::vector<double> point_difficulties;     // posterior means of d
  std::vector<double> point_discriminations;  // exp(disc_mean), 2PL/3PL
  std::vector<double> point_guessings;        // sigmoid(guess_mean), 3PL
  std::vector<double> elbo_trace;
  IrtModelConfig config;
  std::string diagnostics;  // nonempty on sampler warnings

  double ability_of(const std::string& student_id) const;
  double difficulty_of(const std::string& question_id) const;
};

// Item characteristic curve. 1PL: sigma(theta - d); 2PL: sigma(a (theta - d));
// 3PL: c + (1 - c) sigma(a (theta - d)).
double predict_correct_prob(double theta, double d,
                            std::optional<double> a = std::nullopt,
                            std::optional<double> c = std::nullopt);

struct ElboParts {
  double loglik = 0.0;  // Monte-Carlo expected log-likelihood
  double kl = 0.0;      // KL(guide || prior), closed form
  double total() const { return loglik - kl; }
};

// Gradients of the ELBO with respect to every guide parameter, stored in a
// posterior-shaped container (std gradients are with respect to std itself).
struct ElboGradients {
  VariationalPosterior wrt;
};

ElboParts elbo_parts(const ResponseMatrix& matrix,
                     const VariationalPosterior& posterior, PriorKind prior,
                     std::uint64_t seed, int mc_samples);

double elbo_estimate(const ResponseMatrix& matrix,
                     const VariationalPosterior& posterior, PriorKind prior,
                     std::uint64_t seed, int mc_samples);

ElboParts elbo_with_gradients(const ResponseMatrix& matrix,
                              const VariationalPosterior& posterior,
                              IrtModelKind kind, PriorKind prior,
                              std::uint64_t seed, int mc_samples,
                              ElboGradients& grads);

// Stochastic variational fit: reparameterized Monte-Carlo likelihood
// gradients plus closed-form KL, ascended with Adam on unconstrained
// parameters. Held-out and not-administered cells never enter the
// likelihood. Deterministic for a fixed config.
CalibrationResult fit_svi(const ResponseMatrix& matrix, const IrtModelConfig& config);

// Random-walk Metropolis over (theta, d) for the 1PL model; point estimates
// are post-burn-in sample means. Proposal scales adapt during burn-in only.
CalibrationResult fit_mcmc(const ResponseMatrix& matrix, const IrtModelConfig& config);

struct HoldoutMetrics {
  std::optional<double> auc_roc;  // percentage; absent when one-class
  double brier = 0.0;             // percentage
  std::string note;
};

// Scores held-out cells with the calibrated item curves. AUC is
// tie-averaged; both metrics are reported as percentages.
HoldoutMetrics evaluate_holdout(const CalibrationResult& result,
                                const ResponseMatrix& matrix);

nlohmann::json calibration_to_json(const CalibrationResult& result);
// Ability table in (student_id, accuracy, theta) layout.
std::string calibration_ability_csv(const CalibrationResult& result,
                                    const ResponseMatrix& matrix);

}  // namespace diffcal
