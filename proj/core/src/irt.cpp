#include "diffcal/irt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "diffcal/errors.hpp"
#include "diffcal/metrics.hpp"
#include "diffcal/rng.hpp"

namespace diffcal {

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * log(2*pi)

bool uses_disc(IrtModelKind kind) { return kind != IrtModelKind::onePL; }
bool uses_guess(IrtModelKind kind) { return kind == IrtModelKind::threePL; }

void check_family(const char* name, const std::vector<double>& mean,
                  const std::vector<double>& std_, std::size_t expected,
                  bool active) {
  const std::size_t want = active ? expected : 0;
  if (mean.size() != want || std_.size() != want) {
    throw DimensionError(std::string(name) + " guide has " +
                         std::to_string(mean.size()) + "/" +
                         std::to_string(std_.size()) + " entries, expected " +
                         std::to_string(want));
  }
  for (double s : std_) {
    if (!(s > 0.0)) throw NumericError(std::string(name) + " guide std must be positive");
  }
}

void validate_posterior(const ResponseMatrix& matrix,
                        const VariationalPosterior& p, IrtModelKind kind,
                        PriorKind prior) {
  check_family("theta", p.theta_mean, p.theta_std, matrix.num_students(), true);
  check_family("difficulty", p.diff_mean, p.diff_std, matrix.num_questions(), true);
  check_family("discrimination", p.disc_mean, p.disc_std, matrix.num_questions(),
               uses_disc(kind));
  check_family("guessing", p.guess_mean, p.guess_std, matrix.num_questions(),
               uses_guess(kind));
  if (prior == PriorKind::hierarchical) {
    if (!p.theta_group || !p.diff_group)
      throw DimensionError("hierarchical prior requires group-level guides");
    if (uses_disc(kind) && !p.disc_group)
      throw DimensionError("hierarchical prior requires a discrimination group guide");
    if (uses_guess(kind) && !p.guess_group)
      throw DimensionError("hierarchical prior requires a guessing group guide");
  }
}

// KL(N(m,s) || N(0,1)) summed over a family; gradients accumulate the
// ELBO direction (negative KL).
double vague_prior_terms(const std::vector<double>& mean,
                         const std::vector<double>& std_,
                         std::vector<double>* g_mean,
                         std::vector<double>* g_std) {
  double kl = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double m = mean[i], s = std_[i];
    kl += -std::log(s) + 0.5 * (s * s + m * m - 1.0);
    if (g_mean) {
      (*g_mean)[i] += -m;
      (*g_std)[i] += 1.0 / s - s;
    }
  }
  return kl;
}

// Closed-form E_q[log q - log p] for one family under the hierarchical
// prior x_i ~ N(mu, sigma), mu ~ N(0,1), log sigma ~ N(0,1); all guides
// are Normal, so every expectation has an analytic form.
double hierarchical_prior_terms(const std::vector<double>& mean,
                                const std::vector<double>& std_,
                                const HyperGroup& hyper,
                                std::vector<double>* g_mean,
                                std::vector<double>* g_std,
                                HyperGroup* g_hyper) {
  const double n = static_cast<double>(mean.size());
  const double mu_m = hyper.mu_mean, mu_s = hyper.mu_std;
  const double la_m = hyper.logsd_mean, la_s = hyper.logsd_std;
  const double w = std::exp(-2.0 * la_m + 2.0 * la_s * la_s);

  double sum_q = 0.0;
  double elbo = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double dm = mean[i] - mu_m;
    const double q = dm * dm + std_[i] * std_[i] + mu_s * mu_s;
    sum_q += q;
    elbo += -kHalfLog2Pi - la_m - 0.5 * w * q;       // E[log p(x_i | mu, sigma)]
    elbo += 0.5 + kHalfLog2Pi + std::log(std_[i]);   // entropy of q(x_i)
    if (g_mean) {
      (*g_mean)[i] += -w * dm;
      (*g_std)[i] += -w * std_[i] + 1.0 / std_[i];
      g_hyper->mu_mean += w * dm;
    }
  }
  elbo += -kHalfLog2Pi - 0.5 * (mu_m * mu_m + mu_s * mu_s);  // E[log p(mu)]
  elbo += -kHalfLog2Pi - 0.5 * (la_m * la_m + la_s * la_s);  // E[log p(log sigma)]
  elbo += 0.5 + kHalfLog2Pi + std::log(mu_s);
  elbo += 0.5 + kHalfLog2Pi + std::log(la_s);
  if (g_hyper) {
    g_hyper->mu_mean += -mu_m;
    g_hyper->mu_std += -w * n * mu_s - mu_s + 1.0 / mu_s;
    g_hyper->logsd_mean += -n + w * sum_q - la_m;
    g_hyper->logsd_std += -2.0 * la_s * w * sum_q - la_s + 1.0 / la_s;
  }
  return -elbo;
}

// Zeroes the gradient container in place: fit_svi holds raw pointers into
// it across steps, so existing storage must never be reallocated.
void ensure_zero(VariationalPosterior& z, const VariationalPosterior& p) {
  auto fit = [](std::vector<double>& v, std::size_t n) {
    if (v.size() == n)
      std::fill(v.begin(), v.end(), 0.0);
    else
      v.assign(n, 0.0);
  };
  fit(z.theta_mean, p.theta_mean.size());
  fit(z.theta_std, p.theta_std.size());
  fit(z.diff_mean, p.diff_mean.size());
  fit(z.diff_std, p.diff_std.size());
  fit(z.disc_mean, p.disc_mean.size());
  fit(z.disc_std, p.disc_std.size());
  fit(z.guess_mean, p.guess_mean.size());
  fit(z.guess_std, p.guess_std.size());
  auto fith = [](std::optional<HyperGroup>& h, bool want) {
    if (want)
      h = HyperGroup{0, 0, 0, 0};
    else
      h.reset();
  };
  fith(z.theta_group, p.theta_group.has_value());
  fith(z.diff_group, p.diff_group.has_value());
  fith(z.disc_group, p.disc_group.has_value());
  fith(z.guess_group, p.guess_group.has_value());
}

VariationalPosterior zero_like(const VariationalPosterior& p) {
  VariationalPosterior z;
  ensure_zero(z, p);
  return z;
}

// Reparameterized Monte-Carlo ELBO. Noise is drawn in a fixed order
// (theta, difficulty, discrimination, guessing per sample) so two calls
// with the same seed see identical draws regardless of parameter values.
ElboParts elbo_core(const ResponseMatrix& matrix, const VariationalPosterior& p,
                    IrtModelKind kind, PriorKind prior, Rng& rng,
                    int mc_samples, ElboGradients* grads) {
  if (matrix.num_students() == 0 || matrix.num_questions() == 0)
    throw DimensionError("response matrix is empty");
  if (mc_samples < 1) throw ConfigError("mc_samples must be >= 1");
  validate_posterior(matrix, p, kind, prior);

  const std::size_t M = matrix.num_students();
  const std::size_t N = matrix.num_questions();
  VariationalPosterior* g = grads ? &grads->wrt : nullptr;
  if (g) ensure_zero(*g, p);

  std::vector<double> eps_t(M), eps_d(N), eps_a, eps_c;
  std::vector<double> theta(M), diff(N), disc, guess;
  std::vector<double> gt(M), gd(N), ga, gc;  // per-sample latent grads
  if (uses_disc(kind)) {
    eps_a.resize(N);
    disc.resize(N);
    ga.resize(N);
  }
  if (uses_guess(kind)) {
    eps_c.resize(N);
    guess.resize(N);
    gc.resize(N);
  }

  const double inv_s = 1.0 / mc_samples;
  double loglik = 0.0;
  for (int s = 0; s < mc_samples; ++s) {
    for (std::size_t i = 0; i < M; ++i) eps_t[i] = rng.gauss();
    for (std::size_t j = 0; j < N; ++j) eps_d[j] = rng.gauss();
    for (std::size_t j = 0; j < eps_a.size(); ++j) eps_a[j] = rng.gauss();
    for (std::size_t j = 0; j < eps_c.size(); ++j) eps_c[j] = rng.gauss();

    for (std::size_t i = 0; i < M; ++i)
      theta[i] = p.theta_mean[i] + p.theta_std[i] * eps_t[i];
    for (std::size_t j = 0; j < N; ++j)
      diff[j] = p.diff_mean[j] + p.diff_std[j] * eps_d[j];
    for (std::size_t j = 0; j < disc.size(); ++j)
      disc[j] = std::exp(p.disc_mean[j] + p.disc_std[j] * eps_a[j]);
    for (std::size_t j = 0; j < guess.size(); ++j)
      guess[j] = sigmoid(p.guess_mean[j] + p.guess_std[j] * eps_c[j]);

    std::fill(gt.begin(), gt.end(), 0.0);
    std::fill(gd.begin(), gd.end(), 0.0);
    std::fill(ga.begin(), ga.end(), 0.0);
    std::fill(gc.begin(), gc.end(), 0.0);

    for (std::size_t i = 0; i < M; ++i) {
      for (std::size_t j = 0; j < N; ++j) {
        if (!matrix.observed(i, j)) continue;
        const double y = matrix.entry(i, j);
        const double a = uses_disc(kind) ? disc[j] : 1.0;
        const double z = a * (theta[i] - diff[j]);
        double dz;  // d loglik / d z for this cell
        if (!uses_guess(kind)) {
          loglik += (y * z - log1p_exp(z)) * inv_s;
          dz = y - sigmoid(z);
        } else {
          const double sg = sigmoid(z);
          const double c = guess[j];
          double prob = c + (1.0 - c) * sg;
          prob = std::clamp(prob, 1e-12, 1.0 - 1e-12);
          loglik += (y * std::log(prob) + (1.0 - y) * std::log1p(-prob)) * inv_s;
          const double dprob = y / prob - (1.0 - y) / (1.0 - prob);
          dz = dprob * (1.0 - c) * sg * (1.0 - sg);
          if (g) gc[j] += dprob * (1.0 - sg);
        }
        if (g) {
          gt[i] += dz * a;
          gd[j] -= dz * a;
          // z scales linearly with a = exp(log a), so dz/d(log a) = z
          if (uses_disc(kind)) ga[j] += dz * z;
        }
      }
    }

    if (g) {
      for (std::size_t i = 0; i < M; ++i) {
        g->theta_mean[i] += gt[i] * inv_s;
        g->theta_std[i] += gt[i] * eps_t[i] * inv_s;
      }
      for (std::size_t j = 0; j < N; ++j) {
        g->diff_mean[j] += gd[j] * inv_s;
        g->diff_std[j] += gd[j] * eps_d[j] * inv_s;
      }
      for (std::size_t j = 0; j < ga.size(); ++j) {
        g->disc_mean[j] += ga[j] * inv_s;
        g->disc_std[j] += ga[j] * eps_a[j] * inv_s;
      }
      for (std::size_t j = 0; j < gc.size(); ++j) {
        const double sc = guess[j] * (1.0 - guess[j]);  // d c / d logit c
        g->guess_mean[j] += gc[j] * sc * inv_s;
        g->guess_std[j] += gc[j] * sc * eps_c[j] * inv_s;
      }
    }
  }

  double kl = 0.0;
  if (prior == PriorKind::vague) {
    kl += vague_prior_terms(p.theta_mean, p.theta_std,
                            g ? &g->theta_mean : nullptr,
                            g ? &g->theta_std : nullptr);
    kl += vague_prior_terms(p.diff_mean, p.diff_std, g ? &g->diff_mean : nullptr,
                            g ? &g->diff_std : nullptr);
    kl += vague_prior_terms(p.disc_mean, p.disc_std, g ? &g->disc_mean : nullptr,
                            g ? &g->disc_std : nullptr);
    kl += vague_prior_terms(p.guess_mean, p.guess_std,
                            g ? &g->guess_mean : nullptr,
                            g ? &g->guess_std : nullptr);
  } else {
    kl += hierarchical_prior_terms(p.theta_mean, p.theta_std, *p.theta_group,
                                   g ? &g->theta_mean : nullptr,
                                   g ? &g->theta_std : nullptr,
                                   g ? &*g->theta_group : nullptr);
    kl += hierarchical_prior_terms(p.diff_mean, p.diff_std, *p.diff_group,
                                   g ? &g->diff_mean : nullptr,
                                   g ? &g->diff_std : nullptr,
                                   g ? &*g->diff_group : nullptr);
    if (uses_disc(kind))
      kl += hierarchical_prior_terms(p.disc_mean, p.disc_std, *p.disc_group,
                                     g ? &g->disc_mean : nullptr,
                                     g ? &g->disc_std : nullptr,
                                     g ? &*g->disc_group : nullptr);
    if (uses_guess(kind))
      kl += hierarchical_prior_terms(p.guess_mean, p.guess_std, *p.guess_group,
                                     g ? &g->guess_mean : nullptr,
                                     g ? &g->guess_std : nullptr,
                                     g ? &*g->guess_group : nullptr);
  }

  return ElboParts{loglik, kl};
}

// Flattened view of the guide for the optimizer; positive parameters
// (stds) are ascended in log space.
struct ParamRef {
  double* value;
  double* grad;
  bool positive;
};

void collect_family(std::vector<double>& mean, std::vector<double>& std_,
                    std::vector<double>& g_mean, std::vector<double>& g_std,
                    std::vector<ParamRef>& refs) {
  for (std::size_t i = 0; i < mean.size(); ++i)
    refs.push_back({&mean[i], &g_mean[i], false});
  for (std::size_t i = 0; i < std_.size(); ++i)
    refs.push_back({&std_[i], &g_std[i], true});
}

void collect_hyper(std::optional<HyperGroup>& h, std::optional<HyperGroup>& g,
                   std::vector<ParamRef>& refs) {
  if (!h) return;
  refs.push_back({&h->mu_mean, &g->mu_mean, false});
  refs.push_back({&h->mu_std, &g->mu_std, true});
  refs.push_back({&h->logsd_mean, &g->logsd_mean, false});
  refs.push_back({&h->logsd_std, &g->logsd_std, true});
}

std::vector<ParamRef> collect_refs(VariationalPosterior& p, ElboGradients& g) {
  std::vector<ParamRef> refs;
  collect_family(p.theta_mean, p.theta_std, g.wrt.theta_mean, g.wrt.theta_std,
                 refs);
  collect_family(p.diff_mean, p.diff_std, g.wrt.diff_mean, g.wrt.diff_std,
                 refs);
  collect_family(p.disc_mean, p.disc_std, g.wrt.disc_mean, g.wrt.disc_std,
                 refs);
  collect_family(p.guess_mean, p.guess_std, g.wrt.guess_mean, g.wrt.guess_std,
                 refs);
  collect_hyper(p.theta_group, g.wrt.theta_group, refs);
  collect_hyper(p.diff_group, g.wrt.diff_group, refs);
  collect_hyper(p.disc_group, g.wrt.disc_group, refs);
  collect_hyper(p.guess_group, g.wrt.guess_group, refs);
  return refs;
}

double normal_logpdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -kHalfLog2Pi - std::log(sd) - 0.5 * z * z;
}

}  // namespace

const char* to_string(IrtModelKind kind) {
  switch (kind) {
    case IrtModelKind::onePL: return "1PL";
    case IrtModelKind::twoPL: return "2PL";
    case IrtModelKind::threePL: return "3PL";
  }
  return "?";
}

const char* to_string(PriorKind kind) {
  return kind == PriorKind::vague ? "vague" : "hierarchical";
}

IrtModelKind irt_model_kind_from_string(const std::string& s) {
  if (s == "1PL" || s == "1pl") return IrtModelKind::onePL;
  if (s == "2PL" || s == "2pl") return IrtModelKind::twoPL;
  if (s == "3PL" || s == "3pl") return IrtModelKind::threePL;
  throw ConfigError("unknown IRT model kind: " + s);
}

PriorKind prior_kind_from_string(const std::string& s) {
  if (s == "vague") return PriorKind::vague;
  if (s == "hierarchical") return PriorKind::hierarchical;
  throw ConfigError("unknown prior kind: " + s);
}

void IrtModelConfig::validate() const {
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (mc_samples < 1) throw ConfigError("mc_samples must be >= 1");
}

VariationalPosterior VariationalPosterior::standard(std::size_t num_students,
                                                    std::size_t num_questions,
                                                    IrtModelKind kind,
                                                    PriorKind prior) {
  VariationalPosterior p;
  p.theta_mean.assign(num_students, 0.0);
  p.theta_std.assign(num_students, 1.0);
  p.diff_mean.assign(num_questions, 0.0);
  p.diff_std.assign(num_questions, 1.0);
  if (uses_disc(kind)) {
    p.disc_mean.assign(num_questions, 0.0);
    p.disc_std.assign(num_questions, 1.0);
  }
  if (uses_guess(kind)) {
    p.guess_mean.assign(num_questions, -2.0);  // start near c ~ 0.12
    p.guess_std.assign(num_questions, 1.0);
  }
  if (prior == PriorKind::hierarchical) {
    p.theta_group = HyperGroup{};
    p.diff_group = HyperGroup{};
    if (uses_disc(kind)) p.disc_group = HyperGroup{};
    if (uses_guess(kind)) p.guess_group = HyperGroup{};
  }
  return p;
}

IrtModelKind VariationalPosterior::infer_kind() const {
  if (!guess_mean.empty()) return IrtModelKind::threePL;
  if (!disc_mean.empty()) return IrtModelKind::twoPL;
  return IrtModelKind::onePL;
}

double CalibrationResult::ability_of(const std::string& student_id) const {
  for (std::size_t i = 0; i < student_ids.size(); ++i)
    if (student_ids[i] == student_id) return point_abilities[i];
  throw MissingDataError("no calibrated ability for student " + student_id);
}

double CalibrationResult::difficulty_of(const std::string& question_id) const {
  for (std::size_t j = 0; j < question_ids.size(); ++j)
    if (question_ids[j] == question_id) return point_difficulties[j];
  throw MissingDataError("no calibrated difficulty for question " + question_id);
}

double predict_correct_prob(double theta, double d, std::optional<double> a,
                            std::optional<double> c) {
  const double slope = a.value_or(1.0);
  if (!(slope > 0.0)) throw NumericError("discrimination must be positive");
  const double base = sigmoid(slope * (theta - d));
  if (!c) return base;
  if (*c < 0.0 || *c >= 1.0) throw NumericError("guessing must lie in [0, 1)");
  return *c + (1.0 - *c) * base;
}

ElboParts elbo_parts(const ResponseMatrix& matrix,
                     const VariationalPosterior& posterior, PriorKind prior,
                     std::uint64_t seed, int mc_samples) {
  Rng rng(seed);
  return elbo_core(matrix, posterior, posterior.infer_kind(), prior, rng,
                   mc_samples, nullptr);
}

double elbo_estimate(const ResponseMatrix& matrix,
                     const VariationalPosterior& posterior, PriorKind prior,
                     std::uint64_t seed, int mc_samples) {
  return elbo_parts(matrix, posterior, prior, seed, mc_samples).total();
}

ElboParts elbo_with_gradients(const ResponseMatrix& matrix,
                              const VariationalPosterior& posterior,
                              IrtModelKind kind, PriorKind prior,
                              std::uint64_t seed, int mc_samples,
                              ElboGradients& grads) {
  Rng rng(seed);
  return elbo_core(matrix, posterior, kind, prior, rng, mc_samples, &grads);
}

CalibrationResult fit_svi(const ResponseMatrix& matrix,
                          const IrtModelConfig& config) {
  config.validate();
  if (matrix.num_students() == 0 || matrix.num_questions() == 0)
    throw DimensionError("response matrix is empty");

  VariationalPosterior p = VariationalPosterior::standard(
      matrix.num_students(), matrix.num_questions(), config.model_kind,
      config.prior_kind);
  ElboGradients grads;
  grads.wrt = zero_like(p);
  std::vector<ParamRef> refs = collect_refs(p, grads);

  std::vector<double> x(refs.size()), m(refs.size(), 0.0), v(refs.size(), 0.0);
  for (std::size_t k = 0; k < refs.size(); ++k)
    x[k] = refs[k].positive ? std::log(*refs[k].value) : *refs[k].value;

  const double b1 = 0.9, b2 = 0.999, adam_eps = 1e-8;
  Rng rng(config.seed);
  std::vector<double> trace;
  trace.reserve(config.steps);

  for (int step = 0; step < config.steps; ++step) {
    const ElboParts parts = elbo_core(matrix, p, config.model_kind,
                                      config.prior_kind, rng,
                                      config.mc_samples, &grads);
    trace.push_back(parts.total());

    const double t = static_cast<double>(step + 1);
    const double bc1 = 1.0 - std::pow(b1, t);
    const double bc2 = 1.0 - std::pow(b2, t);
    for (std::size_t k = 0; k < refs.size(); ++k) {
      double gk = *refs[k].grad;
      if (refs[k].positive) gk *= *refs[k].value;  // chain rule into log space
      if (!std::isfinite(gk))
        throw NumericError("non-finite gradient at step " +
                           std::to_string(step) +
                           "; try a smaller learning_rate");
      m[k] = b1 * m[k] + (1.0 - b1) * gk;
      v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
      x[k] += config.learning_rate * (m[k] / bc1) /
              (std::sqrt(v[k] / bc2) + adam_eps);
      *refs[k].value = refs[k].positive ? std::exp(x[k]) : x[k];
    }
  }

  CalibrationResult result;
  result.posterior = p;
  result.student_ids.clear();
  for (const auto& s : matrix.students()) result.student_ids.push_back(s.id);
  result.question_ids = matrix.question_ids();
  result.point_abilities = p.theta_mean;
  result.point_difficulties = p.diff_mean;
  for (double lm : p.disc_mean) result.point_discriminations.push_back(std::exp(lm));
  for (double gm : p.guess_mean) result.point_guessings.push_back(sigmoid(gm));
  result.elbo_trace = std::move(trace);
  result.config = config;
  return result;
}

CalibrationResult fit_mcmc(const ResponseMatrix& matrix,
                           const IrtModelConfig& config) {
  config.validate();
  if (config.model_kind != IrtModelKind::onePL)
    throw ConfigError("the Metropolis sampler only covers the 1PL model");
  if (matrix.num_students() == 0 || matrix.num_questions() == 0)
    throw DimensionError("response matrix is empty");

  const std::size_t M = matrix.num_students();
  const std::size_t N = matrix.num_questions();
  const bool hier = config.prior_kind == PriorKind::hierarchical;
  const int sweeps = config.steps;
  const int burn = sweeps / 2;

  std::vector<double> theta(M, 0.0), d(N, 0.0);
  // Group parameters stay fixed at the standard-normal prior when vague.
  double mu_t = 0.0, la_t = 0.0, mu_d = 0.0, la_d = 0.0;

  auto row_loglik = [&](std::size_t i, double th) {
    double ll = 0.0;
    for (std::size_t j = 0; j < N; ++j) {
      if (!matrix.observed(i, j)) continue;
      const double z = th - d[j];
      ll += matrix.entry(i, j) * z - log1p_exp(z);
    }
    return ll;
  };
  auto col_loglik = [&](std::size_t j, double dj) {
    double ll = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
      if (!matrix.observed(i, j)) continue;
      const double z = theta[i] - dj;
      ll += matrix.entry(i, j) * z - log1p_exp(z);
    }
    return ll;
  };

  Rng rng(config.seed);
  double scale_t = 1.0, scale_d = 1.0, scale_h = 0.5;
  long acc_t = 0, try_t = 0, acc_d = 0, try_d = 0;
  long post_acc_t = 0, post_try_t = 0, post_acc_d = 0, post_try_d = 0;

  std::vector<double> sum_t(M, 0.0), sq_t(M, 0.0), sum_d(N, 0.0), sq_d(N, 0.0);
  long kept = 0;
  std::vector<double> trace;
  trace.reserve(sweeps);

  const int adapt_block = 25;
  int block = 0;

  for (int sweep = 0; sweep < sweeps; ++sweep) {
    const bool warm = sweep < burn;
    for (std::size_t i = 0; i < M; ++i) {
      const double prop = theta[i] + scale_t * rng.gauss();
      const double sd_t = hier ? std::exp(la_t) : 1.0;
      const double delta = row_loglik(i, prop) - row_loglik(i, theta[i]) +
                           normal_logpdf(prop, hier ? mu_t : 0.0, sd_t) -
                           normal_logpdf(theta[i], hier ? mu_t : 0.0, sd_t);
      ++try_t;
      if (!warm) ++post_try_t;
      if (std::log(rng.uniform()) < delta) {
        theta[i] = prop;
        ++acc_t;
        if (!warm) ++post_acc_t;
      }
    }
    for (std::size_t j = 0; j < N; ++j) {
      const double prop = d[j] + scale_d * rng.gauss();
      const double sd_d = hier ? std::exp(la_d) : 1.0;
      const double delta = col_loglik(j, prop) - col_loglik(j, d[j]) +
                           normal_logpdf(prop, hier ? mu_d : 0.0, sd_d) -
                           normal_logpdf(d[j], hier ? mu_d : 0.0, sd_d);
      ++try_d;
      if (!warm) ++post_try_d;
      if (std::log(rng.uniform()) < delta) {
        d[j] = prop;
        ++acc_d;
        if (!warm) ++post_acc_d;
      }
    }
    if (hier) {
      auto group_logp = [&](const std::vector<double>& xs, double mu, double la) {
        double lp = normal_logpdf(mu, 0.0, 1.0) + normal_logpdf(la, 0.0, 1.0);
        const double sd = std::exp(la);
        for (double xv : xs) lp += normal_logpdf(xv, mu, sd);
        return lp;
      };
      for (int h = 0; h < 4; ++h) {
        double* target = h == 0 ? &mu_t : h == 1 ? &la_t : h == 2 ? &mu_d : &la_d;
        const bool on_theta = h < 2;
        const double prop = *target + scale_h * rng.gauss();
        const double old = *target;
        const double before = group_logp(on_theta ? theta : d,
                                         on_theta ? mu_t : mu_d,
                                         on_theta ? la_t : la_d);
        *target = prop;
        const double after = group_logp(on_theta ? theta : d,
                                        on_theta ? mu_t : mu_d,
                                        on_theta ? la_t : la_d);
        if (std::log(rng.uniform()) >= after - before) *target = old;
      }
    }

    if (warm && (sweep + 1) % adapt_block == 0) {
      ++block;
      const double damp = 1.0 / std::sqrt(static_cast<double>(block));
      const double rt = static_cast<double>(acc_t) / static_cast<double>(try_t);
      const double rd = static_cast<double>(acc_d) / static_cast<double>(try_d);
      scale_t = std::clamp(scale_t * std::exp((rt - 0.44) * damp), 1e-3, 10.0);
      scale_d = std::clamp(scale_d * std::exp((rd - 0.44) * damp), 1e-3, 10.0);
      acc_t = try_t = acc_d = try_d = 0;
    }

    double joint = 0.0;
    for (std::size_t i = 0; i < M; ++i) joint += row_loglik(i, theta[i]);
    for (std::size_t i = 0; i < M; ++i)
      joint += normal_logpdf(theta[i], hier ? mu_t : 0.0,
                             hier ? std::exp(la_t) : 1.0);
    for (std::size_t j = 0; j < N; ++j)
      joint += normal_logpdf(d[j], hier ? mu_d : 0.0,
                             hier ? std::exp(la_d) : 1.0);
    trace.push_back(joint);

    if (!warm) {
      ++kept;
      for (std::size_t i = 0; i < M; ++i) {
        sum_t[i] += theta[i];
        sq_t[i] += theta[i] * theta[i];
      }
      for (std::size_t j = 0; j < N; ++j) {
        sum_d[j] += d[j];
        sq_d[j] += d[j] * d[j];
      }
    }
  }

  if (kept == 0) throw ConfigError("steps too small: no post-burn-in samples");

  CalibrationResult result;
  result.student_ids.clear();
  for (const auto& s : matrix.students()) result.student_ids.push_back(s.id);
  result.question_ids = matrix.question_ids();
  result.config = config;
  result.elbo_trace = std::move(trace);
  const double kn = static_cast<double>(kept);
  result.posterior.theta_mean.resize(M);
  result.posterior.theta_std.resize(M);
  result.posterior.diff_mean.resize(N);
  result.posterior.diff_std.resize(N);
  for (std::size_t i = 0; i < M; ++i) {
    const double mean = sum_t[i] / kn;
    result.posterior.theta_mean[i] = mean;
    const double var = std::max(sq_t[i] / kn - mean * mean, 0.0);
    result.posterior.theta_std[i] = std::sqrt(var);
  }
  for (std::size_t j = 0; j < N; ++j) {
    const double mean = sum_d[j] / kn;
    result.posterior.diff_mean[j] = mean;
    const double var = std::max(sq_d[j] / kn - mean * mean, 0.0);
    result.posterior.diff_std[j] = std::sqrt(var);
  }
  result.point_abilities = result.posterior.theta_mean;
  result.point_difficulties = result.posterior.diff_mean;

  std::ostringstream diag;
  const double final_rt =
      post_try_t ? static_cast<double>(post_acc_t) / post_try_t : 0.0;
  const double final_rd =
      post_try_d ? static_cast<double>(post_acc_d) / post_try_d : 0.0;
  char buf[128];
  if (final_rt < 0.05 || final_rt > 0.95) {
    std::snprintf(buf, sizeof buf,
                  "ability acceptance rate %.3f outside [0.05, 0.95]; ", final_rt);
    diag << buf;
  }
  if (final_rd < 0.05 || final_rd > 0.95) {
    std::snprintf(buf, sizeof buf,
                  "difficulty acceptance rate %.3f outside [0.05, 0.95]; ",
                  final_rd);
    diag << buf;
  }
  result.diagnostics = diag.str();
  if (!result.diagnostics.empty()) result.diagnostics.pop_back();
  return result;
}

HoldoutMetrics evaluate_holdout(const CalibrationResult& result,
                                const ResponseMatrix& matrix) {
  if (matrix.num_students() != result.point_abilities.size() ||
      matrix.num_questions() != result.point_difficulties.size())
    throw DimensionError("calibration and matrix shapes disagree");

  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t i = 0; i < matrix.num_students(); ++i) {
    for (std::size_t j = 0; j < matrix.num_questions(); ++j) {
      if (!matrix.held_out(i, j) || !matrix.administered(i, j)) continue;
      std::optional<double> a, c;
      if (!result.point_discriminations.empty())
        a = result.point_discriminations[j];
      if (!result.point_guessings.empty()) c = result.point_guessings[j];
      scores.push_back(predict_correct_prob(result.point_abilities[i],
                                            result.point_difficulties[j], a, c));
      labels.push_back(matrix.entry(i, j));
    }
  }
  if (scores.empty()) throw MissingDataError("holdout mask is empty");

  HoldoutMetrics out;
  out.brier = 100.0 * brier_score(labels, scores);
  const bool has_pos = std::find(labels.begin(), labels.end(), 1) != labels.end();
  const bool has_neg = std::find(labels.begin(), labels.end(), 0) != labels.end();
  if (has_pos && has_neg) {
    out.auc_roc = 100.0 * roc_auc(labels, scores);
  } else {
    out.note = "holdout contains a single class; AUC undefined";
  }
  return out;
}

nlohmann::json calibration_to_json(const CalibrationResult& result) {
  nlohmann::json j;
  j["model"] = to_string(result.config.model_kind);
  j["prior"] = to_string(result.config.prior_kind);
  j["seed"] = result.config.seed;
  j["steps"] = result.config.steps;
  j["learning_rate"] = result.config.learning_rate;
  j["mc_samples"] = result.config.mc_samples;
  j["diagnostics"] = result.diagnostics;
  j["elbo_trace"] = result.elbo_trace;

  nlohmann::json abilities = nlohmann::json::object();
  for (std::size_t i = 0; i < result.student_ids.size(); ++i) {
    abilities[result.student_ids[i]] = {
        {"mean", result.point_abilities[i]},
        {"std", result.posterior.theta_std[i]}};
  }
  j["abilities"] = abilities;

  nlohmann::json difficulties = nlohmann::json::object();
  for (std::size_t q = 0; q < result.question_ids.size(); ++q) {
    nlohmann::json entry = {{"mean", result.point_difficulties[q]},
                            {"std", result.posterior.diff_std[q]}};
    if (!result.point_discriminations.empty())
      entry["discrimination"] = result.point_discriminations[q];
    if (!result.point_guessings.empty())
      entry["guessing"] = result.point_guessings[q];
    difficulties[result.question_ids[q]] = entry;
  }
  j["difficulties"] = difficulties;
  return j;
}

std::string calibration_ability_csv(const CalibrationResult& result,
                                    const ResponseMatrix& matrix) {
  std::ostringstream out;
  out << "student_id,accuracy,theta\n";
  char buf[64];
  for (std::size_t i = 0; i < result.student_ids.size(); ++i) {
    const std::size_t row = matrix.student_index(result.student_ids[i]);
    std::snprintf(buf, sizeof buf, "%.2f,%.4f", 100.0 * matrix.row_accuracy(row),
                  result.point_abilities[i]);
    out << result.student_ids[i] << ',' << buf << '\n';
  }
  return out.str();
}

}  // namespace diffcal
