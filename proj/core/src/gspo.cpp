#include "diffcal/gspo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "diffcal/errors.hpp"

namespace diffcal {

namespace {

constexpr double kRatioCeiling = 1e12;

double logsumexp_row(const double* row, int n) {
  double hi = row[0];
  for (int k = 1; k < n; ++k) hi = std::max(hi, row[k]);
  double sum = 0.0;
  for (int k = 0; k < n; ++k) sum += std::exp(row[k] - hi);
  return hi + std::log(sum);
}

}  // namespace

void RewardMix::validate() const {
  if (!std::isfinite(alpha) || !std::isfinite(beta) || !std::isfinite(gamma))
    throw ConfigError("reward weights must be finite");
  if (alpha == 0.0 && beta == 0.0 && gamma == 0.0)
    throw ConfigError("at least one reward weight must be nonzero");
}

void RolloutGroup::validate() const {
  const std::size_t k = completions.size();
  if (k < 2) throw DimensionError("rollout group needs K >= 2 completions");
  if (logp_new.size() != k || logp_old.size() != k || lengths.size() != k ||
      rewards.size() != k)
    throw DimensionError("rollout group arrays disagree on K");
  for (int len : lengths)
    if (len < 1) throw DimensionError("completion lengths must be >= 1");
  for (std::size_t i = 0; i < k; ++i)
    if (!std::isfinite(logp_new[i]) || !std::isfinite(logp_old[i]))
      throw NumericError("rollout log-probabilities must be finite");
}

void GspoConfig::validate() const {
  if (group_size < 2) throw ConfigError("group_size must be >= 2");
  if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0))
    throw ConfigError("clip_epsilon must lie in (0, 1)");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (!(advantage_std_floor > 0.0))
    throw ConfigError("advantage_std_floor must be positive");
}

double mix_reward(double r_diff, double r_cor, std::optional<double> r_aux,
                  const RewardMix& mix) {
  mix.validate();
  double r = mix.alpha * r_diff + mix.beta * r_cor;
  if (r_aux) r += mix.gamma * *r_aux;
  return r;
}

std::vector<double> normalize_advantages(const std::vector<double>& rewards,
                                         double std_floor) {
  if (rewards.size() < 2)
    throw DimensionError("advantage normalization needs K >= 2 rewards");
  const double k = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= k;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= k;  // population variance
  const double sd = std::sqrt(var);
  std::vector<double> a(rewards.size(), 0.0);
  if (sd == 0.0) return a;  // degenerate group: no preference signal
  const double denom = std::max(sd, std_floor);
  for (std::size_t i = 0; i < rewards.size(); ++i)
    a[i] = (rewards[i] - mean) / denom;
  return a;
}

double sequence_importance_ratio(double logp_new, double logp_old, int length,
                                 bool* clamped) {
  if (length < 1) throw DimensionError("length must be >= 1");
  if (!std::isfinite(logp_new) || !std::isfinite(logp_old))
    throw NumericError("log-probabilities must be finite");
  const double rho = std::exp((logp_new - logp_old) / length);
  if (rho > kRatioCeiling) {
    if (clamped) *clamped = true;
    return kRatioCeiling;
  }
  return rho;
}

double gspo_objective(const RolloutGroup& group, const GspoConfig& config) {
  group.validate();
  config.validate();
  const std::vector<double> adv =
      normalize_advantages(group.rewards, config.advantage_std_floor);
  const double lo = 1.0 - config.clip_epsilon;
  const double hi = 1.0 + config.clip_epsilon;
  double total = 0.0;
  for (std::size_t k = 0; k < adv.size(); ++k) {
    const double rho = sequence_importance_ratio(group.logp_new[k],
                                                 group.logp_old[k],
                                                 group.lengths[k]);
    total += std::min(rho * adv[k], std::clamp(rho, lo, hi) * adv[k]);
  }
  return total / static_cast<double>(adv.size());
}

ToyPolicy::ToyPolicy(int vocab, int length) : vocab_(vocab), length_(length) {
  if (vocab < 2 || vocab > 16) throw ConfigError("toy vocab must lie in [2, 16]");
  if (length < 1 || length > 8) throw ConfigError("toy length must lie in [1, 8]");
  logits_.assign(static_cast<std::size_t>(vocab) * length, 0.0);
}

std::vector<int> ToyPolicy::sample_one(Rng& rng) const {
  std::vector<int> seq(length_);
  std::vector<double> weights(vocab_);
  for (int pos = 0; pos < length_; ++pos) {
    const double* row = logits_.data() + static_cast<std::size_t>(pos) * vocab_;
    double hi = row[0];
    for (int k = 1; k < vocab_; ++k) hi = std::max(hi, row[k]);
    for (int k = 0; k < vocab_; ++k) weights[k] = std::exp(row[k] - hi);
    seq[pos] = static_cast<int>(rng.categorical(weights));
  }
  return seq;
}

std::vector<std::vector<int>> ToyPolicy::sample(const std::string& prompt_id,
                                                int k, std::uint64_t seed) const {
  (void)prompt_id;  // the toy table is prompt-independent
  Rng rng(seed);
  std::vector<std::vector<int>> out(k);
  for (auto& seq : out) seq = sample_one(rng);
  return out;
}

double ToyPolicy::logprob(const std::string& prompt_id,
                          std::span<const int> sequence) const {
  (void)prompt_id;
  return logprob(sequence);
}

double ToyPolicy::logprob(std::span<const int> sequence) const {
  if (static_cast<int>(sequence.size()) != length_)
    throw DimensionError("sequence length does not match policy");
  double lp = 0.0;
  for (int pos = 0; pos < length_; ++pos) {
    const int tok = sequence[pos];
    if (tok < 0 || tok >= vocab_) throw DimensionError("token outside vocab");
    const double* row = logits_.data() + static_cast<std::size_t>(pos) * vocab_;
    lp += row[tok] - logsumexp_row(row, vocab_);
  }
  return lp;
}

void ToyPolicy::accumulate_logprob_grad(std::span<const int> sequence,
                                        double scale,
                                        std::vector<double>& grad) const {
  if (grad.size() != logits_.size())
    throw DimensionError("gradient buffer has wrong size");
  for (int pos = 0; pos < length_; ++pos) {
    const double* row = logits_.data() + static_cast<std::size_t>(pos) * vocab_;
    const double lse = logsumexp_row(row, vocab_);
    double* grow = grad.data() + static_cast<std::size_t>(pos) * vocab_;
    for (int k = 0; k < vocab_; ++k)
      grow[k] -= scale * std::exp(row[k] - lse);  // softmax term
    grow[sequence[pos]] += scale;
  }
}

double toy_surrogate(const ToyPolicy& policy, const RolloutGroup& group,
                     const GspoConfig& config) {
  RolloutGroup scored = group;
  for (std::size_t k = 0; k < group.completions.size(); ++k)
    scored.logp_new[k] = policy.logprob(group.completions[k]);
  return gspo_objective(scored, config);
}

std::vector<double> toy_surrogate_grad(const ToyPolicy& policy,
                                       const RolloutGroup& group,
                                       const GspoConfig& config) {
  group.validate();
  config.validate();
  const std::vector<double> adv =
      normalize_advantages(group.rewards, config.advantage_std_floor);
  const double lo = 1.0 - config.clip_epsilon;
  const double hi = 1.0 + config.clip_epsilon;
  const double inv_k = 1.0 / static_cast<double>(adv.size());

  std::vector<double> grad(policy.logits().size(), 0.0);
  for (std::size_t k = 0; k < adv.size(); ++k) {
    const double lp_new = policy.logprob(group.completions[k]);
    const double rho = sequence_importance_ratio(lp_new, group.logp_old[k],
                                                 group.lengths[k]);
    const double unclipped = rho * adv[k];
    const double clipped = std::clamp(rho, lo, hi) * adv[k];
    // gradient flows only through the unclipped branch of the min
    if (unclipped <= clipped) {
      const double scale =
          inv_k * adv[k] * rho / static_cast<double>(group.lengths[k]);
      policy.accumulate_logprob_grad(group.completions[k], scale, grad);
    }
  }
  return grad;
}

void ToyTask::validate() const {
  if (prompt_ids.empty()) throw ConfigError("toy task needs at least one prompt");
  if (vocab < 2 || vocab > 16) throw ConfigError("toy vocab must lie in [2, 16]");
  if (length < 1 || length > 8) throw ConfigError("toy length must lie in [1, 8]");
  if (target_token < 0 || target_token >= vocab)
    throw ConfigError("target_token outside vocab");
}

nlohmann::json toy_task_to_json(const ToyTask& task) {
  return {{"prompt_ids", task.prompt_ids},
          {"vocab", task.vocab},
          {"length", task.length},
          {"target_token", task.target_token}};
}

ToyTask toy_task_from_json(const nlohmann::json& j) {
  ToyTask task;
  task.prompt_ids = j.at("prompt_ids").get<std::vector<std::string>>();
  task.vocab = j.at("vocab").get<int>();
  task.length = j.at("length").get<int>();
  task.target_token = j.at("target_token").get<int>();
  task.validate();
  return task;
}

ToyReward make_target_reward(const ToyTask& task) {
  const int target = task.target_token;
  return [target](const std::string&, std::span<const int> seq) {
    int hits = 0;
    for (int tok : seq) hits += tok == target;
    return 2.0 * hits / static_cast<double>(seq.size()) - 1.0;
  };
}

ToyTrainResult train_toy_policy(const ToyTask& task, const ToyReward& reward_fn,
                                const GspoConfig& config) {
  task.validate();
  config.validate();

  ToyTrainResult result{ToyPolicy(task.vocab, task.length), {}, {}};
  ToyPolicy& policy = result.policy;
  result.curve.reserve(config.steps);

  for (int step = 0; step < config.steps; ++step) {
    const ToyPolicy sampler = policy;  // snapshot pi_theta_old
    double reward_sum = 0.0, ratio_sum = 0.0;
    long clipped = 0, total = 0;

    for (std::size_t p = 0; p < task.prompt_ids.size(); ++p) {
      const std::string& prompt = task.prompt_ids[p];
      const std::uint64_t group_seed =
          Rng::derive(Rng::derive(config.seed, static_cast<std::uint64_t>(step)),
                      static_cast<std::uint64_t>(p));
      RolloutGroup group;
      group.prompt_id = prompt;
      group.completions = sampler.sample(prompt, config.group_size, group_seed);
      for (const auto& seq : group.completions) {
        group.logp_old.push_back(sampler.logprob(seq));
        group.logp_new.push_back(policy.logprob(seq));
        group.lengths.push_back(static_cast<int>(seq.size()));
        group.rewards.push_back(reward_fn(prompt, seq));
      }

      for (std::size_t k = 0; k < group.completions.size(); ++k) {
        reward_sum += group.rewards[k];
        const double rho = sequence_importance_ratio(
            group.logp_new[k], group.logp_old[k], group.lengths[k]);
        ratio_sum += rho;
        clipped += rho < 1.0 - config.clip_epsilon ||
                   rho > 1.0 + config.clip_epsilon;
        ++total;
      }

      const std::vector<double> grad = toy_surrogate_grad(policy, group, config);
      for (std::size_t i = 0; i < grad.size(); ++i) {
        policy.logits()[i] += config.learning_rate * grad[i];
        if (!std::isfinite(policy.logits()[i]))
          throw NumericError("toy policy diverged at step " +
                             std::to_string(step) +
                             "; try a smaller learning_rate");
      }
    }

    GspoStepStats stats;
    stats.step = step;
    stats.mean_reward = reward_sum / static_cast<double>(total);
    stats.mean_ratio = ratio_sum / static_cast<double>(total);
    stats.clip_fraction = static_cast<double>(clipped) / static_cast<double>(total);
    result.curve.push_back(stats);
  }
  return result;
}

std::string gspo_curve_csv(const std::vector<GspoStepStats>& curve) {
  std::ostringstream out;
  out << "step,mean_reward,mean_ratio,clip_fraction\n";
  char buf[96];
  for (const auto& s : curve) {
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f", s.step, s.mean_reward,
                  s.mean_ratio, s.clip_fraction);
    out << buf << '\n';
  }
  return out.str();
}

}  // namespace diffcal
