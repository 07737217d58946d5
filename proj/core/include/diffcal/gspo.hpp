#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffcal/rng.hpp"

namespace diffcal {

struct RewardMix {
  double alpha = 0.5;  // weight on the difficulty reward
  double beta = 0.5;   // weight on the correctness reward
  double gamma = 0.0;  // auxiliary hook, disabled by default

  void validate() const;
};

// One prompt's sampled group: K completions with log-probabilities under the
// current and sampling policies, response lengths, and mixed rewards.
struct RolloutGroup {
  std::string prompt_id;
  std::vector<std::vector<int>> completions;
  std::vector<double> logp_new;
  std::vector<double> logp_old;
  std::vector<int> lengths;
  std::vector<double> rewards;

  void validate() const;  // arrays agree on K >= 2, lengths >= 1
};

struct GspoConfig {
  int group_size = 4;
  double clip_epsilon = 0.1;
  double learning_rate = 0.1;
  int steps = 200;
  std::uint64_t seed = 42;
  double advantage_std_floor = 1e-8;

  void validate() const;
};

// R = alpha * r_diff + beta * r_cor (+ gamma * r_aux when the hook is fed).
double mix_reward(double r_diff, double r_cor, std::optional<double> r_aux,
                  const RewardMix& mix);

// A_k = (R_k - mean) / max(population std, std_floor); an all-equal group
// yields all zeros rather than dividing by the floor.
std::vector<double> normalize_advantages(const std::vector<double>& rewards,
                                         double std_floor);

// rho = exp((logp_new - logp_old) / length). Overflow clamps to a large
// finite ceiling and sets *clamped.
double sequence_importance_ratio(double logp_new, double logp_old, int length,
                                 bool* clamped = nullptr);

// (1/K) sum_k min(rho_k A_k, clip(rho_k, 1-eps, 1+eps) A_k)
double gspo_objective(const RolloutGroup& group, const GspoConfig& config);

// Sampling/scoring contract an optimizable policy must satisfy.
class GenerativePolicy {
 public:
  virtual ~GenerativePolicy() = default;
  virtual std::vector<std::vector<int>> sample(const std::string& prompt_id,
                                               int k, std::uint64_t seed) const = 0;
  virtual double logprob(const std::string& prompt_id,
                         std::span<const int> sequence) const = 0;
};

// Per-position categorical sequence model, small enough for exact gradient
// checks (vocab <= 16, length <= 8). The same table serves every prompt.
class ToyPolicy : public GenerativePolicy {
 public:
  ToyPolicy(int vocab, int length);

  int vocab() const { return vocab_; }
  int length() const { return length_; }
  std::vector<double>& logits() { return logits_; }          // length x vocab
  const std::vector<double>& logits() const { return logits_; }

  std::vector<int> sample_one(Rng& rng) const;
  std::vector<std::vector<int>> sample(const std::string& prompt_id, int k,
                                       std::uint64_t seed) const override;
  double logprob(const std::string& prompt_id,
                 std::span<const int> sequence) const override;
  double logprob(std::span<const int> sequence) const;
  // d logprob / d logits, accumulated into grad (length x vocab flat)
  void accumulate_logprob_grad(std::span<const int> sequence, double scale,
                               std::vector<double>& grad) const;

 private:
  int vocab_;
  int length_;
  std::vector<double> logits_;
};

// Surrogate value/gradient as a function of the policy: logp_new is
// recomputed from `policy`, while logp_old and rewards stay fixed in the
// group. Used by the trainer and by finite-difference checks.
double toy_surrogate(const ToyPolicy& policy, const RolloutGroup& group,
                     const GspoConfig& config);
std::vector<double> toy_surrogate_grad(const ToyPolicy& policy,
                                       const RolloutGroup& group,
                                       const GspoConfig& config);

struct ToyTask {
  std::vector<std::string> prompt_ids;
  int vocab = 8;
  int length = 4;
  int target_token = 0;

  void validate() const;
};

nlohmann::json toy_task_to_json(const ToyTask& task);
ToyTask toy_task_from_json(const nlohmann::json& j);

using ToyReward =
    std::function<double(const std::string& prompt_id, std::span<const int> seq)>;

// Fraction of positions emitting the target token, rescaled to [-1, 1].
ToyReward make_target_reward(const ToyTask& task);

struct GspoStepStats {
  int step = 0;
  double mean_reward = 0.0;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
};

struct ToyTrainResult {
  ToyPolicy policy;
  std::vector<GspoStepStats> curve;
  std::string diagnostics;
};

// Per iteration: snapshot the sampling policy, then for each prompt sample a
// group, normalize advantages, and take one ascent step. Later prompts in an
// iteration therefore see ratios away from 1.
ToyTrainResult train_toy_policy(const ToyTask& task, const ToyReward& reward_fn,
                                const GspoConfig& config);

std::string gspo_curve_csv(const std::vector<GspoStepStats>& curve);

}  // namespace diffcal
