#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffcal/nn.hpp"

namespace diffcal {

struct RankItem {
  std::string question_id;
  std::string topic;
  std::vector<float> embedding;
  double difficulty = 0.0;
};

// Ordered pair: label 1 iff left is harder. Ids are kept so cross-validation
// folds can split by question rather than by pair.
struct RankPair {
  std::string left_id, right_id;
  std::vector<float> left_embedding, right_embedding;
  int label = 0;
  double weight = 0.0;  // sqrt(|d_left - d_right|)
};

struct RankerConfig {
  std::vector<int> hidden_dims = {512, 256};
  double dropout = 0.3;
  int batch_size = 64;
  int epochs = 8;
  int folds = 5;
  double learning_rate = 1e-3;
  std::uint64_t seed = 42;
  double min_gap = 1e-6;          // pairs closer than this in difficulty are skipped
  std::size_t pair_cap = 200000;  // per-topic cap, seeded subsampling beyond it

  void validate() const;
};

struct TrainMetrics {
  std::vector<double> fold_auc;  // NaN for folds whose validation AUC is undefined
  double mean_auc = 0.0;
  std::vector<std::string> notes;
};

struct DifficultyRanker {
  RankerConfig config;
  int embed_dim = 0;
  std::vector<nn::DenseLayer> layers;  // 4D -> hidden... -> 1 logit
  TrainMetrics train_metrics;
};

struct PairGenReport {
  std::vector<std::string> capped_topics;
  std::size_t emitted = 0;
};

// Same-topic ordered pairs plus symmetric counterparts, in a deterministic
// order (topics and ids sorted). Cross-topic pairs are never formed.
std::vector<RankPair> generate_pairs(const std::vector<RankItem>& items,
                                     const RankerConfig& config,
                                     PairGenReport* report = nullptr);

// concat(e_i, e_j, e_i - e_j, |e_i - e_j|), length 4D
std::vector<float> fuse_features(const std::vector<float>& e_i,
                                 const std::vector<float>& e_j);

// Weighted binary cross-entropy over mini-batches, k-fold cross-validated
// AUC recorded (folds split by question id), then a final fit on all pairs.
DifficultyRanker train_ranker(const std::vector<RankPair>& pairs,
                              const RankerConfig& config);

// p(left harder than right); dropout disabled, logistic applied in double so
// the result stays strictly inside (0,1).
double score_pair(const DifficultyRanker& ranker, const std::vector<float>& e_i,
                  const std::vector<float>& e_j);

// R_diff = p(rewrite harder than original) - p(original harder than rewrite);
// exactly antisymmetric under argument swap.
double difficulty_reward(const DifficultyRanker& ranker,
                         const std::vector<float>& e_original,
                         const std::vector<float>& e_rewrite);

nlohmann::json ranker_to_json(const DifficultyRanker& ranker);
DifficultyRanker ranker_from_json(const nlohmann::json& j);
std::string ranker_report_csv(const TrainMetrics& metrics);

}  // namespace diffcal
