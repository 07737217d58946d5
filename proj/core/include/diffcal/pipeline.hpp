#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffcal/augmentation.hpp"
#include "diffcal/datamodel.hpp"
#include "diffcal/evalsuite.hpp"
#include "diffcal/gspo.hpp"
#include "diffcal/irt.hpp"
#include "diffcal/ranker.hpp"

namespace diffcal {

// Connection settings shared by every gateway the pipeline opens. The same
// endpoint serves all model ids; mock mode swaps in scripted backends.
// Secrets only via named environment variables; never persisted in configs
// or caches.
struct GatewaySettings {
  std::string endpoint_url;
  std::string auth_token_env_var = "DIFFCAL_API_TOKEN";
  std::string judge_model = "judge-1";
  std::string embed_model = "embed-1";
  int max_parallel = 4;
  double timeout_seconds = 60.0;
  int retry_limit = 2;
};

struct CollectStageConfig {
  std::vector<std::string> student_models;
  std::string bank_path;      // empty in mock mode synthesizes a bank
  std::string rewrites_path;  // empty in mock mode synthesizes rewrites
  int num_questions = 60;     // synthetic bank size
  int num_topics = 5;
  int samples_per_question = 1;
};

struct MatrixStageConfig {
  double holdout_fraction = 0.2;
};

struct AugmentStageConfig {
  bool enable_vae = true;
  bool enable_sampling = true;
  VaeConfig vae;
  SamplingConfig sampling;
};

struct IrtStageConfig {
  IrtModelConfig model;
  bool use_augmented = true;
  bool sweep = true;      // model x prior x augmentation grid
  int sweep_steps = 600;  // shorter optimizer budget per sweep cell
  int mcmc_steps = 3000;
};

struct RankerStageConfig {
  RankerConfig ranker;
};

struct GspoStageConfig {
  GspoConfig gspo;
  ToyTask task;
};

struct EvalStageConfig {
  std::string original_runs_path;   // default: the collect stage's output
  std::string perturbed_runs_path;  // default: the collect stage's output
  LevelThresholds thresholds;
  int pass_n = 1;
  int judge_pairs = 10;  // leading questions sent to the pairwise judge
  std::string judge_criteria = "difficulty and faithfulness";
};

struct PipelineConfig {
  std::uint64_t seed = 42;
  std::string out_dir = "out";
  bool mock = true;

  GatewaySettings gateway;
  CollectStageConfig collect;
  MatrixStageConfig matrix;
  AugmentStageConfig augment;
  IrtStageConfig irt;
  RankerStageConfig ranker;
  GspoStageConfig gspo;
  EvalStageConfig eval;

  void validate() const;
};

PipelineConfig default_pipeline_config();
nlohmann::json pipeline_config_to_json(const PipelineConfig& config);
// Unknown keys are schema violations; absent keys keep their defaults.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
PipelineConfig load_pipeline_config(const std::string& path);

// collect, matrix, augment, irt-fit, embed, ranker-train, reward-score,
// gspo-toy, eval
const std::vector<std::string>& pipeline_stage_names();

// Per-stage seeds are derived from the global seed and the stage's position,
// so stages stay decoupled yet reproducible.
std::uint64_t stage_seed(const PipelineConfig& config, const std::string& stage);

// Runs one stage: loads its declared inputs (missing input -> dependency
// error naming the producer stage), writes its artifacts plus a
// <stage>.manifest.json with input digests, config digest, and seed.
void run_stage(const PipelineConfig& config, const std::string& stage);

void run_pipeline(const PipelineConfig& config);

// --- synthetic corpus for mock runs ------------------------------------------

// Arithmetic questions "Compute A + B. (level L)" over five difficulty
// bands, topics assigned round-robin.
std::vector<QuestionRecord> synthesize_question_bank(int num_questions,
                                                     int num_topics,
                                                     std::uint64_t seed);

// One rewrite per question, id "rw-" + original id: fresh operands, one
// difficulty band higher.
std::vector<QuestionRecord> synthesize_rewrites(
    const std::vector<QuestionRecord>& bank, std::uint64_t seed);

}  // namespace diffcal
