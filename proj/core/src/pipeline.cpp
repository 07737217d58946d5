#include "diffcal/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "diffcal/digest.hpp"
#include "diffcal/errors.hpp"
#include "diffcal/fsio.hpp"
#include "diffcal/gateway.hpp"
#include "diffcal/rng.hpp"

namespace diffcal {

namespace {

// --- config schema -----------------------------------------------------------

void check_keys(const nlohmann::json& j, const std::string& object_name,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object())
    throw ConfigError("config section '" + object_name + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) {
          return key == a;
        }) == allowed.end())
      throw ConfigError("unknown key '" + key + "' in config section '" +
                        object_name + "'");
  }
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

nlohmann::json gateway_to_json(const GatewaySettings& g) {
  return {{"endpoint_url", g.endpoint_url},
          {"auth_token_env_var", g.auth_token_env_var},
          {"judge_model", g.judge_model},
          {"embed_model", g.embed_model},
          {"max_parallel", g.max_parallel},
          {"timeout_seconds", g.timeout_seconds},
          {"retry_limit", g.retry_limit}};
}

void gateway_from_json(const nlohmann::json& j, GatewaySettings& g) {
  check_keys(j, "gateway",
             {"endpoint_url", "auth_token_env_var", "judge_model",
              "embed_model", "max_parallel", "timeout_seconds", "retry_limit"});
  read_field(j, "endpoint_url", g.endpoint_url);
  read_field(j, "auth_token_env_var", g.auth_token_env_var);
  read_field(j, "judge_model", g.judge_model);
  read_field(j, "embed_model", g.embed_model);
  read_field(j, "max_parallel", g.max_parallel);
  read_field(j, "timeout_seconds", g.timeout_seconds);
  read_field(j, "retry_limit", g.retry_limit);
}

nlohmann::json collect_to_json(const CollectStageConfig& c) {
  return {{"student_models", c.student_models},
          {"bank_path", c.bank_path},
          {"rewrites_path", c.rewrites_path},
          {"num_questions", c.num_questions},
          {"num_topics", c.num_topics},
          {"samples_per_question", c.samples_per_question}};
}

void collect_from_json(const nlohmann::json& j, CollectStageConfig& c) {
  check_keys(j, "collect",
             {"student_models", "bank_path", "rewrites_path", "num_questions",
              "num_topics", "samples_per_question"});
  read_field(j, "student_models", c.student_models);
  read_field(j, "bank_path", c.bank_path);
  read_field(j, "rewrites_path", c.rewrites_path);
  read_field(j, "num_questions", c.num_questions);
  read_field(j, "num_topics", c.num_topics);
  read_field(j, "samples_per_question", c.samples_per_question);
}

nlohmann::json augment_to_json(const AugmentStageConfig& a) {
  return {{"enable_vae", a.enable_vae},
          {"enable_sampling", a.enable_sampling},
          {"vae",
           {{"latent_dim", a.vae.latent_dim},
            {"kld_weight", a.vae.kld_weight},
            {"hidden_dims", a.vae.hidden_dims},
            {"epochs", a.vae.epochs},
            {"learning_rate", a.vae.learning_rate},
            {"num_generate", a.vae.num_generate}}},
          {"sampling", {{"num_generate", a.sampling.num_generate}}}};
}

void augment_from_json(const nlohmann::json& j, AugmentStageConfig& a) {
  check_keys(j, "augment", {"enable_vae", "enable_sampling", "vae", "sampling"});
  read_field(j, "enable_vae", a.enable_vae);
  read_field(j, "enable_sampling", a.enable_sampling);
  if (j.contains("vae")) {
    const auto& v = j.at("vae");
    check_keys(v, "augment.vae",
               {"latent_dim", "kld_weight", "hidden_dims", "epochs",
                "learning_rate", "num_generate"});
    read_field(v, "latent_dim", a.vae.latent_dim);
    read_field(v, "kld_weight", a.vae.kld_weight);
    read_field(v, "hidden_dims", a.vae.hidden_dims);
    read_field(v, "epochs", a.vae.epochs);
    read_field(v, "learning_rate", a.vae.learning_rate);
    read_field(v, "num_generate", a.vae.num_generate);
  }
  if (j.contains("sampling")) {
    const auto& s = j.at("sampling");
    check_keys(s, "augment.sampling", {"num_generate"});
    read_field(s, "num_generate", a.sampling.num_generate);
  }
}

nlohmann::json irt_to_json(const IrtStageConfig& i) {
  return {{"model", to_string(i.model.model_kind)},
          {"prior", to_string(i.model.prior_kind)},
          {"steps", i.model.steps},
          {"learning_rate", i.model.learning_rate},
          {"mc_samples", i.model.mc_samples},
          {"use_augmented", i.use_augmented},
          {"sweep", i.sweep},
          {"sweep_steps", i.sweep_steps},
          {"mcmc_steps", i.mcmc_steps}};
}

void irt_from_json(const nlohmann::json& j, IrtStageConfig& i) {
  check_keys(j, "irt",
             {"model", "prior", "steps", "learning_rate", "mc_samples",
              "use_augmented", "sweep", "sweep_steps", "mcmc_steps"});
  if (j.contains("model"))
    i.model.model_kind = irt_model_kind_from_string(j.at("model").get<std::string>());
  if (j.contains("prior"))
    i.model.prior_kind = prior_kind_from_string(j.at("prior").get<std::string>());
  read_field(j, "steps", i.model.steps);
  read_field(j, "learning_rate", i.model.learning_rate);
  read_field(j, "mc_samples", i.model.mc_samples);
  read_field(j, "use_augmented", i.use_augmented);
  read_field(j, "sweep", i.sweep);
  read_field(j, "sweep_steps", i.sweep_steps);
  read_field(j, "mcmc_steps", i.mcmc_steps);
}

nlohmann::json ranker_to_json_cfg(const RankerStageConfig& r) {
  return {{"hidden_dims", r.ranker.hidden_dims},
          {"dropout", r.ranker.dropout},
          {"batch_size", r.ranker.batch_size},
          {"epochs", r.ranker.epochs},
          {"folds", r.ranker.folds},
          {"learning_rate", r.ranker.learning_rate},
          {"min_gap", r.ranker.min_gap},
          {"pair_cap", r.ranker.pair_cap}};
}

void ranker_from_json_cfg(const nlohmann::json& j, RankerStageConfig& r) {
  check_keys(j, "ranker",
             {"hidden_dims", "dropout", "batch_size", "epochs", "folds",
              "learning_rate", "min_gap", "pair_cap"});
  read_field(j, "hidden_dims", r.ranker.hidden_dims);
  read_field(j, "dropout", r.ranker.dropout);
  read_field(j, "batch_size", r.ranker.batch_size);
  read_field(j, "epochs", r.ranker.epochs);
  read_field(j, "folds", r.ranker.folds);
  read_field(j, "learning_rate", r.ranker.learning_rate);
  read_field(j, "min_gap", r.ranker.min_gap);
  read_field(j, "pair_cap", r.ranker.pair_cap);
}

nlohmann::json gspo_to_json_cfg(const GspoStageConfig& g) {
  return {{"group_size", g.gspo.group_size},
          {"clip_epsilon", g.gspo.clip_epsilon},
          {"learning_rate", g.gspo.learning_rate},
          {"steps", g.gspo.steps},
          {"task", toy_task_to_json(g.task)}};
}

void gspo_from_json_cfg(const nlohmann::json& j, GspoStageConfig& g) {
  check_keys(j, "gspo",
             {"group_size", "clip_epsilon", "learning_rate", "steps", "task"});
  read_field(j, "group_size", g.gspo.group_size);
  read_field(j, "clip_epsilon", g.gspo.clip_epsilon);
  read_field(j, "learning_rate", g.gspo.learning_rate);
  read_field(j, "steps", g.gspo.steps);
  if (j.contains("task")) g.task = toy_task_from_json(j.at("task"));
}

nlohmann::json eval_to_json(const EvalStageConfig& e) {
  return {{"original_runs_path", e.original_runs_path},
          {"perturbed_runs_path", e.perturbed_runs_path},
          {"easy_min", e.thresholds.easy_min},
          {"hard_max", e.thresholds.hard_max},
          {"pass_n", e.pass_n},
          {"judge_pairs", e.judge_pairs},
          {"judge_criteria", e.judge_criteria}};
}

void eval_from_json(const nlohmann::json& j, EvalStageConfig& e) {
  check_keys(j, "eval",
             {"original_runs_path", "perturbed_runs_path", "easy_min",
              "hard_max", "pass_n", "judge_pairs", "judge_criteria"});
  read_field(j, "original_runs_path", e.original_runs_path);
  read_field(j, "perturbed_runs_path", e.perturbed_runs_path);
  read_field(j, "easy_min", e.thresholds.easy_min);
  read_field(j, "hard_max", e.thresholds.hard_max);
  read_field(j, "pass_n", e.pass_n);
  read_field(j, "judge_pairs", e.judge_pairs);
  read_field(j, "judge_criteria", e.judge_criteria);
}

// --- artifacts and manifests --------------------------------------------------

std::string artifact_path(const PipelineConfig& config, const char* name) {
  return config.out_dir + "/" + name;
}

std::string require_artifact(const PipelineConfig& config, const char* name,
                             const char* producer) {
  const std::string path = artifact_path(config, name);
  if (!file_exists(path))
    throw DependencyError("missing artifact " + path + "; run the " +
                          producer + " stage first");
  return path;
}

class ManifestBuilder {
 public:
  explicit ManifestBuilder(const PipelineConfig& config, std::string stage)
      : config_(config), stage_(std::move(stage)) {}

  std::string input(const std::string& path) {
    inputs_[path] = sha256_file(path);
    return path;
  }
  void output(const std::string& path) { outputs_[path] = sha256_file(path); }

  void write() const {
    const nlohmann::json j = {
        {"stage", stage_},
        {"seed", stage_seed(config_, stage_)},
        {"config_digest", sha256_hex(pipeline_config_to_json(config_).dump())},
        {"inputs", inputs_},
        {"outputs", outputs_}};
    write_file_atomic(artifact_path(config_, (stage_ + ".manifest.json").c_str()),
                      j.dump(2) + "\n");
  }

 private:
  const PipelineConfig& config_;
  std::string stage_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> outputs_;
};

void write_artifact(ManifestBuilder& manifest, const std::string& path,
                    const std::string& content) {
  write_file_atomic(path, content);
  manifest.output(path);
}

// --- gateways ------------------------------------------------------------------

std::shared_ptr<Backend> make_backend(const PipelineConfig& config,
                                      const std::string& model_id) {
  BackendConfig bc;
  bc.endpoint_url = config.gateway.endpoint_url;
  bc.model_id = model_id;
  bc.auth_token_env_var = config.gateway.auth_token_env_var;
  bc.max_parallel = config.gateway.max_parallel;
  bc.timeout_seconds = config.gateway.timeout_seconds;
  bc.retry_limit = config.gateway.retry_limit;
  bc.cache_dir = config.out_dir + "/cache";
  if (config.mock) return std::make_shared<MockBackend>(bc);
  return std::make_shared<HttpBackend>(bc);
}

Gateway make_gateway(const PipelineConfig& config, const std::string& model_id) {
  return Gateway(make_backend(config, model_id));
}

// --- shared loading helpers -----------------------------------------------------

std::vector<QuestionRecord> load_corpus(const PipelineConfig& config) {
  std::vector<QuestionRecord> corpus =
      load_question_bank(require_artifact(config, "bank.jsonl", "collect"));
  const std::string rw_path = artifact_path(config, "rewrites.jsonl");
  if (file_exists(rw_path)) {
    for (auto& q : load_question_bank(rw_path)) corpus.push_back(std::move(q));
  }
  return corpus;
}

std::map<std::string, std::vector<float>> load_embedding_map(
    const PipelineConfig& config) {
  std::map<std::string, std::vector<float>> out;
  for (auto& record : load_embedding_bank(
           require_artifact(config, "embeddings.jsonl", "embed")))
    out[record.question_id] = std::move(record.vector);
  return out;
}

std::vector<long> numbers_in(const std::string& text) {
  std::vector<long> out;
  for (std::size_t i = 0; i < text.size();) {
    if (std::isdigit(static_cast<unsigned char>(text[i]))) {
      char* end = nullptr;
      out.push_back(std::strtol(text.c_str() + i, &end, 10));
      i = static_cast<std::size_t>(end - text.c_str());
    } else {
      ++i;
    }
  }
  return out;
}

// --- stages ---------------------------------------------------------------------

void run_collect(const PipelineConfig& config) {
  const std::uint64_t seed = stage_seed(config, "collect");
  ManifestBuilder manifest(config, "collect");

  std::vector<QuestionRecord> bank;
  if (!config.collect.bank_path.empty()) {
    bank = load_question_bank(manifest.input(config.collect.bank_path));
  } else if (config.mock) {
    bank = synthesize_question_bank(config.collect.num_questions,
                                    config.collect.num_topics,
                                    Rng::derive(seed, 1));
  } else {
    throw ConfigError("collect.bank_path is required outside mock mode");
  }

  std::vector<QuestionRecord> rewrites;
  if (!config.collect.rewrites_path.empty()) {
    rewrites = load_question_bank(manifest.input(config.collect.rewrites_path));
  } else if (config.mock) {
    rewrites = synthesize_rewrites(bank, Rng::derive(seed, 2));
  }

  std::vector<QuestionRecord> corpus = bank;
  corpus.insert(corpus.end(), rewrites.begin(), rewrites.end());

  // rewrite id -> the original id its run outcomes are keyed under
  std::map<std::string, std::string> rewrite_origin;
  for (const auto& rw : rewrites)
    if (rw.id.rfind("rw-", 0) == 0) rewrite_origin[rw.id] = rw.id.substr(3);

  const int samples = std::max(1, config.collect.samples_per_question);
  std::vector<ResponseTriple> log;
  std::vector<BenchmarkRun> original_runs, perturbed_runs;

  for (const std::string& student : config.collect.student_models) {
    Gateway gateway = make_gateway(config, student);
    std::vector<AnswerResult> results(corpus.size());
    parallel_for(corpus.size(), config.gateway.max_parallel, [&](std::size_t i) {
      results[i] = answer_question(gateway, corpus[i]);
    });

    BenchmarkRun original{"original", student, {}};
    BenchmarkRun perturbed{"perturbed", student, {}};
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      log.push_back({student, corpus[i].id, results[i].correct});
      // a deterministic cached backend answers every sample identically
      const std::vector<int> outcome(static_cast<std::size_t>(samples),
                                     results[i].correct);
      const auto origin = rewrite_origin.find(corpus[i].id);
      if (origin != rewrite_origin.end())
        perturbed.outcomes[origin->second] = outcome;
      else
        original.outcomes[corpus[i].id] = outcome;
    }
    original_runs.push_back(std::move(original));
    if (!perturbed.outcomes.empty()) perturbed_runs.push_back(std::move(perturbed));
  }

  write_artifact(manifest, artifact_path(config, "bank.jsonl"),
                 serialize_question_bank(bank));
  write_artifact(manifest, artifact_path(config, "rewrites.jsonl"),
                 serialize_question_bank(rewrites));
  write_artifact(manifest, artifact_path(config, "response_log.jsonl"),
                 serialize_response_log(log));
  write_artifact(manifest, artifact_path(config, "runs_original.jsonl"),
                 serialize_benchmark_runs(original_runs));
  write_artifact(manifest, artifact_path(config, "runs_perturbed.jsonl"),
                 serialize_benchmark_runs(perturbed_runs));
  manifest.write();
}

void run_matrix(const PipelineConfig& config) {
  const std::uint64_t seed = stage_seed(config, "matrix");
  ManifestBuilder manifest(config, "matrix");
  const std::vector<ResponseTriple> log = load_response_log(
      manifest.input(require_artifact(config, "response_log.jsonl", "collect")));
  ResponseMatrix matrix = build_response_matrix(log);
  if (config.matrix.holdout_fraction > 0.0)
    matrix = mask_holdout(matrix, config.matrix.holdout_fraction, seed);
  write_artifact(manifest, artifact_path(config, "matrix.txt"),
                 serialize_matrix(matrix));
  manifest.write();
}

void run_augment(const PipelineConfig& config) {
  const std::uint64_t seed = stage_seed(config, "augment");
  ManifestBuilder manifest(config, "augment");
  const ResponseMatrix base = load_matrix(
      manifest.input(require_artifact(config, "matrix.txt", "matrix")));

  std::vector<std::vector<std::uint8_t>> vae_rows, sampled_rows;
  std::string loss_csv = "epoch,loss\n";
  if (config.augment.enable_vae) {
    VaeConfig vc = config.augment.vae;
    vc.seed = Rng::derive(seed, 1);
    const VaeGenerator generator = train_vae(base, vc);
    vae_rows = generate_vae_students(generator, vc.num_generate,
                                     Rng::derive(seed, 2));
    char line[64];
    for (std::size_t e = 0; e < generator.loss_trace.size(); ++e) {
      std::snprintf(line, sizeof line, "%zu,%.6f\n", e, generator.loss_trace[e]);
      loss_csv += line;
    }
  }
  if (config.augment.enable_sampling) {
    SamplingConfig sc = config.augment.sampling;
    sc.seed = Rng::derive(seed, 3);
    sampled_rows = sample_students(empirical_rates(base), sc);
  }

  const ResponseMatrix augmented = augment_matrix(base, vae_rows, sampled_rows);
  write_artifact(manifest, artifact_path(config, "augmented.txt"),
                 serialize_matrix(augmented));
  write_artifact(manifest, artifact_path(config, "vae_loss.csv"), loss_csv);
  manifest.write();
}

struct SweepRow {
  IrtModelKind model;
  bool mcmc = false;
  bool vae = false;
  bool sampling = false;
  PriorKind prior;
  std::optional<double> auc;
  double brier = 0.0;
};

std::string sweep_markdown(const std::vector<SweepRow>& rows) {
  std::string md =
      "| Model | Method | VAE | Sampling | Prior | AUC-ROC | Brier |\n"
      "|---|---|---|---|---|---|---|\n";
  char buf[160];
  for (const auto& r : rows) {
    const char* model = r.model == IrtModelKind::onePL   ? "1-PL"
                        : r.model == IrtModelKind::twoPL ? "2-PL"
                                                         : "3-PL";
    std::string auc = "n/a";
    if (r.auc) {
      std::snprintf(buf, sizeof buf, "%.2f", *r.auc);
      auc = buf;
    }
    std::snprintf(buf, sizeof buf, "| %s | %s | %s | %s | %s | %s | %.2f |\n",
                  model, r.mcmc ? "MCMC" : "VI", r.vae ? "yes" : "-",
                  r.sampling ? "yes" : "-", to_string(r.prior), auc.c_str(),
                  r.brier);
    md += buf;
  }
  return md;
}

nlohmann::json sweep_json(const std::vector<SweepRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json item = {{"model", to_string(r.model)},
                           {"method", r.mcmc ? "MCMC" : "VI"},
                           {"vae", r.vae},
                           {"sampling", r.sampling},
                           {"prior", to_string(r.prior)},
                           {"brier", r.brier}};
    item["auc_roc"] = r.auc ? nlohmann::json(*r.auc) : nlohmann::json();
    out.push_back(item);
  }
  return out;
}

void run_irt_fit(const PipelineConfig& config) {
  const std::uint64_t seed = stage_seed(config, "irt-fit");
  ManifestBuilder manifest(config, "irt-fit");

  const std::string base_path =
      manifest.input(require_artifact(config, "matrix.txt", "matrix"));
  const ResponseMatrix base = load_matrix(base_path);
  ResponseMatrix fit_input = base;
  if (config.irt.use_augmented)
    fit_input = load_matrix(
        manifest.input(require_artifact(config, "augmented.txt", "augment")));

  IrtModelConfig mc = config.irt.model;
  mc.seed = Rng::derive(seed, 0);
  const CalibrationResult result = fit_svi(fit_input, mc);
  const HoldoutMetrics holdout = evaluate_holdout(result, fit_input);

  nlohmann::json holdout_json = {{"brier", holdout.brier},
                                 {"note", holdout.note}};
  holdout_json["auc_roc"] =
      holdout.auc_roc ? nlohmann::json(*holdout.auc_roc) : nlohmann::json();

  write_artifact(manifest, artifact_path(config, "calibration.json"),
                 calibration_to_json(result).dump(2) + "\n");
  write_artifact(manifest, artifact_path(config, "abilities.csv"),
                 calibration_ability_csv(result, fit_input));
  write_artifact(manifest, artifact_path(config, "holdout.json"),
                 holdout_json.dump(2) + "\n");

  if (config.irt.sweep) {
    // augmentation variants are regenerated here so the sweep is
    // self-contained even when the augment stage was skipped
    VaeConfig vc = config.augment.vae;
    vc.seed = Rng::derive(seed, 10);
    const VaeGenerator generator = train_vae(base, vc);
    const auto vae_rows = generate_vae_students(generator, vc.num_generate,
                                                Rng::derive(seed, 11));
    SamplingConfig sc = config.augment.sampling;
    sc.seed = Rng::derive(seed, 12);
    const auto sampled_rows = sample_students(empirical_rates(base), sc);

    const std::vector<std::vector<std::uint8_t>> none;
    const ResponseMatrix variants[4] = {
        base, augment_matrix(base, vae_rows, none),
        augment_matrix(base, none, sampled_rows),
        augment_matrix(base, vae_rows, sampled_rows)};
    const bool uses_vae[4] = {false, true, false, true};
    const bool uses_sampling[4] = {false, false, true, true};

    std::vector<SweepRow> rows;
    std::uint64_t cell = 100;
    for (IrtModelKind kind :
         {IrtModelKind::onePL, IrtModelKind::twoPL, IrtModelKind::threePL}) {
      for (int v = 0; v < 4; ++v) {
        for (PriorKind prior : {PriorKind::vague, PriorKind::hierarchical}) {
          IrtModelConfig cfg;
          cfg.model_kind = kind;
          cfg.prior_kind = prior;
          cfg.steps = config.irt.sweep_steps;
          cfg.learning_rate = config.irt.model.learning_rate;
          cfg.mc_samples = config.irt.model.mc_samples;
          cfg.seed = Rng::derive(seed, cell++);
          const CalibrationResult cal = fit_svi(variants[v], cfg);
          const HoldoutMetrics metrics = evaluate_holdout(cal, variants[v]);
          rows.push_back({kind, false, uses_vae[v], uses_sampling[v], prior,
                          metrics.auc_roc, metrics.brier});
        }
      }
      if (kind == IrtModelKind::onePL) {
        for (PriorKind prior : {PriorKind::vague, PriorKind::hierarchical}) {
          IrtModelConfig cfg;
          cfg.model_kind = kind;
          cfg.prior_kind = prior;
          cfg.steps = config.irt.mcmc_steps;
          cfg.seed = Rng::derive(seed, cell++);
          const CalibrationResult cal = fit_mcmc(base, cfg);
          const HoldoutMetrics metrics = evaluate_holdout(cal, base);
          rows.push_back(
              {kind, true, false, false, prior, metrics.auc_roc, metrics.brier});
        }
      }
    }
    write_artifact(manifest, artifact_path(config, "irt_sweep.md"),
                   sweep_markdown(rows));
    write_artifact(manifest, artifact_path(config, "irt_sweep.json"),
                   sweep_json(rows).dump(2) + "\n");
  }
  manifest.write();
}

void run_embed(const PipelineConfig& config) {
  ManifestBuilder manifest(config, "embed");
  manifest.input(require_artifact(config, "bank.jsonl", "collect"));
  const std::string rw_path = artifact_path(config, "rewrites.jsonl");
  if (file_exists(rw_path)) manifest.input(rw_path);
  const std::vector<QuestionRecord> corpus = load_corpus(config);

  Gateway gateway = make_gateway(config, config.gateway.embed_model);
  std::vector<EmbeddingRecord> records(corpus.size());
  parallel_for(corpus.size(), config.gateway.max_parallel, [&](std::size_t i) {
    records[i] = embed(gateway, corpus[i].text);
    records[i].question_id = corpus[i].id;
  });
  for (const auto& r : records)
    if (r.dim() != records.front().dim())
      throw DimensionError("embedding dimensions disagree across questions");

  write_artifact(manifest, artifact_path(config, "embeddings.jsonl"),
                 serialize_embedding_bank(records));
  manifest.write();
}

void run_ranker_train(const PipelineConfig& config) {
  const std::uint64_t seed = stage_seed(config, "ranker-train");
  ManifestBuilder manifest(config, "ranker-train");

  const nlohmann::json calibration = nlohmann::json::parse(read_file(
      manifest.input(require_artifact(config, "calibration.json", "irt-fit"))));
  manifest.input(require_artifact(config, "embeddings.jsonl", "embed"));
  const auto embeddings = load_embedding_map(config);
  const std::vector<QuestionRecord> corpus = load_corpus(config);

  const auto& difficulties = calibration.at("difficulties");
  std::vector<RankItem> items;
  for (const auto& q : corpus) {
    const auto emb = embeddings.find(q.id);
    if (emb == embeddings.end() || !difficulties.contains(q.id)) continue;
    items.push_back({q.id, q.topic, emb->second,
                     difficulties.at(q.id).at("mean").get<double>()});
  }
  if (items.empty())
    throw MissingDataError("no questions with both embedding and difficulty");

  RankerConfig rc = config.ranker.ranker;
  rc.seed = seed;
  PairGenReport report;
  const std::vector<RankPair> pairs = generate_pairs(items, rc, &report);
  const DifficultyRanker ranker = train_ranker(pairs, rc);

  write_artifact(manifest, artifact_path(config, "ranker.json"),
                 ranker_to_json(ranker).dump(2) + "\n");
  write_artifact(manifest, artifact_path(config, "ranker_cv.csv"),
                 ranker_report_csv(ranker.train_metrics));
  manifest.write();
}

void run_reward_score(const PipelineConfig& config) {
  ManifestBuilder manifest(config, "reward-score");
  const DifficultyRanker ranker = ranker_from_json(nlohmann::json::parse(
      read_file(manifest.input(
          require_artifact(config, "ranker.json", "ranker-train")))));
  manifest.input(require_artifact(config, "embeddings.jsonl", "embed"));
  const auto embeddings = load_embedding_map(config);
  const std::vector<QuestionRecord> corpus = load_corpus(config);

  std::map<std::string, const QuestionRecord*> by_id;
  for (const auto& q : corpus) by_id[q.id] = &q;

  Gateway verifier = make_gateway(config, config.gateway.judge_model);
  const RewardMix mix;

  std::string csv = "question_id,rewrite_id,r_diff,r_cor,reward\n";
  char line[256];
  for (const auto& q : corpus) {
    if (q.id.rfind("rw-", 0) == 0) continue;
    const std::string rw_id = "rw-" + q.id;
    const auto rw = by_id.find(rw_id);
    const auto e_orig = embeddings.find(q.id);
    const auto e_rw = embeddings.find(rw_id);
    if (rw == by_id.end() || e_orig == embeddings.end() ||
        e_rw == embeddings.end())
      continue;
    const double r_diff =
        difficulty_reward(ranker, e_orig->second, e_rw->second);
    const std::string solution =
        "Adding the two terms gives " + rw->second->answer + ".";
    const VerifierVerdict verdict =
        verify_rewrite(verifier, rw->second->text, solution, rw->second->answer);
    const double reward =
        mix_reward(r_diff, static_cast<double>(verdict.reward), std::nullopt, mix);
    std::snprintf(line, sizeof line, "%s,%s,%.6f,%d,%.6f\n", q.id.c_str(),
                  rw_id.c_str(), r_diff, verdict.reward, reward);
    csv += line;
  }
  write_artifact(manifest, artifact_path(config, "rewards.csv"), csv);
  manifest.write();
}

void run_gspo_toy(const PipelineConfig& config) {
  const std::uint64_t seed = stage_seed(config, "gspo-toy");
  ManifestBuilder manifest(config, "gspo-toy");

  GspoConfig gc = config.gspo.gspo;
  gc.seed = seed;
  const ToyTask& task = config.gspo.task;
  const ToyTrainResult result =
      train_toy_policy(task, make_target_reward(task), gc);

  nlohmann::json logits = nlohmann::json::array();
  for (int pos = 0; pos < result.policy.length(); ++pos) {
    nlohmann::json row = nlohmann::json::array();
    for (int v = 0; v < result.policy.vocab(); ++v)
      row.push_back(result.policy.logits()[static_cast<std::size_t>(
          pos * result.policy.vocab() + v)]);
    logits.push_back(row);
  }
  const nlohmann::json policy_json = {
      {"task", toy_task_to_json(task)},
      {"logits", logits},
      {"diagnostics", result.diagnostics},
      {"final_mean_reward",
       result.curve.empty() ? 0.0 : result.curve.back().mean_reward}};

  write_artifact(manifest, artifact_path(config, "gspo_curve.csv"),
                 gspo_curve_csv(result.curve));
  write_artifact(manifest, artifact_path(config, "gspo_policy.json"),
                 policy_json.dump(2) + "\n");
  manifest.write();
}

void run_eval(const PipelineConfig& config) {
  ManifestBuilder manifest(config, "eval");
  const std::string original_path =
      config.eval.original_runs_path.empty()
          ? require_artifact(config, "runs_original.jsonl", "collect")
          : config.eval.original_runs_path;
  const std::string perturbed_path =
      config.eval.perturbed_runs_path.empty()
          ? require_artifact(config, "runs_perturbed.jsonl", "collect")
          : config.eval.perturbed_runs_path;
  if (!file_exists(original_path) || !file_exists(perturbed_path))
    throw DependencyError("benchmark run files not found: " + original_path +
                          ", " + perturbed_path);

  const auto original_runs = parse_benchmark_runs(
      read_file(manifest.input(original_path)), "original");
  const auto perturbed_runs = parse_benchmark_runs(
      read_file(manifest.input(perturbed_path)), "perturbed");

  std::map<std::string, const BenchmarkRun*> perturbed_by_model;
  for (const auto& run : perturbed_runs) perturbed_by_model[run.model_id] = &run;

  std::vector<EvalReportRow> rows;
  nlohmann::json paired = nlohmann::json::object();
  for (const auto& run : original_runs) {
    const auto match = perturbed_by_model.find(run.model_id);
    if (match == perturbed_by_model.end()) continue;
    const BenchmarkRun& pert = *match->second;

    EvalReportRow row;
    row.model_id = run.model_id;
    row.original_acc = 100.0 * run.accuracy();
    row.perturbed_acc = 100.0 * pert.accuracy();
    if (row.original_acc <= 0.0) continue;  // PDR undefined for this model
    row.pdr_value = pdr(row.original_acc, row.perturbed_acc);
    rows.push_back(row);

    std::vector<PairedOutcome> outcomes;
    for (const auto& [qid, samples] : run.outcomes) {
      const auto other = pert.outcomes.find(qid);
      if (other == pert.outcomes.end()) continue;
      outcomes.push_back({qid, samples.front(), other->second.front()});
    }
    const auto [b, c] = discordant_counts(outcomes);
    const int n = std::min(config.eval.pass_n, run.samples_per_question());
    paired[run.model_id] = {{"b", b},
                            {"c", c},
                            {"mcnemar_p", mcnemar_exact(b, c)},
                            {"pass_at_n", pass_at_n(run, n)},
                            {"n", n}};
  }
  if (rows.empty())
    throw MissingDataError("no model appears in both run files");

  // question-level accuracy agreement between the two benchmarks
  nlohmann::json correlations;
  {
    std::map<std::string, std::pair<double, long>> orig_acc, pert_acc;
    for (const auto& run : original_runs)
      for (const auto& [qid, samples] : run.outcomes) {
        for (int s : samples) orig_acc[qid].first += s;
        orig_acc[qid].second += static_cast<long>(samples.size());
      }
    for (const auto& run : perturbed_runs)
      for (const auto& [qid, samples] : run.outcomes) {
        for (int s : samples) pert_acc[qid].first += s;
        pert_acc[qid].second += static_cast<long>(samples.size());
      }
    std::vector<double> x, y;
    for (const auto& [qid, acc] : orig_acc) {
      const auto other = pert_acc.find(qid);
      if (other == pert_acc.end()) continue;
      x.push_back(acc.first / static_cast<double>(acc.second));
      y.push_back(other->second.first /
                  static_cast<double>(other->second.second));
    }
    try {
      const RankCorrelations rc = rank_correlations(x, y);
      correlations = {{"spearman", rc.spearman}, {"kendall", rc.kendall}};
    } catch (const UndefinedStatisticError& e) {
      correlations = {{"note", e.what()}};
    }
  }

  const auto levels = difficulty_level_split(original_runs, config.eval.thresholds);
  std::map<std::string, long> level_counts = {
      {"easy", 0}, {"medium", 0}, {"hard", 0}};
  nlohmann::json level_json = nlohmann::json::object();
  for (const auto& [qid, level] : levels) {
    ++level_counts[to_string(level)];
    level_json[qid] = to_string(level);
  }

  // pairwise judging of rewrite vs original, swapped-order double pass
  nlohmann::json win_json;
  nlohmann::json strategy_json = nlohmann::json::object();
  const std::string bank_path = artifact_path(config, "bank.jsonl");
  const std::string rw_path = artifact_path(config, "rewrites.jsonl");
  if (config.eval.judge_pairs > 0 && file_exists(bank_path) &&
      file_exists(rw_path)) {
    manifest.input(bank_path);
    manifest.input(rw_path);
    std::map<std::string, QuestionRecord> by_id;
    for (auto& q : load_question_bank(bank_path)) by_id[q.id] = std::move(q);
    std::map<std::string, QuestionRecord> rewrites;
    for (auto& q : load_question_bank(rw_path))
      if (q.id.rfind("rw-", 0) == 0) rewrites[q.id.substr(3)] = std::move(q);

    Gateway judge = make_gateway(config, config.gateway.judge_model);
    std::vector<JudgeRecord> records;
    std::vector<std::string> judged_ids;
    for (const auto& [qid, rewrite] : rewrites) {
      if (static_cast<int>(records.size()) >= config.eval.judge_pairs) break;
      const auto orig = by_id.find(qid);
      if (orig == by_id.end()) continue;
      JudgeRecord record = judge_pair(judge, rewrite.text, orig->second.text,
                                      config.eval.judge_criteria, 0);
      record.question_id = qid;
      records.push_back(record);
      judged_ids.push_back(qid);
    }
    if (!records.empty()) {
      const WinRates wr = win_rates(records, SideMap{JudgeSide::A});
      win_json = {{"average", wr.average},
                  {"consistent", wr.consistent},
                  {"records", records.size()}};
    }

    // deterministic text-diff annotator; stands in for a judge model offline
    const StrategyJudge annotator =
        [&](const std::string& qid,
            int) -> std::optional<std::set<RewriteStrategy>> {
      const auto orig = by_id.find(qid);
      const auto rewrite = rewrites.find(qid);
      if (orig == by_id.end() || rewrite == rewrites.end()) return std::nullopt;
      const std::string& a = orig->second.text;
      const std::string& b = rewrite->second.text;
      std::set<RewriteStrategy> chosen;
      if (numbers_in(a) != numbers_in(b))
        chosen.insert(RewriteStrategy::numerical);
      if (orig->second.given_level != rewrite->second.given_level)
        chosen.insert(RewriteStrategy::constraints);
      if (b.size() > a.size() + a.size() / 3)
        chosen.insert(RewriteStrategy::extra_steps);
      if (chosen.empty()) chosen.insert(RewriteStrategy::wording);
      return chosen;
    };
    if (!judged_ids.empty()) {
      std::map<std::string, long> strategy_counts;
      for (const auto& [qid, chosen] : annotate_strategies(judged_ids, annotator))
        for (const auto strategy : chosen) ++strategy_counts[to_string(strategy)];
      for (const auto& [name, count] : strategy_counts)
        strategy_json[name] = count;
    }
  }

  // reports
  std::string md = "# Evaluation report\n\n## Accuracy and drop\n\n";
  md += eval_report_markdown(rows);
  md += "\n## Paired tests\n\n| Model | b | c | McNemar p | pass@n |\n"
        "|---|---|---|---|---|\n";
  char buf[200];
  for (const auto& row : rows) {
    const auto& p = paired.at(row.model_id);
    std::snprintf(buf, sizeof buf, "| %s | %ld | %ld | %.6f | %.2f |\n",
                  row.model_id.c_str(), p.at("b").get<long>(),
                  p.at("c").get<long>(), p.at("mcnemar_p").get<double>(),
                  p.at("pass_at_n").get<double>());
    md += buf;
  }
  md += "\n## Question difficulty levels\n\n";
  std::snprintf(buf, sizeof buf, "easy: %ld, medium: %ld, hard: %ld\n",
                level_counts["easy"], level_counts["medium"],
                level_counts["hard"]);
  md += buf;
  if (!win_json.is_null()) {
    std::snprintf(buf, sizeof buf,
                  "\n## Win rates (rewrite vs original)\n\naverage: %.2f, "
                  "consistent: %.2f over %zu pairs\n",
                  win_json.at("average").get<double>(),
                  win_json.at("consistent").get<double>(),
                  win_json.at("records").get<std::size_t>());
    md += buf;
  }
  if (!strategy_json.empty()) {
    md += "\n## Rewrite strategies\n\n";
    for (const auto& [name, count] : strategy_json.items()) {
      std::snprintf(buf, sizeof buf, "- %s: %ld\n", name.c_str(),
                    count.get<long>());
      md += buf;
    }
  }

  nlohmann::json report = {{"models", eval_report_json(rows)},
                           {"paired", paired},
                           {"question_rank_correlations", correlations},
                           {"level_counts", level_counts},
                           {"difficulty_levels", level_json}};
  report["win_rates"] = win_json;
  report["strategies"] = strategy_json;

  write_artifact(manifest, artifact_path(config, "report.md"), md);
  write_artifact(manifest, artifact_path(config, "report.json"),
                 report.dump(2) + "\n");
  manifest.write();
}

}  // namespace

// --- config --------------------------------------------------------------------

void PipelineConfig::validate() const {
  if (out_dir.empty()) throw ConfigError("out_dir is empty");
  if (collect.student_models.empty())
    throw ConfigError("collect.student_models is empty");
  if (collect.bank_path.empty() && collect.num_questions < 2)
    throw ConfigError("collect.num_questions must be >= 2");
  if (collect.bank_path.empty() && collect.num_topics < 1)
    throw ConfigError("collect.num_topics must be >= 1");
  if (collect.samples_per_question < 1)
    throw ConfigError("collect.samples_per_question must be >= 1");
  if (matrix.holdout_fraction < 0.0 || matrix.holdout_fraction >= 1.0)
    throw ConfigError("matrix.holdout_fraction must be in [0, 1)");
  augment.vae.validate();
  if (augment.sampling.num_generate < 0)
    throw ConfigError("augment.sampling.num_generate must be >= 0");
  irt.model.validate();
  if (irt.sweep_steps < 1) throw ConfigError("irt.sweep_steps must be >= 1");
  if (irt.mcmc_steps < 10) throw ConfigError("irt.mcmc_steps must be >= 10");
  ranker.ranker.validate();
  gspo.gspo.validate();
  gspo.task.validate();
  if (eval.thresholds.easy_min <= eval.thresholds.hard_max)
    throw ConfigError("eval.easy_min must exceed eval.hard_max");
  if (eval.pass_n < 1) throw ConfigError("eval.pass_n must be >= 1");
  if (eval.judge_pairs < 0) throw ConfigError("eval.judge_pairs must be >= 0");
  if (!mock && gateway.endpoint_url.empty())
    throw ConfigError("gateway.endpoint_url is required outside mock mode");
}

PipelineConfig default_pipeline_config() {
  PipelineConfig config;
  config.collect.student_models = {"atlas-9b",  "borel-13b",  "cauchy-7b",
                                   "dirac-32b", "euler-3b",   "fermat-70b",
                                   "gauss-8b",  "hilbert-1b", "jacobi-24b",
                                   "kepler-4b", "landau-12b", "markov-6b"};
  // small network defaults keep the mock pipeline quick; library defaults
  // remain larger
  config.ranker.ranker.hidden_dims = {128, 64};
  config.ranker.ranker.epochs = 6;
  config.gspo.task.prompt_ids = {"p-0", "p-1", "p-2", "p-3"};
  return config;
}

nlohmann::json pipeline_config_to_json(const PipelineConfig& config) {
  return {{"seed", config.seed},
          {"out_dir", config.out_dir},
          {"mock", config.mock},
          {"gateway", gateway_to_json(config.gateway)},
          {"collect", collect_to_json(config.collect)},
          {"matrix", {{"holdout_fraction", config.matrix.holdout_fraction}}},
          {"augment", augment_to_json(config.augment)},
          {"irt", irt_to_json(config.irt)},
          {"ranker", ranker_to_json_cfg(config.ranker)},
          {"gspo", gspo_to_json_cfg(config.gspo)},
          {"eval", eval_to_json(config.eval)}};
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  check_keys(j, "pipeline",
             {"seed", "out_dir", "mock", "gateway", "collect", "matrix",
              "augment", "irt", "ranker", "gspo", "eval"});
  PipelineConfig config = default_pipeline_config();
  read_field(j, "seed", config.seed);
  read_field(j, "out_dir", config.out_dir);
  read_field(j, "mock", config.mock);
  if (j.contains("gateway")) gateway_from_json(j.at("gateway"), config.gateway);
  if (j.contains("collect")) collect_from_json(j.at("collect"), config.collect);
  if (j.contains("matrix")) {
    check_keys(j.at("matrix"), "matrix", {"holdout_fraction"});
    read_field(j.at("matrix"), "holdout_fraction", config.matrix.holdout_fraction);
  }
  if (j.contains("augment")) augment_from_json(j.at("augment"), config.augment);
  if (j.contains("irt")) irt_from_json(j.at("irt"), config.irt);
  if (j.contains("ranker")) ranker_from_json_cfg(j.at("ranker"), config.ranker);
  if (j.contains("gspo")) gspo_from_json_cfg(j.at("gspo"), config.gspo);
  if (j.contains("eval")) eval_from_json(j.at("eval"), config.eval);
  config.validate();
  return config;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse config " + path + ": " + e.what());
  }
  return pipeline_config_from_json(j);
}

// --- stage dispatch --------------------------------------------------------------

const std::vector<std::string>& pipeline_stage_names() {
  static const std::vector<std::string> names = {
      "collect",      "matrix",       "augment",  "irt-fit", "embed",
      "ranker-train", "reward-score", "gspo-toy", "eval"};
  return names;
}

std::uint64_t stage_seed(const PipelineConfig& config, const std::string& stage) {
  const auto& names = pipeline_stage_names();
  const auto it = std::find(names.begin(), names.end(), stage);
  if (it == names.end()) throw ConfigError("unknown stage: " + stage);
  return Rng::derive(config.seed,
                     static_cast<std::uint64_t>(it - names.begin()) + 1);
}

void run_stage(const PipelineConfig& config, const std::string& stage) {
  config.validate();
  if (stage == "collect")
    run_collect(config);
  else if (stage == "matrix")
    run_matrix(config);
  else if (stage == "augment")
    run_augment(config);
  else if (stage == "irt-fit")
    run_irt_fit(config);
  else if (stage == "embed")
    run_embed(config);
  else if (stage == "ranker-train")
    run_ranker_train(config);
  else if (stage == "reward-score")
    run_reward_score(config);
  else if (stage == "gspo-toy")
    run_gspo_toy(config);
  else if (stage == "eval")
    run_eval(config);
  else
    throw ConfigError("unknown stage: " + stage);
}

void run_pipeline(const PipelineConfig& config) {
  for (const auto& stage : pipeline_stage_names()) run_stage(config, stage);
}

// --- synthetic corpus --------------------------------------------------------------

std::vector<QuestionRecord> synthesize_question_bank(int num_questions,
                                                     int num_topics,
                                                     std::uint64_t seed) {
  if (num_questions < 1) throw ConfigError("num_questions must be >= 1");
  if (num_topics < 1) throw ConfigError("num_topics must be >= 1");
  Rng rng(seed);
  std::vector<QuestionRecord> bank;
  bank.reserve(static_cast<std::size_t>(num_questions));
  char buf[160];
  for (int i = 0; i < num_questions; ++i) {
    const int level = 1 + (i * 5) / num_questions;
    const long a = 10 + static_cast<long>(rng.uniform_index(90));
    const long b = 10 + static_cast<long>(rng.uniform_index(90));
    QuestionRecord q;
    std::snprintf(buf, sizeof buf, "q-%03d", i);
    q.id = buf;
    std::snprintf(buf, sizeof buf, "Compute %ld + %ld. (level %d)", a, b, level);
    q.text = buf;
    q.answer = std::to_string(a + b);
    std::snprintf(buf, sizeof buf, "topic-%d", i % num_topics);
    q.topic = buf;
    q.source = "synthetic";
    q.given_level = level;
    bank.push_back(std::move(q));
  }
  return bank;
}

std::vector<QuestionRecord> synthesize_rewrites(
    const std::vector<QuestionRecord>& bank, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<QuestionRecord> rewrites;
  rewrites.reserve(bank.size());
  char buf[160];
  for (const auto& original : bank) {
    const int level = original.given_level.value_or(3) + 1;
    const long a = 100 + static_cast<long>(rng.uniform_index(900));
    const long b = 100 + static_cast<long>(rng.uniform_index(900));
    QuestionRecord q;
    q.id = "rw-" + original.id;
    std::snprintf(buf, sizeof buf, "Compute %ld + %ld. (level %d)", a, b, level);
    q.text = buf;
    q.answer = std::to_string(a + b);
    q.topic = original.topic;
    q.source = "synthetic-rewrite";
    q.given_level = level;
    rewrites.push_back(std::move(q));
  }
  return rewrites;
}

}  // namespace diffcal
