#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

namespace diffcal {

struct BenchmarkRun {
  std::string benchmark_id;
  std::string model_id;
  // question id -> per-sample correctness flags, iteration order canonical
  std::map<std::string, std::vector<int>> outcomes;

  void validate() const;  // every question sampled, uniform n
  int samples_per_question() const;
  double accuracy() const;  // total correct / total samples
};

// Performance drop rate: 100 * (1 - acc_perturbed / acc_original).
double pdr(double acc_original, double acc_perturbed);
double pdr(const BenchmarkRun& original_run, const BenchmarkRun& perturbed_run);

// Fraction of questions with a correct answer among the first n samples, x100.
double pass_at_n(const BenchmarkRun& run, int n);

// Exact two-sided binomial McNemar test on discordant counts.
// p = min(1, 2 * sum_{k <= min(b,c)} C(b+c, k) / 2^(b+c)); p = 1 when b+c = 0.
double mcnemar_exact(long b, long c);

struct PairedOutcome {
  std::string question_id;
  int correct_original = 0;
  int correct_rewritten = 0;
};

// Discordant counts from paired outcomes: b = correct->incorrect,
// c = incorrect->correct.
std::pair<long, long> discordant_counts(const std::vector<PairedOutcome>& pairs);

struct RankCorrelations {
  double spearman = 0.0;
  double kendall = 0.0;  // tau-b
};

RankCorrelations rank_correlations(const std::vector<double>& x,
                                   const std::vector<double>& y);

enum class JudgeSide { A, B, tie };

const char* to_string(JudgeSide side);
JudgeSide judge_side_from_string(const std::string& s);

struct JudgeRecord {
  std::string question_id;
  JudgeSide first_pass_winner = JudgeSide::tie;
  JudgeSide second_pass_winner = JudgeSide::tie;  // presentation order swapped
  int round = 0;
};

struct SideMap {
  // side the method of interest occupies in the first pass; the second
  // pass swaps sides
  JudgeSide first_pass_side = JudgeSide::A;
};

struct WinRates {
  double average = 0.0;     // wins / (2 * records) * 100, ties count for neither
  double consistent = 0.0;  // records won in both passes * 100
};

WinRates win_rates(const std::vector<JudgeRecord>& records,
                   const SideMap& side_map);

enum class RewriteStrategy {
  wording,
  distracting,
  numerical,
  extra_steps,
  constraints,
  target,
};

const char* to_string(RewriteStrategy strategy);
RewriteStrategy rewrite_strategy_from_string(const std::string& s);

using StrategyJudge = std::function<std::optional<std::set<RewriteStrategy>>(
    const std::string& question_id, int run)>;

// Majority annotation: a strategy sticks iff chosen in >= threshold of runs.
// A failed judge run aborts with the offending question named.
std::map<std::string, std::set<RewriteStrategy>> annotate_strategies(
    const std::vector<std::string>& question_ids, const StrategyJudge& judge_fn,
    int runs = 6, int threshold = 3);

enum class DifficultyLevel { easy, medium, hard };

const char* to_string(DifficultyLevel level);

struct LevelThresholds {
  double easy_min = 0.75;  // mean accuracy at or above -> easy
  double hard_max = 0.5;   // mean accuracy below -> hard
};

// Buckets questions by mean accuracy across runs; every run must cover
// every question.
std::map<std::string, DifficultyLevel> difficulty_level_split(
    const std::vector<BenchmarkRun>& runs, const LevelThresholds& thresholds = {});

// --- reporting ---------------------------------------------------------------

struct EvalReportRow {
  std::string model_id;
  double original_acc = 0.0;   // percentage
  double perturbed_acc = 0.0;  // percentage
  double pdr_value = 0.0;      // percentage
};

// | Model | Original | Perturbed | PDR | with two-decimal cells.
std::string eval_report_markdown(const std::vector<EvalReportRow>& rows);
nlohmann::json eval_report_json(const std::vector<EvalReportRow>& rows);

// Benchmark-run JSONL {model_id, question_id, sample_index, correct}; one
// run per model id, samples ordered by sample_index.
std::vector<BenchmarkRun> parse_benchmark_runs(const std::string& text,
                                               const std::string& benchmark_id);
std::string serialize_benchmark_runs(const std::vector<BenchmarkRun>& runs);

}  // namespace diffcal
