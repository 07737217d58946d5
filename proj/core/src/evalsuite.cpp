#include "diffcal/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "diffcal/errors.hpp"
#include "diffcal/metrics.hpp"

namespace diffcal {

void BenchmarkRun::validate() const {
  if (outcomes.empty()) throw MissingDataError("benchmark run has no questions");
  const std::size_t n = outcomes.begin()->second.size();
  for (const auto& [qid, samples] : outcomes) {
    if (samples.empty())
      throw MissingDataError("question " + qid + " has no samples");
    if (samples.size() != n)
      throw DimensionError("question " + qid + " has " +
                           std::to_string(samples.size()) +
                           " samples, expected " + std::to_string(n));
    for (int s : samples)
      if (s != 0 && s != 1)
        throw NumericError("question " + qid + " has a non-binary outcome");
  }
}

int BenchmarkRun::samples_per_question() const {
  validate();
  return static_cast<int>(outcomes.begin()->second.size());
}

double BenchmarkRun::accuracy() const {
  validate();
  long correct = 0, total = 0;
  for (const auto& [qid, samples] : outcomes) {
    for (int s : samples) correct += s;
    total += static_cast<long>(samples.size());
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

double pdr(double acc_original, double acc_perturbed) {
  if (!(acc_original > 0.0))
    throw UndefinedStatisticError("PDR undefined: original accuracy is zero");
  return 100.0 * (1.0 - acc_perturbed / acc_original);
}

double pdr(const BenchmarkRun& original_run, const BenchmarkRun& perturbed_run) {
  return pdr(original_run.accuracy(), perturbed_run.accuracy());
}

double pass_at_n(const BenchmarkRun& run, int n) {
  run.validate();
  if (n < 1) throw ConfigError("n must be >= 1");
  long hit = 0;
  for (const auto& [qid, samples] : run.outcomes) {
    if (static_cast<int>(samples.size()) < n)
      throw MissingDataError("question " + qid + " has " +
                             std::to_string(samples.size()) +
                             " samples; pass@" + std::to_string(n) +
                             " needs " + std::to_string(n));
    for (int k = 0; k < n; ++k) {
      if (samples[k] == 1) {
        ++hit;
        break;
      }
    }
  }
  return 100.0 * static_cast<double>(hit) /
         static_cast<double>(run.outcomes.size());
}

double mcnemar_exact(long b, long c) {
  if (b < 0 || c < 0) throw NumericError("discordant counts must be nonnegative");
  const long n = b + c;
  if (n == 0) return 1.0;
  const long kmin = std::min(b, c);
  // binomial coefficients by multiplicative recurrence; exact in double for
  // every count the tail sum can distinguish
  double term = 1.0, sum = 1.0;
  for (long k = 1; k <= kmin; ++k) {
    term *= static_cast<double>(n - k + 1) / static_cast<double>(k);
    sum += term;
  }
  return std::min(1.0, 2.0 * sum * std::pow(0.5, static_cast<double>(n)));
}

std::pair<long, long> discordant_counts(const std::vector<PairedOutcome>& pairs) {
  long b = 0, c = 0;
  for (const auto& p : pairs) {
    if ((p.correct_original != 0 && p.correct_original != 1) ||
        (p.correct_rewritten != 0 && p.correct_rewritten != 1))
      throw NumericError("paired outcome for question " + p.question_id +
                         " is not binary");
    b += p.correct_original == 1 && p.correct_rewritten == 0;
    c += p.correct_original == 0 && p.correct_rewritten == 1;
  }
  return {b, c};
}

RankCorrelations rank_correlations(const std::vector<double>& x,
                                   const std::vector<double>& y) {
  if (x.size() != y.size())
    throw DimensionError("rank correlation inputs differ in length");
  if (x.size() < 2)
    throw DimensionError("rank correlation needs at least two observations");
  const auto constant = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(),
                       [&](double a) { return a == v.front(); });
  };
  if (constant(x) || constant(y))
    throw UndefinedStatisticError("rank correlation undefined on constant input");

  const std::size_t n = x.size();
  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }

  // Kendall tau-b over all pairs with tie corrections
  long concordant = 0, discordant = 0, ties_x = 0, ties_y = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = x[i] - x[j];
      const double dy = y[i] - y[j];
      if (dx == 0.0 && dy == 0.0) {
        ++ties_x;
        ++ties_y;
      } else if (dx == 0.0) {
        ++ties_x;
      } else if (dy == 0.0) {
        ++ties_y;
      } else if ((dx > 0.0) == (dy > 0.0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  const double n0 = static_cast<double>(n) * (n - 1) / 2.0;
  const double denom = std::sqrt((n0 - ties_x) * (n0 - ties_y));

  RankCorrelations out;
  out.spearman = sxy / std::sqrt(sxx * syy);
  out.kendall = (concordant - discordant) / denom;
  return out;
}

const char* to_string(JudgeSide side) {
  switch (side) {
    case JudgeSide::A: return "A";
    case JudgeSide::B: return "B";
    case JudgeSide::tie: return "tie";
  }
  return "?";
}

JudgeSide judge_side_from_string(const std::string& s) {
  if (s == "A") return JudgeSide::A;
  if (s == "B") return JudgeSide::B;
  if (s == "tie") return JudgeSide::tie;
  throw ConfigError("unknown judge side: " + s);
}

WinRates win_rates(const std::vector<JudgeRecord>& records,
                   const SideMap& side_map) {
  if (records.empty()) throw MissingDataError("no judge records");
  if (side_map.first_pass_side == JudgeSide::tie)
    throw ConfigError("side map must assign the method to side A or B");
  const JudgeSide first = side_map.first_pass_side;
  const JudgeSide second = first == JudgeSide::A ? JudgeSide::B : JudgeSide::A;

  long wins = 0, both = 0;
  for (const auto& rec : records) {
    const bool w1 = rec.first_pass_winner == first;
    const bool w2 = rec.second_pass_winner == second;
    wins += w1 + w2;
    both += w1 && w2;
  }
  WinRates out;
  out.average = 100.0 * static_cast<double>(wins) /
                (2.0 * static_cast<double>(records.size()));
  out.consistent =
      100.0 * static_cast<double>(both) / static_cast<double>(records.size());
  return out;
}

const char* to_string(RewriteStrategy strategy) {
  switch (strategy) {
    case RewriteStrategy::wording: return "wording";
    case RewriteStrategy::distracting: return "distracting";
    case RewriteStrategy::numerical: return "numerical";
    case RewriteStrategy::extra_steps: return "extra_steps";
    case RewriteStrategy::constraints: return "constraints";
    case RewriteStrategy::target: return "target";
  }
  return "?";
}

RewriteStrategy rewrite_strategy_from_string(const std::string& s) {
  if (s == "wording") return RewriteStrategy::wording;
  if (s == "distracting") return RewriteStrategy::distracting;
  if (s == "numerical") return RewriteStrategy::numerical;
  if (s == "extra_steps") return RewriteStrategy::extra_steps;
  if (s == "constraints") return RewriteStrategy::constraints;
  if (s == "target") return RewriteStrategy::target;
  throw ConfigError("unknown rewrite strategy: " + s);
}

std::map<std::string, std::set<RewriteStrategy>> annotate_strategies(
    const std::vector<std::string>& question_ids, const StrategyJudge& judge_fn,
    int runs, int threshold) {
  if (runs < 1) throw ConfigError("runs must be >= 1");
  if (threshold < 1 || threshold > runs)
    throw ConfigError("threshold must lie in [1, runs]");

  std::map<std::string, std::set<RewriteStrategy>> out;
  for (const std::string& qid : question_ids) {
    std::map<RewriteStrategy, int> counts;
    for (int run = 0; run < runs; ++run) {
      const auto picked = judge_fn(qid, run);
      if (!picked)
        throw BackendError("strategy annotation failed for question " + qid +
                           " on run " + std::to_string(run));
      for (RewriteStrategy s : *picked) ++counts[s];
    }
    std::set<RewriteStrategy>& chosen = out[qid];
    for (const auto& [strategy, count] : counts)
      if (count >= threshold) chosen.insert(strategy);
  }
  return out;
}

const char* to_string(DifficultyLevel level) {
  switch (level) {
    case DifficultyLevel::easy: return "easy";
    case DifficultyLevel::medium: return "medium";
    case DifficultyLevel::hard: return "hard";
  }
  return "?";
}

std::map<std::string, DifficultyLevel> difficulty_level_split(
    const std::vector<BenchmarkRun>& runs, const LevelThresholds& thresholds) {
  if (runs.empty()) throw MissingDataError("no benchmark runs");
  if (!(thresholds.hard_max <= thresholds.easy_min))
    throw ConfigError("hard_max must not exceed easy_min");
  for (const auto& run : runs) run.validate();

  std::set<std::string> questions;
  for (const auto& run : runs)
    for (const auto& [qid, samples] : run.outcomes) questions.insert(qid);
  for (const auto& run : runs)
    for (const std::string& qid : questions)
      if (!run.outcomes.count(qid))
        throw MissingDataError("run " + run.model_id + " never answered " + qid);

  std::map<std::string, DifficultyLevel> out;
  for (const std::string& qid : questions) {
    double mean = 0.0;
    for (const auto& run : runs) {
      const auto& samples = run.outcomes.at(qid);
      double acc = 0.0;
      for (int s : samples) acc += s;
      mean += acc / static_cast<double>(samples.size());
    }
    mean /= static_cast<double>(runs.size());
    if (mean >= thresholds.easy_min)
      out[qid] = DifficultyLevel::easy;
    else if (mean < thresholds.hard_max)
      out[qid] = DifficultyLevel::hard;
    else
      out[qid] = DifficultyLevel::medium;
  }
  return out;
}

std::string eval_report_markdown(const std::vector<EvalReportRow>& rows) {
  std::ostringstream out;
  out << "| Model | Original | Perturbed | PDR |\n";
  out << "|---|---|---|---|\n";
  char buf[64];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof buf, "%.2f | %.2f | %.2f", row.original_acc,
                  row.perturbed_acc, row.pdr_value);
    out << "| " << row.model_id << " | " << buf << " |\n";
  }
  return out.str();
}

nlohmann::json eval_report_json(const std::vector<EvalReportRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& row : rows) {
    arr.push_back({{"model", row.model_id},
                   {"original", row.original_acc},
                   {"perturbed", row.perturbed_acc},
                   {"pdr", row.pdr_value}});
  }
  return arr;
}

std::vector<BenchmarkRun> parse_benchmark_runs(const std::string& text,
                                               const std::string& benchmark_id) {
  // model -> question -> sample_index -> correct
  std::map<std::string, std::map<std::string, std::map<int, int>>> table;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DependencyError("benchmark-run line " + std::to_string(lineno) +
                            ": " + e.what());
    }
    const auto model = j.at("model_id").get<std::string>();
    const auto qid = j.at("question_id").get<std::string>();
    const int idx = j.at("sample_index").get<int>();
    const int correct = j.at("correct").get<int>();
    if (correct != 0 && correct != 1)
      throw NumericError("benchmark-run line " + std::to_string(lineno) +
                         ": correct must be 0 or 1");
    auto [it, inserted] = table[model][qid].emplace(idx, correct);
    if (!inserted)
      throw ConflictError("duplicate sample " + std::to_string(idx) +
                          " for question " + qid + " of model " + model);
  }

  std::vector<BenchmarkRun> runs;
  for (auto& [model, questions] : table) {
    BenchmarkRun run;
    run.benchmark_id = benchmark_id;
    run.model_id = model;
    for (auto& [qid, samples] : questions) {
      auto& flags = run.outcomes[qid];
      for (auto& [idx, correct] : samples) flags.push_back(correct);
    }
    run.validate();
    runs.push_back(std::move(run));
  }
  return runs;
}

std::string serialize_benchmark_runs(const std::vector<BenchmarkRun>& runs) {
  std::ostringstream out;
  std::vector<const BenchmarkRun*> sorted;
  for (const auto& run : runs) sorted.push_back(&run);
  std::sort(sorted.begin(), sorted.end(),
            [](const BenchmarkRun* a, const BenchmarkRun* b) {
              return a->model_id < b->model_id;
            });
  for (const BenchmarkRun* run : sorted) {
    for (const auto& [qid, samples] : run->outcomes) {
      for (std::size_t k = 0; k < samples.size(); ++k) {
        nlohmann::json j = {{"model_id", run->model_id},
                            {"question_id", qid},
                            {"sample_index", static_cast<int>(k)},
                            {"correct", samples[k]}};
        out << j.dump() << '\n';
      }
    }
  }
  return out.str();
}

}  // namespace diffcal
