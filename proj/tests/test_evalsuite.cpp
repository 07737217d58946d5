#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <doctest.h>

#include "diffcal/errors.hpp"
#include "diffcal/evalsuite.hpp"
#include "diffcal/rng.hpp"

using namespace diffcal;

namespace {

// Exact two-sided binomial tail via Pascal's triangle; every coefficient for
// n <= 50 is below 2^53, so the doubles are exact.
double mcnemar_oracle(long b, long c) {
  const long n = b + c;
  if (n == 0) return 1.0;
  std::vector<double> row = {1.0};
  for (long i = 1; i <= n; ++i) {
    std::vector<double> next(static_cast<std::size_t>(i) + 1, 1.0);
    for (long k = 1; k < i; ++k)
      next[static_cast<std::size_t>(k)] =
          row[static_cast<std::size_t>(k - 1)] + row[static_cast<std::size_t>(k)];
    row = std::move(next);
  }
  double tail = 0.0;
  for (long k = 0; k <= std::min(b, c); ++k)
    tail += row[static_cast<std::size_t>(k)];
  return std::min(1.0, 2.0 * tail * std::pow(0.5, static_cast<double>(n)));
}

// Average ranks by direct counting: rank_i = 1 + #smaller + (#equal - 1) / 2.
std::vector<double> ranks_oracle(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    int smaller = 0, equal = 0;
    for (double u : v) {
      smaller += u < v[i];
      equal += u == v[i];
    }
    r[i] = 1.0 + smaller + (equal - 1) / 2.0;
  }
  return r;
}

double pearson_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

double spearman_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson_oracle(ranks_oracle(x), ranks_oracle(y));
}

double kendall_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  long concordant = 0, discordant = 0, ties_x = 0, ties_y = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = x[i] - x[j];
      const double dy = y[i] - y[j];
      if (dx == 0.0 && dy == 0.0) continue;
      if (dx == 0.0) {
        ++ties_x;
      } else if (dy == 0.0) {
        ++ties_y;
      } else if ((dx > 0.0) == (dy > 0.0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  const double n0 = static_cast<double>(n) * (n - 1) / 2.0;
  long tx = 0, ty = 0;  // tied pairs including double-ties
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      tx += x[i] == x[j];
      ty += y[i] == y[j];
    }
  const double denom = std::sqrt((n0 - tx) * (n0 - ty));
  return (concordant - discordant) / denom;
}

bool is_constant(const std::vector<double>& v) {
  for (double u : v)
    if (u != v[0]) return false;
  return true;
}

BenchmarkRun make_run(const std::string& model,
                      std::map<std::string, std::vector<int>> outcomes) {
  BenchmarkRun run;
  run.benchmark_id = "bench";
  run.model_id = model;
  run.outcomes = std::move(outcomes);
  return run;
}

}  // namespace

TEST_CASE("exact McNemar matches the Pascal-triangle oracle") {
  CHECK(mcnemar_exact(0, 0) == 1.0);
  // 2 * (C(12,0) + C(12,1) + C(12,2)) / 2^12 = 158/4096
  CHECK(std::fabs(mcnemar_exact(10, 2) - 158.0 / 4096.0) <= 1e-15);
  Rng rng(61);
  for (int trial = 0; trial < 60; ++trial) {
    const long b = static_cast<long>(rng.uniform_index(21));
    const long c = static_cast<long>(rng.uniform_index(21));
    const double got = mcnemar_exact(b, c);
    const double want = mcnemar_oracle(b, c);
    CHECK(std::fabs(got - want) <= 1e-12 * std::max(1.0, want));
    CHECK(mcnemar_exact(c, b) == got);
    CHECK(got > 0.0);
    CHECK(got <= 1.0);
  }
  CHECK(mcnemar_exact(5, 5) == 1.0);  // perfectly balanced counts
  CHECK_THROWS_AS(mcnemar_exact(-1, 0), NumericError);
}

TEST_CASE("performance drop rate fixtures") {
  CHECK(std::fabs(pdr(10.00, 3.33) - 66.70) < 0.05);
  CHECK(std::fabs(pdr(26.67, 3.33) - 87.51) < 0.05);
  CHECK(std::fabs(pdr(16.67, 3.33) - 80.02) < 0.05);
  CHECK(pdr(50.0, 50.0) == doctest::Approx(0.0));
  CHECK(pdr(50.0, 75.0) == doctest::Approx(-50.0));  // improvement goes negative
  CHECK_THROWS_AS(pdr(0.0, 3.33), UndefinedStatisticError);

  const BenchmarkRun original =
      make_run("m", {{"q1", {1, 1}}, {"q2", {1, 0}}, {"q3", {0, 1}}});
  const BenchmarkRun perturbed =
      make_run("m", {{"q1", {1, 0}}, {"q2", {0, 0}}, {"q3", {0, 0}}});
  // accuracies 4/6 and 1/6
  CHECK(pdr(original, perturbed) == doctest::Approx(75.0).epsilon(1e-12));
}

TEST_CASE("benchmark run validation and accuracy") {
  const BenchmarkRun run = make_run("m", {{"q1", {1, 0, 1}}, {"q2", {0, 0, 1}}});
  CHECK_NOTHROW(run.validate());
  CHECK(run.samples_per_question() == 3);
  CHECK(run.accuracy() == doctest::Approx(0.5));

  CHECK_THROWS_AS(make_run("m", {}).validate(), MissingDataError);
  CHECK_THROWS_AS(make_run("m", {{"q1", {1}}, {"q2", {1, 0}}}).validate(),
                  DimensionError);
  CHECK_THROWS_AS(make_run("m", {{"q1", {2}}}).validate(), NumericError);
}

TEST_CASE("pass@n counts questions solved within the first n samples") {
  const BenchmarkRun run =
      make_run("m", {{"q1", {0, 1}}, {"q2", {0, 0}}, {"q3", {1, 0}}});
  CHECK(pass_at_n(run, 1) == doctest::Approx(100.0 / 3.0));
  CHECK(pass_at_n(run, 2) == doctest::Approx(200.0 / 3.0));
  CHECK_THROWS_AS(pass_at_n(run, 3), MissingDataError);
  CHECK_THROWS_AS(pass_at_n(run, 0), ConfigError);

  // monotone in n on random runs
  Rng rng(67);
  for (int trial = 0; trial < 50; ++trial) {
    std::map<std::string, std::vector<int>> outcomes;
    for (int q = 0; q < 8; ++q) {
      std::vector<int> samples(4);
      for (auto& s : samples) s = static_cast<int>(rng.uniform_index(2));
      outcomes["q" + std::to_string(q)] = samples;
    }
    const BenchmarkRun r = make_run("m", outcomes);
    double prev = 0.0;
    for (int n = 1; n <= 4; ++n) {
      const double cur = pass_at_n(r, n);
      CHECK(cur >= prev - 1e-12);
      prev = cur;
    }
  }
}

TEST_CASE("discordant counts split paired flips by direction") {
  const std::vector<PairedOutcome> pairs = {
      {"q1", 1, 0}, {"q2", 1, 0}, {"q3", 0, 1}, {"q4", 1, 1}, {"q5", 0, 0}};
  const auto [b, c] = discordant_counts(pairs);
  CHECK(b == 2);
  CHECK(c == 1);
  CHECK_THROWS_AS(discordant_counts({{"q", 2, 0}}), NumericError);
}

TEST_CASE("rank correlations match pairwise enumeration oracles") {
  // exhaustive small-integer vectors, every tie pattern included
  std::vector<std::vector<double>> vectors;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int c = 0; c < 3; ++c)
        for (int d = 0; d < 3; ++d)
          vectors.push_back({double(a), double(b), double(c), double(d)});

  int checked = 0;
  for (std::size_t i = 0; i < vectors.size(); i += 7)
    for (std::size_t j = 0; j < vectors.size(); j += 11) {
      const auto& x = vectors[i];
      const auto& y = vectors[j];
      if (is_constant(x) || is_constant(y)) continue;
      const RankCorrelations got = rank_correlations(x, y);
      CHECK(got.spearman ==
            doctest::Approx(spearman_oracle(x, y)).epsilon(1e-9));
      CHECK(got.kendall == doctest::Approx(kendall_oracle(x, y)).epsilon(1e-9));
      ++checked;
    }
  CHECK(checked > 50);

  Rng rng(71);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 5 + rng.uniform_index(2);
    std::vector<double> x(n), y(n);
    for (auto& v : x) v = rng.gauss();
    for (auto& v : y) v = rng.gauss();
    if (trial % 3 == 0) x[1] = x[0];  // inject ties
    if (trial % 4 == 0) y[2] = y[3];
    const RankCorrelations got = rank_correlations(x, y);
    CHECK(got.spearman == doctest::Approx(spearman_oracle(x, y)).epsilon(1e-9));
    CHECK(got.kendall == doctest::Approx(kendall_oracle(x, y)).epsilon(1e-9));
  }

  const std::vector<double> up = {1, 2, 3, 4};
  const std::vector<double> down = {9, 7, 5, 2};
  CHECK(rank_correlations(up, up).spearman == doctest::Approx(1.0));
  CHECK(rank_correlations(up, up).kendall == doctest::Approx(1.0));
  CHECK(rank_correlations(up, down).spearman == doctest::Approx(-1.0));
  CHECK(rank_correlations(up, down).kendall == doctest::Approx(-1.0));

  CHECK_THROWS_AS(rank_correlations({1.0}, {1.0}), DimensionError);
  CHECK_THROWS_AS(rank_correlations({1.0, 2.0}, {1.0, 2.0, 3.0}),
                  DimensionError);
  CHECK_THROWS_AS(rank_correlations({1.0, 1.0}, {1.0, 2.0}),
                  UndefinedStatisticError);
}

TEST_CASE("win rates account for the side swap between passes") {
  // the method sits on side A in pass one, side B in pass two
  SideMap sides;
  const std::vector<JudgeRecord> sweep = {{"q1", JudgeSide::A, JudgeSide::B, 0},
                                          {"q2", JudgeSide::A, JudgeSide::B, 0}};
  const WinRates all = win_rates(sweep, sides);
  CHECK(all.average == doctest::Approx(100.0));
  CHECK(all.consistent == doctest::Approx(100.0));

  const std::vector<JudgeRecord> order_bias = {
      {"q1", JudgeSide::A, JudgeSide::A, 0}};  // wins only when listed first
  const WinRates biased = win_rates(order_bias, sides);
  CHECK(biased.average == doctest::Approx(50.0));
  CHECK(biased.consistent == doctest::Approx(0.0));

  const std::vector<JudgeRecord> mixed = {{"q1", JudgeSide::A, JudgeSide::B, 0},
                                          {"q2", JudgeSide::A, JudgeSide::A, 0},
                                          {"q3", JudgeSide::tie, JudgeSide::B, 0},
                                          {"q4", JudgeSide::B, JudgeSide::A, 0}};
  const WinRates part = win_rates(mixed, sides);
  CHECK(part.average == doctest::Approx(50.0));
  CHECK(part.consistent == doctest::Approx(25.0));

  CHECK_THROWS_AS(win_rates({}, sides), MissingDataError);
  SideMap bad;
  bad.first_pass_side = JudgeSide::tie;
  CHECK_THROWS_AS(win_rates(sweep, bad), ConfigError);
}

TEST_CASE("strategy annotation keeps labels hitting the majority threshold") {
  const std::vector<std::string> ids = {"q1", "q2"};
  const StrategyJudge judge = [](const std::string& qid,
                                 int run) -> std::optional<std::set<RewriteStrategy>> {
    if (qid == "q1") {
      // wording in 3/4 runs, numerical once
      if (run == 0) return std::set{RewriteStrategy::wording, RewriteStrategy::numerical};
      return std::set{RewriteStrategy::wording};
    }
    // two strategies, two runs each
    if (run < 2) return std::set{RewriteStrategy::constraints};
    return std::set{RewriteStrategy::extra_steps};
  };
  const auto annotated = annotate_strategies(ids, judge, 4, 2);
  CHECK(annotated.at("q1") == std::set{RewriteStrategy::wording});
  CHECK(annotated.at("q2") ==
        std::set{RewriteStrategy::constraints, RewriteStrategy::extra_steps});

  const StrategyJudge flaky = [](const std::string& qid,
                                 int) -> std::optional<std::set<RewriteStrategy>> {
    if (qid == "q2") return std::nullopt;
    return std::set{RewriteStrategy::wording};
  };
  try {
    annotate_strategies(ids, flaky, 4, 2);
    FAIL("expected BackendError");
  } catch (const BackendError& e) {
    CHECK(std::string(e.what()).find("q2") != std::string::npos);
  }
  CHECK_THROWS_AS(annotate_strategies(ids, judge, 4, 5), ConfigError);
  CHECK_THROWS_AS(annotate_strategies(ids, judge, 0, 0), ConfigError);
}

TEST_CASE("difficulty levels bucket questions by mean accuracy across runs") {
  const BenchmarkRun r1 = make_run(
      "m1", {{"easy", {1, 1}}, {"mid", {1, 0}}, {"hard", {0, 0}}, {"edge", {1, 1}}});
  const BenchmarkRun r2 = make_run(
      "m2", {{"easy", {1, 1}}, {"mid", {0, 1}}, {"hard", {0, 0}}, {"edge", {1, 0}}});
  const auto split = difficulty_level_split({r1, r2});
  CHECK(split.at("easy") == DifficultyLevel::easy);
  CHECK(split.at("mid") == DifficultyLevel::medium);  // exactly 0.5 stays medium
  CHECK(split.at("hard") == DifficultyLevel::hard);
  CHECK(split.at("edge") == DifficultyLevel::easy);  // exactly 0.75 counts easy

  const BenchmarkRun partial = make_run("m3", {{"easy", {1, 1}}});
  CHECK_THROWS_AS(difficulty_level_split({r1, partial}), MissingDataError);
  CHECK_THROWS_AS(difficulty_level_split({}), MissingDataError);
  LevelThresholds inverted;
  inverted.easy_min = 0.3;
  inverted.hard_max = 0.6;
  CHECK_THROWS_AS(difficulty_level_split({r1, r2}, inverted), ConfigError);
}

TEST_CASE("evaluation report renders two-decimal markdown rows") {
  std::vector<EvalReportRow> rows(1);
  rows[0].model_id = "GPT-3.5-turbo";
  rows[0].original_acc = 10.0;
  rows[0].perturbed_acc = 3.33;
  rows[0].pdr_value = pdr(10.0, 3.33);
  const std::string md = eval_report_markdown(rows);
  CHECK(md.find("| Model | Original | Perturbed | PDR |") != std::string::npos);
  CHECK(md.find("| GPT-3.5-turbo | 10.00 | 3.33 | 66.70 |") != std::string::npos);

  const nlohmann::json j = eval_report_json(rows);
  REQUIRE(j.is_array());
  CHECK(j[0].at("model") == "GPT-3.5-turbo");
  CHECK(j[0].at("pdr").get<double>() == doctest::Approx(66.70).epsilon(1e-6));
}

TEST_CASE("benchmark-run jsonl round trips and rejects malformed lines") {
  const BenchmarkRun a = make_run("alpha", {{"q1", {1, 0}}, {"q2", {0, 1}}});
  const BenchmarkRun b = make_run("beta", {{"q1", {0, 0}}, {"q2", {1, 1}}});
  const std::string text = serialize_benchmark_runs({b, a});  // unsorted input
  const auto parsed = parse_benchmark_runs(text, "bench");
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[0].model_id == "alpha");  // canonical model order
  CHECK(parsed[0].outcomes == a.outcomes);
  CHECK(parsed[1].outcomes == b.outcomes);
  CHECK(parsed[0].benchmark_id == "bench");

  // samples arrive out of order and are reassembled by index
  const std::string shuffled =
      R"({"model_id":"m","question_id":"q","sample_index":1,"correct":0})"
      "\n"
      R"({"model_id":"m","question_id":"q","sample_index":0,"correct":1})"
      "\n";
  const auto ordered = parse_benchmark_runs(shuffled, "bench");
  REQUIRE(ordered.size() == 1);
  CHECK(ordered[0].outcomes.at("q") == std::vector<int>{1, 0});

  const std::string dup =
      R"({"model_id":"m","question_id":"q","sample_index":0,"correct":1})"
      "\n"
      R"({"model_id":"m","question_id":"q","sample_index":0,"correct":0})"
      "\n";
  CHECK_THROWS_AS(parse_benchmark_runs(dup, "bench"), ConflictError);
  CHECK_THROWS_AS(
      parse_benchmark_runs(
          R"({"model_id":"m","question_id":"q","sample_index":0,"correct":7})",
          "bench"),
      NumericError);
  CHECK_THROWS_AS(parse_benchmark_runs("not json\n", "bench"), DependencyError);
}

TEST_CASE("enum string conversions round trip") {
  for (JudgeSide side : {JudgeSide::A, JudgeSide::B, JudgeSide::tie})
    CHECK(judge_side_from_string(to_string(side)) == side);
  CHECK_THROWS_AS(judge_side_from_string("C"), ConfigError);

  for (RewriteStrategy s :
       {RewriteStrategy::wording, RewriteStrategy::distracting,
        RewriteStrategy::numerical, RewriteStrategy::extra_steps,
        RewriteStrategy::constraints, RewriteStrategy::target})
    CHECK(rewrite_strategy_from_string(to_string(s)) == s);
  CHECK_THROWS_AS(rewrite_strategy_from_string("mystery"), ConfigError);

  CHECK(std::string(to_string(DifficultyLevel::easy)) == "easy");
  CHECK(std::string(to_string(DifficultyLevel::medium)) == "medium");
  CHECK(std::string(to_string(DifficultyLevel::hard)) == "hard");
}
