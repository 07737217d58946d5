// Microbenchmarks for the hot paths: one SVI gradient step, ranker scoring,
// and the statistics kernels. Run via the `bench_core` target when
// google-benchmark is installed.

#include <benchmark/benchmark.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "diffcal/datamodel.hpp"
#include "diffcal/evalsuite.hpp"
#include "diffcal/irt.hpp"
#include "diffcal/ranker.hpp"
#include "diffcal/rng.hpp"

using namespace diffcal;

namespace {

ResponseMatrix synthetic_matrix(std::size_t num_students,
                                std::size_t num_questions) {
  Rng rng(4242);
  std::vector<StudentRecord> students(num_students);
  for (std::size_t i = 0; i < num_students; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "s-%03zu", i);
    students[i].id = buf;
    students[i].model_name = buf;
  }
  std::vector<std::string> questions(num_questions);
  for (std::size_t j = 0; j < num_questions; ++j) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "q-%04zu", j);
    questions[j] = buf;
  }
  std::vector<std::int8_t> entries(num_students * num_questions);
  std::vector<double> theta(num_students), diff(num_questions);
  for (auto& v : theta) v = rng.gauss();
  for (auto& v : diff) v = rng.gauss();
  for (std::size_t i = 0; i < num_students; ++i)
    for (std::size_t j = 0; j < num_questions; ++j) {
      const double p = 1.0 / (1.0 + std::exp(-(theta[i] - diff[j])));
      entries[i * num_questions + j] = rng.uniform() < p ? 1 : 0;
    }
  return ResponseMatrix(std::move(students), std::move(questions),
                        std::move(entries));
}

void BM_ElboGradientStep(benchmark::State& state) {
  const auto matrix = synthetic_matrix(40, 400);
  auto posterior = VariationalPosterior::standard(
      40, 400, IrtModelKind::onePL, PriorKind::vague);
  ElboGradients grads;
  std::uint64_t seed = 1;
  for (auto _ : state) {
    const ElboParts parts =
        elbo_with_gradients(matrix, posterior, IrtModelKind::onePL,
                            PriorKind::vague, seed++, 4, grads);
    benchmark::DoNotOptimize(parts.total());
  }
}
BENCHMARK(BM_ElboGradientStep)->Unit(benchmark::kMillisecond);

void BM_RankerScorePair(benchmark::State& state) {
  Rng rng(7);
  std::vector<RankItem> items(40);
  for (std::size_t i = 0; i < items.size(); ++i) {
    items[i].question_id = "q" + std::to_string(i);
    items[i].topic = "t0";
    items[i].embedding.resize(32);
    double dot = 0.0;
    for (auto& v : items[i].embedding) {
      v = static_cast<float>(rng.gauss());
      dot += v;
    }
    items[i].difficulty = dot;
  }
  RankerConfig config;
  config.hidden_dims = {32};
  config.epochs = 2;
  const auto ranker = train_ranker(generate_pairs(items, config), config);
  const auto& a = items[0].embedding;
  const auto& b = items[1].embedding;
  for (auto _ : state) {
    benchmark::DoNotOptimize(score_pair(ranker, a, b));
  }
}
BENCHMARK(BM_RankerScorePair);

void BM_RankCorrelations(benchmark::State& state) {
  Rng rng(11);
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  std::vector<double> x(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = rng.gauss();
    y[i] = 0.5 * x[i] + rng.gauss();
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(rank_correlations(x, y));
  }
}
BENCHMARK(BM_RankCorrelations)->Arg(100)->Arg(1000);

void BM_McNemarExact(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(mcnemar_exact(100, 80));
  }
}
BENCHMARK(BM_McNemarExact);

}  // namespace

BENCHMARK_MAIN();
