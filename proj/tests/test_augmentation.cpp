#include <cmath>
#include <string>
#include <vector>

#include <doctest.h>

#include "diffcal/augmentation.hpp"
#include "diffcal/errors.hpp"
#include "diffcal/rng.hpp"

using namespace diffcal;

namespace {

ResponseMatrix structured_matrix(std::size_t strong, std::size_t weak,
                                 std::size_t n) {
  std::vector<StudentRecord> students;
  std::vector<std::string> questions;
  std::vector<std::int8_t> entries;
  for (std::size_t s = 0; s < strong + weak; ++s) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%03zu", s);
    students.push_back({buf, buf, false, StudentOrigin::real});
  }
  for (std::size_t q = 0; q < n; ++q) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "q%03zu", q);
    questions.emplace_back(buf);
  }
  for (std::size_t s = 0; s < strong + weak; ++s)
    for (std::size_t q = 0; q < n; ++q)
      entries.push_back(s < strong ? 1 : 0);
  return ResponseMatrix(std::move(students), std::move(questions),
                        std::move(entries));
}

}  // namespace

TEST_CASE("empirical rates average observed cells only") {
  std::vector<StudentRecord> students = {
      {"s0", "s0", false, StudentOrigin::real},
      {"s1", "s1", false, StudentOrigin::real},
      {"s2", "s2", false, StudentOrigin::real}};
  std::vector<std::string> questions = {"q0", "q1"};
  ResponseMatrix matrix(students, questions, {1, 0, 1, 1, 0, 1});
  auto rates = empirical_rates(matrix);
  REQUIRE(rates.size() == 2);
  CHECK(rates[0] == doctest::Approx(2.0 / 3.0));
  CHECK(rates[1] == doctest::Approx(2.0 / 3.0));

  // holding out s2's answers on q0 changes only that column
  matrix.set_holdout({0, 0, 0, 0, 1, 0});
  rates = empirical_rates(matrix);
  CHECK(rates[0] == doctest::Approx(1.0));
  CHECK(rates[1] == doctest::Approx(2.0 / 3.0));

  // a fully masked column is an error naming the question
  matrix.set_holdout({1, 0, 1, 0, 1, 0});
  bool threw = false;
  try {
    empirical_rates(matrix);
  } catch (const MissingDataError& e) {
    threw = true;
    CHECK(std::string(e.what()).find("q0") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("sampled students follow the per-question rates") {
  const std::vector<double> rates = {0.1, 0.5, 0.9};
  SamplingConfig config;
  config.num_generate = 600;
  config.seed = 31;
  const auto rows = sample_students(rates, config);
  REQUIRE(rows.size() == 600);
  double means[3] = {0, 0, 0};
  for (const auto& row : rows) {
    REQUIRE(row.size() == 3);
    for (int q = 0; q < 3; ++q) {
      CHECK((row[q] == 0 || row[q] == 1));
      means[q] += row[q];
    }
  }
  for (int q = 0; q < 3; ++q)
    CHECK(means[q] / 600.0 == doctest::Approx(rates[q]).epsilon(0.15));
  // deterministic in the seed
  CHECK(sample_students(rates, config) == rows);
}

TEST_CASE("vae training is unaffected by held-out cell values") {
  Rng rng(12);
  const std::size_t m = 6, n = 10;
  std::vector<std::int8_t> entries(m * n);
  std::vector<std::uint8_t> mask(m * n, 0);
  for (auto& e : entries) e = static_cast<std::int8_t>(rng.uniform_index(2));
  for (std::size_t i = 0; i < m * n; i += 4) mask[i] = 1;

  std::vector<StudentRecord> students;
  std::vector<std::string> questions;
  for (std::size_t s = 0; s < m; ++s) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%03zu", s);
    students.push_back({buf, buf, false, StudentOrigin::real});
  }
  for (std::size_t q = 0; q < n; ++q) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "q%03zu", q);
    questions.emplace_back(buf);
  }
  ResponseMatrix a(students, questions, entries);
  a.set_holdout(mask);
  auto flipped = entries;
  for (std::size_t i = 0; i < m * n; ++i)
    if (mask[i]) flipped[i] = static_cast<std::int8_t>(1 - flipped[i]);
  ResponseMatrix b(students, questions, flipped);
  b.set_holdout(mask);

  VaeConfig config;
  config.epochs = 40;
  config.hidden_dims = {16};
  config.latent_dim = 4;
  const VaeGenerator ga = train_vae(a, config);
  const VaeGenerator gb = train_vae(b, config);
  REQUIRE(ga.loss_trace.size() == 40);
  CHECK(ga.loss_trace == gb.loss_trace);  // masked cells never contribute
}

TEST_CASE("vae learns structured responses beyond a coin-flip baseline") {
  const std::size_t n = 16;
  const ResponseMatrix matrix = structured_matrix(12, 12, n);
  VaeConfig config;
  config.epochs = 150;
  config.hidden_dims = {32};
  config.latent_dim = 4;
  config.seed = 3;
  const VaeGenerator generator = train_vae(matrix, config);
  REQUIRE(generator.loss_trace.size() == 150);
  CHECK(generator.loss_trace.back() < generator.loss_trace.front());
  // per-student Bernoulli(0.5) reconstruction alone would cost n*log 2
  const double baseline = static_cast<double>(n) * std::log(2.0);
  CHECK(generator.loss_trace.back() < 0.75 * baseline);

  // decoded probabilities are proper probabilities
  Eigen::VectorXf z = Eigen::VectorXf::Zero(4);
  const Eigen::VectorXf probs = generator.decode_probs(z);
  REQUIRE(probs.size() == static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    CHECK(probs[i] > 0.0f);
    CHECK(probs[i] < 1.0f);
  }
}

TEST_CASE("vae generation is per-row deterministic") {
  const ResponseMatrix matrix = structured_matrix(8, 8, 12);
  VaeConfig config;
  config.epochs = 30;
  config.hidden_dims = {16};
  config.latent_dim = 3;
  const VaeGenerator generator = train_vae(matrix, config);
  const auto five = generate_vae_students(generator, 5, 99);
  const auto nine = generate_vae_students(generator, 9, 99);
  REQUIRE(five.size() == 5);
  REQUIRE(nine.size() == 9);
  for (std::size_t r = 0; r < 5; ++r)
    CHECK(five[r] == nine[r]);  // row streams don't depend on the count
  for (const auto& row : five) REQUIRE(row.size() == 12);
}

TEST_CASE("augment_matrix stacks tagged synthetic rows") {
  ResponseMatrix base = structured_matrix(3, 3, 5);
  base.set_holdout({1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0,
                    0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0});
  const std::vector<std::vector<std::uint8_t>> vae_rows = {{1, 1, 0, 0, 1},
                                                           {0, 0, 0, 1, 1}};
  const std::vector<std::vector<std::uint8_t>> sampled_rows = {{1, 0, 1, 0, 1}};
  const ResponseMatrix augmented = augment_matrix(base, vae_rows, sampled_rows);
  REQUIRE(augmented.num_students() == 9);
  CHECK(augmented.students()[6].id == "vae-000");
  CHECK(augmented.students()[7].id == "vae-001");
  CHECK(augmented.students()[8].id == "smp-000");
  CHECK(augmented.students()[6].origin == StudentOrigin::vae);
  CHECK(augmented.students()[8].origin == StudentOrigin::sampled);
  CHECK(augmented.students()[8].is_synthetic);
  CHECK(augmented.entry(6, 0) == 1);
  CHECK(augmented.entry(8, 4) == 1);
  // the base holdout survives; synthetic rows are never held out
  CHECK(augmented.held_out(0, 0));
  for (std::size_t q = 0; q < 5; ++q) CHECK_FALSE(augmented.held_out(7, q));
  // base is untouched
  CHECK(base.num_students() == 6);

  CHECK_THROWS_AS(augment_matrix(base, {{1, 0}}, {}), DimensionError);
}

TEST_CASE("vae config validation") {
  VaeConfig config;
  config.latent_dim = 0;
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config = {};
  config.kld_weight = -0.1;
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config = {};
  config.hidden_dims.clear();
  CHECK_THROWS_AS(config.validate(), ConfigError);
}
