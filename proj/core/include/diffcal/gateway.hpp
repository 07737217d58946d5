#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "diffcal/datamodel.hpp"
#include "diffcal/evalsuite.hpp"

namespace diffcal {

struct BackendConfig {
  std::string endpoint_url;        // base URL; standard chat/embedding paths appended
  std::string model_id;
  std::string auth_token_env_var;  // token read from the environment at call time
  int max_parallel = 4;
  double timeout_seconds = 60.0;
  int retry_limit = 2;
  std::string cache_dir;           // empty disables caching

  void validate() const;
};

// Transport: one chat-completion call and one embedding call. Retries and
// backoff live in the HTTP implementation; caching sits above in Gateway.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string complete(const std::string& prompt) = 0;
  virtual std::vector<float> embed_text(const std::string& text) = 0;
  virtual const BackendConfig& config() const = 0;
};

// JSON-over-HTTP client, chat-completion and embedding wire shapes. The
// auth token is attached per request from the named environment variable and
// is never written anywhere.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(BackendConfig config);

  std::string complete(const std::string& prompt) override;
  std::vector<float> embed_text(const std::string& text) override;
  const BackendConfig& config() const override { return config_; }

 private:
  std::string post_json(const std::string& path, const std::string& body);

  BackendConfig config_;
  std::string base_url_;
};

// Test double: scripted responses keyed by request digest, with procedural
// fallbacks that simulate a fixed-skill student, verifier, judge, and
// embedding provider. Instrumented for call and concurrency accounting.
class MockBackend : public Backend {
 public:
  explicit MockBackend(BackendConfig config, int embed_dim = 64);

  void script_completion(const std::string& key, const std::string& response);
  void script_embedding(const std::string& key, std::vector<float> vec);
  void load_fixture(const std::string& path);  // {"completions":{}, "embeddings":{}}
  void set_latency(std::chrono::milliseconds latency) { latency_ = latency; }

  std::string complete(const std::string& prompt) override;
  std::vector<float> embed_text(const std::string& text) override;
  const BackendConfig& config() const override { return config_; }

  long calls() const { return calls_.load(); }
  int max_in_flight() const { return max_in_flight_.load(); }

 private:
  std::string procedural_completion(const std::string& prompt) const;
  void enter();
  void leave();

  BackendConfig config_;
  int embed_dim_;
  std::map<std::string, std::string> completions_;
  std::map<std::string, std::vector<float>> embeddings_;
  mutable std::mutex mutex_;
  std::chrono::milliseconds latency_{0};
  std::atomic<long> calls_{0};
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_in_flight_{0};
};

// Editable prompt templates with {question}, {solution}, {answer},
// {question_a}, {question_b}, {criteria} placeholders.
struct PromptTemplates {
  std::string answering;
  std::string verification;
  std::string judging;

  static PromptTemplates defaults();
  // Reads answering.txt / verification.txt / judging.txt; absent files keep
  // their defaults.
  static PromptTemplates load_dir(const std::string& dir);
  void save_dir(const std::string& dir) const;
};

std::string render_template(const std::string& tpl,
                            const std::map<std::string, std::string>& vars);

// Content-addressed response cache over a transport backend.
class Gateway {
 public:
  explicit Gateway(std::shared_ptr<Backend> backend,
                   PromptTemplates templates = PromptTemplates::defaults());

  std::string complete(const std::string& prompt);
  std::vector<float> embed_vector(const std::string& text);

  const BackendConfig& config() const { return backend_->config(); }
  const PromptTemplates& templates() const { return templates_; }

  static std::string completion_key(const std::string& model_id,
                                    const std::string& prompt);
  static std::string embedding_key(const std::string& model_id,
                                   const std::string& text);

 private:
  std::shared_ptr<Backend> backend_;
  PromptTemplates templates_;
};

// --- answer handling ---------------------------------------------------------

// Last \boxed{...} segment, brace-matched; absent or malformed -> nullopt.
std::optional<std::string> extract_boxed(const std::string& text);

// Whitespace/formatting stripped, thousands separators removed, plain
// numerals canonicalized, lowercased. Idempotent.
std::string normalize_answer(const std::string& s);

// Normalized string match, then numeric equivalence (decimals and p/q
// fractions) as a fallback.
bool answers_equivalent(const std::string& a, const std::string& b);

// --- the four LLM roles ------------------------------------------------------

struct AnswerResult {
  std::string extracted_answer;
  int correct = 0;
  bool extraction_failed = false;
  std::string raw_response;
};

AnswerResult answer_question(Gateway& gateway, const QuestionRecord& question);

EmbeddingRecord embed(Gateway& gateway, const std::string& text,
                      std::optional<std::size_t> expect_dim = std::nullopt);

struct VerifierVerdict {
  int reward = -1;  // in {-1, 1}
  std::string raw_judgment;
  std::string verifier_model;
};

// Unparseable judgments map to -1.
VerifierVerdict verify_rewrite(Gateway& gateway, const std::string& question,
                               const std::string& solution,
                               const std::string& answer);

// Two judge calls, the second with A/B presentation swapped; each verdict is
// recorded as reported. Unparseable output raises a judge-parse error.
JudgeRecord judge_pair(Gateway& gateway, const std::string& question_a,
                       const std::string& question_b,
                       const std::string& criteria, int round = 0);

// --- verifier harness --------------------------------------------------------

struct VerifierCase {
  std::string question, solution, answer;
  int label = 1;  // ground truth in {-1, 1}
};

struct VerifierStats {
  long tp = 0, fp = 0, tn = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0, accuracy = 0.0;  // percentages
};

VerifierStats verifier_harness(Gateway& gateway,
                               const std::vector<VerifierCase>& cases);
std::string verifier_stats_markdown(const VerifierStats& stats);

// --- bounded-concurrency dispatch --------------------------------------------

// Applies fn(i) for i in [0, n) with at most max_parallel workers. The first
// exception is rethrown after all workers finish.
template <typename Fn>
void parallel_for(std::size_t n, int max_parallel, Fn&& fn) {
  if (max_parallel < 1) max_parallel = 1;
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(max_parallel), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (error) return;
        }
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace diffcal
