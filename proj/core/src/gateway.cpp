#include "diffcal/gateway.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>

#include "diffcal/digest.hpp"
#include "diffcal/errors.hpp"
#include "diffcal/fsio.hpp"
#include "diffcal/metrics.hpp"
#include "diffcal/rng.hpp"

namespace diffcal {

namespace {

constexpr const char* kChatPath = "/v1/chat/completions";
constexpr const char* kEmbedPath = "/v1/embeddings";

// markers the procedural mock keys on; they are the first lines of the
// default templates
constexpr const char* kAnswerMarker = "Solve the following math question";
constexpr const char* kVerifyMarker = "Verify whether the candidate";
constexpr const char* kJudgeMarker = "comparing two rewritten questions";

double hash01(const std::string& s) {
  const std::string hex = sha256_hex(s).substr(0, 13);  // 52 bits
  return static_cast<double>(std::strtoull(hex.c_str(), nullptr, 16)) *
         0x1.0p-52;
}

std::optional<std::string> slice_between(const std::string& text,
                                         const std::string& from,
                                         const std::string& to) {
  const std::size_t a = text.find(from);
  if (a == std::string::npos) return std::nullopt;
  const std::size_t start = a + from.size();
  const std::size_t b = text.find(to, start);
  if (b == std::string::npos) return std::nullopt;
  return text.substr(start, b - start);
}

struct ArithmeticQuestion {
  long a = 0, b = 0;
  int level = 3;
};

// "Compute A + B." with an optional "(level L)" tag, as emitted by the mock
// collection stage.
std::optional<ArithmeticQuestion> parse_arithmetic(const std::string& text) {
  const std::size_t pos = text.find("Compute ");
  if (pos == std::string::npos) return std::nullopt;
  ArithmeticQuestion q;
  const char* p = text.c_str() + pos + 8;
  char* end = nullptr;
  q.a = std::strtol(p, &end, 10);
  if (end == p) return std::nullopt;
  p = end;
  if (std::strncmp(p, " + ", 3) != 0) return std::nullopt;
  p += 3;
  q.b = std::strtol(p, &end, 10);
  if (end == p) return std::nullopt;
  const std::size_t lv = text.find("(level ");
  if (lv != std::string::npos)
    q.level = static_cast<int>(std::strtol(text.c_str() + lv + 7, nullptr, 10));
  return q;
}

std::optional<JudgeSide> parse_judge_verdict(const std::string& response) {
  // scan words from the end; "tie" (any case) or bare A/B decide
  std::vector<std::string> words;
  std::string word;
  for (char c : response) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      word.push_back(c);
    } else if (!word.empty()) {
      words.push_back(word);
      word.clear();
    }
  }
  if (!word.empty()) words.push_back(word);
  for (auto it = words.rbegin(); it != words.rend(); ++it) {
    std::string lower = *it;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (lower == "tie") return JudgeSide::tie;
    if (*it == "A") return JudgeSide::A;
    if (*it == "B") return JudgeSide::B;
  }
  return std::nullopt;
}

bool parse_full_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

// plain decimal, p/q, or \frac{p}{q}, each with an optional leading sign
std::optional<double> parse_numeric(std::string s) {
  double v;
  if (parse_full_double(s, v)) return v;
  double sign = 1.0;
  if (!s.empty() && (s[0] == '-' || s[0] == '+')) {
    if (s[0] == '-') sign = -1.0;
    s.erase(0, 1);
  }
  std::string num, den;
  if (s.rfind("\\frac{", 0) == 0) {
    const std::size_t close1 = s.find('}', 6);
    if (close1 == std::string::npos || close1 + 1 >= s.size() ||
        s[close1 + 1] != '{' || s.back() != '}')
      return std::nullopt;
    num = s.substr(6, close1 - 6);
    den = s.substr(close1 + 2, s.size() - close1 - 3);
  } else {
    const std::size_t slash = s.find('/');
    if (slash == std::string::npos) return std::nullopt;
    num = s.substr(0, slash);
    den = s.substr(slash + 1);
  }
  double n, d;
  if (!parse_full_double(num, n) || !parse_full_double(den, d) || d == 0.0)
    return std::nullopt;
  return sign * n / d;
}

}  // namespace

void BackendConfig::validate() const {
  if (model_id.empty()) throw ConfigError("model_id is empty");
  if (max_parallel < 1) throw ConfigError("max_parallel must be >= 1");
  if (retry_limit < 0) throw ConfigError("retry_limit must be >= 0");
  if (!(timeout_seconds > 0.0)) throw ConfigError("timeout_seconds must be positive");
}

// --- HttpBackend -------------------------------------------------------------

HttpBackend::HttpBackend(BackendConfig config) : config_(std::move(config)) {
  config_.validate();
  if (config_.endpoint_url.empty())
    throw ConfigError("endpoint_url is empty");
  base_url_ = config_.endpoint_url;
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

std::string HttpBackend::post_json(const std::string& path,
                                   const std::string& body) {
  // split scheme://host[:port] from any path prefix
  std::string host = base_url_, prefix;
  const std::size_t scheme = base_url_.find("://");
  if (scheme != std::string::npos) {
    const std::size_t slash = base_url_.find('/', scheme + 3);
    if (slash != std::string::npos) {
      host = base_url_.substr(0, slash);
      prefix = base_url_.substr(slash);
    }
  }

  httplib::Client client(host);
  const auto seconds = static_cast<time_t>(config_.timeout_seconds);
  const auto micros = static_cast<time_t>(
      (config_.timeout_seconds - static_cast<double>(seconds)) * 1e6);
  client.set_connection_timeout(seconds, micros);
  client.set_read_timeout(seconds, micros);
  client.set_write_timeout(seconds, micros);

  httplib::Headers headers;
  if (!config_.auth_token_env_var.empty()) {
    if (const char* token = std::getenv(config_.auth_token_env_var.c_str()))
      headers.emplace("Authorization", std::string("Bearer ") + token);
  }

  static std::mutex jitter_mutex;
  static Rng jitter_rng(0x9a17);

  std::string last_error;
  for (int attempt = 0; attempt <= config_.retry_limit; ++attempt) {
    if (attempt > 0) {
      double jitter;
      {
        std::lock_guard<std::mutex> lock(jitter_mutex);
        jitter = jitter_rng.uniform();
      }
      const double delay = 0.25 * std::pow(2.0, attempt - 1) * (1.0 + jitter);
      std::this_thread::sleep_for(std::chrono::duration<double>(delay));
    }
    auto res = client.Post(prefix + path, headers, body, "application/json");
    if (res && res->status == 200) return res->body;
    last_error = res ? "HTTP status " + std::to_string(res->status)
                     : std::string("transport: ") + httplib::to_string(res.error());
  }
  throw BackendError("backend " + config_.model_id + " failed after " +
                     std::to_string(config_.retry_limit + 1) + " attempts (" +
                     last_error + ")");
}

std::string HttpBackend::complete(const std::string& prompt) {
  const nlohmann::json body = {
      {"model", config_.model_id},
      {"messages", {{{"role", "user"}, {"content", prompt}}}}};
  const std::string raw = post_json(kChatPath, body.dump());
  try {
    const nlohmann::json j = nlohmann::json::parse(raw);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw BackendError("malformed completion response from " +
                       config_.model_id + ": " + e.what());
  }
}

std::vector<float> HttpBackend::embed_text(const std::string& text) {
  const nlohmann::json body = {{"model", config_.model_id}, {"input", text}};
  const std::string raw = post_json(kEmbedPath, body.dump());
  try {
    const nlohmann::json j = nlohmann::json::parse(raw);
    return j.at("data").at(0).at("embedding").get<std::vector<float>>();
  } catch (const nlohmann::json::exception& e) {
    throw BackendError("malformed embedding response from " +
                       config_.model_id + ": " + e.what());
  }
}

// --- MockBackend -------------------------------------------------------------

MockBackend::MockBackend(BackendConfig config, int embed_dim)
    : config_(std::move(config)), embed_dim_(embed_dim) {
  config_.validate();
  if (embed_dim_ < 1) throw ConfigError("embed_dim must be >= 1");
}

void MockBackend::script_completion(const std::string& key,
                                    const std::string& response) {
  std::lock_guard<std::mutex> lock(mutex_);
  completions_[key] = response;
}

void MockBackend::script_embedding(const std::string& key,
                                   std::vector<float> vec) {
  std::lock_guard<std::mutex> lock(mutex_);
  embeddings_[key] = std::move(vec);
}

void MockBackend::load_fixture(const std::string& path) {
  const nlohmann::json j = nlohmann::json::parse(read_file(path));
  std::lock_guard<std::mutex> lock(mutex_);
  if (j.contains("completions"))
    for (const auto& [key, value] : j.at("completions").items())
      completions_[key] = value.get<std::string>();
  if (j.contains("embeddings"))
    for (const auto& [key, value] : j.at("embeddings").items())
      embeddings_[key] = value.get<std::vector<float>>();
}

void MockBackend::enter() {
  const int now = in_flight_.fetch_add(1) + 1;
  int seen = max_in_flight_.load();
  while (seen < now && !max_in_flight_.compare_exchange_weak(seen, now)) {
  }
}

void MockBackend::leave() { in_flight_.fetch_sub(1); }

std::string MockBackend::procedural_completion(const std::string& prompt) const {
  if (prompt.find(kAnswerMarker) != std::string::npos) {
    const auto q = parse_arithmetic(prompt);
    if (!q) return "The computation yields \\boxed{0}.";
    // fixed-skill student: correctness follows a logistic law in the gap
    // between hashed model ability and the question's level
    const double ability = 4.0 * hash01(config_.model_id) - 2.0;
    const double p = sigmoid(ability - static_cast<double>(q->level - 3));
    const double h = hash01(config_.model_id + "\n" + prompt);
    long value = q->a + q->b;
    if (h >= p) value += 1 + static_cast<long>(h * 3.0);
    char buf[96];
    std::snprintf(buf, sizeof buf, "The computation yields \\boxed{%ld}.", value);
    return buf;
  }
  if (prompt.find(kVerifyMarker) != std::string::npos) {
    const auto q = parse_arithmetic(prompt);
    const auto candidate = slice_between(prompt, "Candidate answer: ", "\n");
    if (q && candidate) {
      double v;
      if (parse_full_double(normalize_answer(*candidate), v))
        return v == static_cast<double>(q->a + q->b) ? "correct" : "incorrect";
    }
    return hash01(prompt) < 0.8 ? "correct" : "incorrect";
  }
  if (prompt.find(kJudgeMarker) != std::string::npos) {
    const auto a = slice_between(prompt, "Question A: ", "\nQuestion B: ");
    const auto b = slice_between(prompt, "Question B: ", "\nAnswer with");
    if (a && b) {
      const double sa = hash01(*a), sb = hash01(*b);
      if (std::fabs(sa - sb) < 0.05) return "tie";
      return sa > sb ? "A" : "B";
    }
    return "tie";
  }
  return "[mock] " + sha256_hex(prompt).substr(0, 12);
}

std::string MockBackend::complete(const std::string& prompt) {
  enter();
  if (latency_.count() > 0) std::this_thread::sleep_for(latency_);
  ++calls_;
  std::string out;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto it =
        completions_.find(Gateway::completion_key(config_.model_id, prompt));
    if (it != completions_.end()) out = it->second;
  }
  if (out.empty()) out = procedural_completion(prompt);
  leave();
  return out;
}

std::vector<float> MockBackend::embed_text(const std::string& text) {
  enter();
  if (latency_.count() > 0) std::this_thread::sleep_for(latency_);
  ++calls_;
  std::vector<float> out;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto it =
        embeddings_.find(Gateway::embedding_key(config_.model_id, text));
    if (it != embeddings_.end()) out = it->second;
  }
  if (out.empty()) {
    const std::string hex = sha256_hex(text).substr(0, 16);
    Rng rng(std::strtoull(hex.c_str(), nullptr, 16));
    out.resize(embed_dim_);
    for (float& v : out) v = static_cast<float>(rng.gauss());
    // the synthetic corpus encodes its difficulty level in the text; carry
    // it through so downstream ranking has signal in mock runs
    const auto q = parse_arithmetic(text);
    if (q) out[0] = static_cast<float>(q->level);
  }
  leave();
  return out;
}

// --- templates ---------------------------------------------------------------

PromptTemplates PromptTemplates::defaults() {
  PromptTemplates t;
  t.answering =
      "Solve the following math question. Think step by step and put the "
      "final answer in \\boxed{}.\n\nQuestion: {question}\n";
  t.verification =
      "Verify whether the candidate answer solves the question correctly. "
      "Reply with exactly one word: correct or incorrect.\n\n"
      "Question: {question}\nProposed solution: {solution}\n"
      "Candidate answer: {answer}\n";
  t.judging =
      "You are comparing two rewritten questions. Choose the better one by "
      "the criteria.\nCriteria: {criteria}\nQuestion A: {question_a}\n"
      "Question B: {question_b}\nAnswer with exactly one of: A, B, tie.\n";
  return t;
}

PromptTemplates PromptTemplates::load_dir(const std::string& dir) {
  PromptTemplates t = defaults();
  const auto load = [&](const char* name, std::string& slot) {
    const std::string path = dir + "/" + name;
    if (file_exists(path)) slot = read_file(path);
  };
  load("answering.txt", t.answering);
  load("verification.txt", t.verification);
  load("judging.txt", t.judging);
  return t;
}

void PromptTemplates::save_dir(const std::string& dir) const {
  write_file_atomic(dir + "/answering.txt", answering);
  write_file_atomic(dir + "/verification.txt", verification);
  write_file_atomic(dir + "/judging.txt", judging);
}

std::string render_template(const std::string& tpl,
                            const std::map<std::string, std::string>& vars) {
  std::string out = tpl;
  for (const auto& [name, value] : vars) {
    const std::string token = "{" + name + "}";
    std::size_t pos = 0;
    while ((pos = out.find(token, pos)) != std::string::npos) {
      out.replace(pos, token.size(), value);
      pos += value.size();
    }
  }
  return out;
}

// --- Gateway -----------------------------------------------------------------

Gateway::Gateway(std::shared_ptr<Backend> backend, PromptTemplates templates)
    : backend_(std::move(backend)), templates_(std::move(templates)) {
  if (!backend_) throw ConfigError("gateway needs a backend");
}

std::string Gateway::completion_key(const std::string& model_id,
                                    const std::string& prompt) {
  return sha256_hex("completion\n" + model_id + "\n" + prompt);
}

std::string Gateway::embedding_key(const std::string& model_id,
                                   const std::string& text) {
  return sha256_hex("embedding\n" + model_id + "\n" + text);
}

std::string Gateway::complete(const std::string& prompt) {
  const std::string& dir = backend_->config().cache_dir;
  if (dir.empty()) return backend_->complete(prompt);
  const std::string key = completion_key(backend_->config().model_id, prompt);
  const std::string path = dir + "/" + key + ".json";
  if (file_exists(path)) {
    const nlohmann::json j = nlohmann::json::parse(read_file(path));
    return j.at("response").get<std::string>();
  }
  const std::string response = backend_->complete(prompt);
  const nlohmann::json j = {{"kind", "completion"},
                            {"model_id", backend_->config().model_id},
                            {"request", prompt},
                            {"response", response}};
  write_file_atomic(path, j.dump(2) + "\n");
  return response;
}

std::vector<float> Gateway::embed_vector(const std::string& text) {
  const std::string& dir = backend_->config().cache_dir;
  if (dir.empty()) return backend_->embed_text(text);
  const std::string key = embedding_key(backend_->config().model_id, text);
  const std::string path = dir + "/" + key + ".json";
  if (file_exists(path)) {
    const nlohmann::json j = nlohmann::json::parse(read_file(path));
    return j.at("response").get<std::vector<float>>();
  }
  const std::vector<float> response = backend_->embed_text(text);
  const nlohmann::json j = {{"kind", "embedding"},
                            {"model_id", backend_->config().model_id},
                            {"request", text},
                            {"response", response}};
  write_file_atomic(path, j.dump(2) + "\n");
  return response;
}

// --- answer handling -----------------------------------------------------------

std::optional<std::string> extract_boxed(const std::string& text) {
  const std::string marker = "\\boxed{";
  const std::size_t pos = text.rfind(marker);
  if (pos == std::string::npos) return std::nullopt;
  int depth = 1;
  std::string inner;
  for (std::size_t i = pos + marker.size(); i < text.size(); ++i) {
    const char c = text[i];
    if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) return inner;
    }
    inner.push_back(c);
  }
  return std::nullopt;  // unbalanced braces
}

std::string normalize_answer(const std::string& s) {
  std::string t;
  t.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    const char c = s[i];
    if (std::isspace(static_cast<unsigned char>(c)) || c == '$') {
      ++i;
      continue;
    }
    if (c == '\\' && i + 1 < s.size()) {
      const char n = s[i + 1];
      if (n == '!' || n == ',' || n == ';' || n == ':') {
        i += 2;
        continue;
      }
      if (s.compare(i, 5, "\\left") == 0) {
        i += 5;
        continue;
      }
      if (s.compare(i, 6, "\\right") == 0) {
        i += 6;
        continue;
      }
    }
    t.push_back(c);
    ++i;
  }

  // thousands separators: a comma between a digit and exactly three digits
  const auto digit_at = [&](std::size_t i) {
    return i < t.size() && std::isdigit(static_cast<unsigned char>(t[i]));
  };
  std::string u;
  u.reserve(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] == ',' && i > 0 && digit_at(i - 1) && digit_at(i + 1) &&
        digit_at(i + 2) && digit_at(i + 3) && !digit_at(i + 4))
      continue;
    u.push_back(t[i]);
  }

  while (!u.empty() && u.back() == '.') u.pop_back();
  std::transform(u.begin(), u.end(), u.begin(),
                 [](unsigned char c) { return std::tolower(c); });

  double v;
  if (parse_full_double(u, v)) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
  }
  return u;
}

bool answers_equivalent(const std::string& a, const std::string& b) {
  const std::string na = normalize_answer(a);
  const std::string nb = normalize_answer(b);
  if (na == nb) return true;
  const auto va = parse_numeric(na);
  const auto vb = parse_numeric(nb);
  if (!va || !vb) return false;
  const double scale = std::max({1.0, std::fabs(*va), std::fabs(*vb)});
  return std::fabs(*va - *vb) <= 1e-9 * scale;
}

// --- the four LLM roles --------------------------------------------------------

AnswerResult answer_question(Gateway& gateway, const QuestionRecord& question) {
  const std::string prompt = render_template(gateway.templates().answering,
                                             {{"question", question.text}});
  AnswerResult result;
  result.raw_response = gateway.complete(prompt);
  const auto boxed = extract_boxed(result.raw_response);
  if (!boxed) {
    result.extraction_failed = true;
    return result;
  }
  result.extracted_answer = normalize_answer(*boxed);
  result.correct = answers_equivalent(*boxed, question.answer) ? 1 : 0;
  return result;
}

EmbeddingRecord embed(Gateway& gateway, const std::string& text,
                      std::optional<std::size_t> expect_dim) {
  if (text.empty()) throw MissingDataError("embed text is empty");
  std::vector<float> vec = gateway.embed_vector(text);
  if (expect_dim && vec.size() != *expect_dim)
    throw DimensionError("embedding dimension " + std::to_string(vec.size()) +
                         " does not match expected " +
                         std::to_string(*expect_dim));
  EmbeddingRecord record;
  record.vector = std::move(vec);
  record.provider = gateway.config().model_id;
  return record;
}

VerifierVerdict verify_rewrite(Gateway& gateway, const std::string& question,
                               const std::string& solution,
                               const std::string& answer) {
  if (question.empty() || solution.empty() || answer.empty())
    throw MissingDataError("verification needs question, solution, and answer");
  const std::string prompt = render_template(
      gateway.templates().verification,
      {{"question", question}, {"solution", solution}, {"answer", answer}});
  VerifierVerdict verdict;
  verdict.raw_judgment = gateway.complete(prompt);
  verdict.verifier_model = gateway.config().model_id;
  std::string lower = verdict.raw_judgment;
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  if (lower.find("incorrect") != std::string::npos)
    verdict.reward = -1;
  else if (lower.find("correct") != std::string::npos)
    verdict.reward = 1;
  else
    verdict.reward = -1;  // unparseable reads as a rejection
  return verdict;
}

JudgeRecord judge_pair(Gateway& gateway, const std::string& question_a,
                       const std::string& question_b,
                       const std::string& criteria, int round) {
  if (question_a.empty() || question_b.empty())
    throw MissingDataError("judging needs two nonempty questions");
  const auto ask = [&](const std::string& first, const std::string& second) {
    return gateway.complete(render_template(gateway.templates().judging,
                                            {{"question_a", first},
                                             {"question_b", second},
                                             {"criteria", criteria}}));
  };
  const std::string r1 = ask(question_a, question_b);
  const std::string r2 = ask(question_b, question_a);  // swapped order
  const auto v1 = parse_judge_verdict(r1);
  const auto v2 = parse_judge_verdict(r2);
  if (!v1 || !v2)
    throw BackendError("judge verdict unparseable (pass " +
                       std::string(!v1 ? "1" : "2") + "): " +
                       (!v1 ? r1 : r2));
  JudgeRecord record;
  record.first_pass_winner = *v1;
  record.second_pass_winner = *v2;
  record.round = round;
  return record;
}

// --- verifier harness ----------------------------------------------------------

VerifierStats verifier_harness(Gateway& gateway,
                               const std::vector<VerifierCase>& cases) {
  if (cases.empty()) throw MissingDataError("no verifier cases");
  VerifierStats stats;
  for (const auto& c : cases) {
    if (c.label != 1 && c.label != -1)
      throw NumericError("verifier case labels must be -1 or 1");
    const VerifierVerdict verdict =
        verify_rewrite(gateway, c.question, c.solution, c.answer);
    const bool predicted = verdict.reward == 1;
    const bool actual = c.label == 1;
    if (predicted && actual)
      ++stats.tp;
    else if (predicted && !actual)
      ++stats.fp;
    else if (!predicted && !actual)
      ++stats.tn;
    else
      ++stats.fn;
  }
  const auto pct = [](long num, long den) {
    return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / den;
  };
  stats.precision = pct(stats.tp, stats.tp + stats.fp);
  stats.recall = pct(stats.tp, stats.tp + stats.fn);
  stats.f1 = (stats.precision + stats.recall) == 0.0
                 ? 0.0
                 : 2.0 * stats.precision * stats.recall /
                       (stats.precision + stats.recall);
  stats.accuracy = pct(stats.tp + stats.tn,
                       stats.tp + stats.fp + stats.tn + stats.fn);
  return stats;
}

std::string verifier_stats_markdown(const VerifierStats& stats) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "| %.2f | %.2f | %.2f | %.2f |\n",
                stats.precision, stats.recall, stats.f1, stats.accuracy);
  return std::string("| Precision | Recall | F1 | Accuracy |\n") +
         "|---|---|---|---|\n" + buf;
}

}  // namespace diffcal
