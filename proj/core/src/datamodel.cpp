#include "diffcal/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "diffcal/errors.hpp"
#include "diffcal/fsio.hpp"
#include "diffcal/rng.hpp"

using nlohmann::json;

namespace diffcal {

const char* to_string(StudentOrigin origin) {
  switch (origin) {
    case StudentOrigin::real: return "real";
    case StudentOrigin::vae: return "vae";
    case StudentOrigin::sampled: return "sampled";
  }
  return "real";
}

StudentOrigin student_origin_from_string(const std::string& s) {
  if (s == "real") return StudentOrigin::real;
  if (s == "vae") return StudentOrigin::vae;
  if (s == "sampled") return StudentOrigin::sampled;
  throw ConfigError("unknown student origin: " + s);
}

ResponseMatrix::ResponseMatrix(std::vector<StudentRecord> students,
                               std::vector<std::string> question_ids,
                               std::vector<std::int8_t> entries)
    : students_(std::move(students)),
      question_ids_(std::move(question_ids)),
      entries_(std::move(entries)) {
  if (entries_.size() != students_.size() * question_ids_.size()) {
    throw DimensionError("matrix entries do not match student × question shape");
  }
  for (std::int8_t e : entries_) {
    if (e != 0 && e != 1 && e != -1) {
      throw ConfigError("matrix entries must be 0, 1 or -1 (not administered)");
    }
  }
  std::set<std::string> seen;
  for (const auto& s : students_) {
    if (s.id.empty() || !seen.insert(s.id).second) {
      throw ConflictError("student ids must be nonempty and unique: '" + s.id + "'");
    }
  }
  seen.clear();
  for (const auto& q : question_ids_) {
    if (q.empty() || !seen.insert(q).second) {
      throw ConflictError("question ids must be nonempty and unique: '" + q + "'");
    }
  }
}

std::size_t ResponseMatrix::holdout_count() const {
  std::size_t n = 0;
  for (auto b : holdout_) n += b ? 1 : 0;
  return n;
}

void ResponseMatrix::set_holdout(std::vector<std::uint8_t> mask) {
  if (mask.size() != entries_.size()) {
    throw DimensionError("holdout mask shape does not match matrix");
  }
  holdout_ = std::move(mask);
}

void ResponseMatrix::append_rows(const std::vector<StudentRecord>& students,
                                 const std::vector<std::vector<std::int8_t>>& rows) {
  if (students.size() != rows.size()) {
    throw DimensionError("student records and rows differ in count");
  }
  const std::size_t n = question_ids_.size();
  for (const auto& row : rows) {
    if (row.size() != n) {
      throw DimensionError("appended row width " + std::to_string(row.size()) +
                           " does not match question count " + std::to_string(n));
    }
  }
  std::set<std::string> ids;
  for (const auto& s : students_) ids.insert(s.id);
  for (const auto& s : students) {
    if (!ids.insert(s.id).second) {
      throw ConflictError("duplicate student id on append: " + s.id);
    }
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    students_.push_back(students[r]);
    entries_.insert(entries_.end(), rows[r].begin(), rows[r].end());
    if (!holdout_.empty()) holdout_.insert(holdout_.end(), n, 0);
  }
}

double ResponseMatrix::row_accuracy(std::size_t row) const {
  std::size_t correct = 0, total = 0;
  for (std::size_t c = 0; c < question_ids_.size(); ++c) {
    if (!administered(row, c)) continue;
    ++total;
    correct += entry(row, c);
  }
  if (total == 0) throw UndefinedStatisticError("student row has no administered cells");
  return static_cast<double>(correct) / static_cast<double>(total);
}

std::size_t ResponseMatrix::student_index(const std::string& id) const {
  for (std::size_t i = 0; i < students_.size(); ++i) {
    if (students_[i].id == id) return i;
  }
  throw MissingDataError("unknown student id: " + id);
}

ResponseMatrix build_response_matrix(const std::vector<ResponseTriple>& responses,
                                     const MatrixBuildOptions& options) {
  std::set<std::string> student_ids, question_ids;
  std::map<std::pair<std::string, std::string>, int> cells;
  for (const auto& r : responses) {
    if (r.student_id.empty() || r.question_id.empty()) {
      throw ConfigError("response with empty student or question id");
    }
    if (r.correct != 0 && r.correct != 1) {
      throw ConfigError("correct flag must be 0 or 1 for (" + r.student_id +
                        ", " + r.question_id + ")");
    }
    auto [it, inserted] = cells.emplace(std::make_pair(r.student_id, r.question_id), r.correct);
    if (!inserted) {
      throw ConflictError("duplicate response for (" + r.student_id + ", " +
                          r.question_id + ")");
    }
    student_ids.insert(r.student_id);
    question_ids.insert(r.question_id);
  }

  std::vector<StudentRecord> students;
  students.reserve(student_ids.size());
  for (const auto& id : student_ids) {
    students.push_back(StudentRecord{id, id, false, StudentOrigin::real});
  }
  std::vector<std::string> questions(question_ids.begin(), question_ids.end());

  std::vector<std::int8_t> entries(students.size() * questions.size(), -1);
  std::vector<std::string> missing;
  for (std::size_t i = 0; i < students.size(); ++i) {
    for (std::size_t j = 0; j < questions.size(); ++j) {
      auto it = cells.find({students[i].id, questions[j]});
      if (it != cells.end()) {
        entries[i * questions.size() + j] = static_cast<std::int8_t>(it->second);
      } else if (options.strict && missing.size() < 20) {
        missing.push_back("(" + students[i].id + ", " + questions[j] + ")");
      }
    }
  }
  if (options.strict && !missing.empty()) {
    std::ostringstream msg;
    msg << "incomplete response matrix; missing cells:";
    for (const auto& m : missing) msg << " " << m;
    throw MissingDataError(msg.str());
  }
  return ResponseMatrix(std::move(students), std::move(questions), std::move(entries));
}

ResponseMatrix mask_holdout(const ResponseMatrix& matrix, double fraction,
                            std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw ConfigError("holdout fraction must lie in [0, 1]");
  }
  const std::size_t total = matrix.num_students() * matrix.num_questions();
  const auto k = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(total)));

  std::vector<std::size_t> cells(total);
  for (std::size_t i = 0; i < total; ++i) cells[i] = i;
  Rng rng(seed);
  rng.shuffle(cells);

  std::vector<std::uint8_t> mask(total, 0);
  for (std::size_t i = 0; i < k; ++i) mask[cells[i]] = 1;

  ResponseMatrix out = matrix;
  out.set_holdout(std::move(mask));
  return out;
}

// --- persistence -----------------------------------------------------------

namespace {

json question_to_json(const QuestionRecord& q) {
  json j{{"id", q.id},
         {"text", q.text},
         {"answer", q.answer},
         {"topic", q.topic},
         {"source", q.source}};
  if (q.given_level) j["given_level"] = *q.given_level;
  return j;
}

QuestionRecord question_from_json(const json& j) {
  QuestionRecord q;
  q.id = j.at("id").get<std::string>();
  q.text = j.at("text").get<std::string>();
  q.answer = j.at("answer").get<std::string>();
  q.topic = j.at("topic").get<std::string>();
  q.source = j.value("source", std::string{});
  if (j.contains("given_level") && !j["given_level"].is_null()) {
    q.given_level = j["given_level"].get<int>();
  }
  if (q.id.empty()) throw ConfigError("question record with empty id");
  if (q.topic.empty()) throw ConfigError("question '" + q.id + "' has empty topic");
  return q;
}

json parse_json_line(const std::string& line, const char* what) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ConfigError(std::string("malformed ") + what + " line: " + line);
  }
  return j;
}

template <typename T, typename KeyFn>
std::vector<T> sorted_by_id(std::vector<T> items, KeyFn key) {
  std::sort(items.begin(), items.end(),
            [&](const T& a, const T& b) { return key(a) < key(b); });
  return items;
}

}  // namespace

std::string serialize_question_bank(const std::vector<QuestionRecord>& bank) {
  auto sorted = sorted_by_id(bank, [](const QuestionRecord& q) { return q.id; });
  std::string out;
  for (const auto& q : sorted) {
    out += question_to_json(q).dump();
    out += '\n';
  }
  return out;
}

std::vector<QuestionRecord> parse_question_bank(const std::string& text) {
  std::vector<QuestionRecord> bank;
  std::istringstream in(text);
  std::string line;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    bank.push_back(question_from_json(parse_json_line(line, "question bank")));
    if (!ids.insert(bank.back().id).second) {
      throw ConflictError("duplicate question id in bank: " + bank.back().id);
    }
  }
  return bank;
}

void save_question_bank(const std::vector<QuestionRecord>& bank, const std::string& path) {
  write_file_atomic(path, serialize_question_bank(bank));
}

std::vector<QuestionRecord> load_question_bank(const std::string& path) {
  return parse_question_bank(read_file(path));
}

std::string serialize_response_log(const std::vector<ResponseTriple>& log) {
  auto sorted = sorted_by_id(log, [](const ResponseTriple& r) {
    return std::make_pair(r.student_id, r.question_id);
  });
  std::string out;
  for (const auto& r : sorted) {
    out += json{{"student_id", r.student_id},
                {"question_id", r.question_id},
                {"correct", r.correct}}
               .dump();
    out += '\n';
  }
  return out;
}

std::vector<ResponseTriple> parse_response_log(const std::string& text) {
  std::vector<ResponseTriple> log;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = parse_json_line(line, "response log");
    log.push_back(ResponseTriple{j.at("student_id").get<std::string>(),
                                 j.at("question_id").get<std::string>(),
                                 j.at("correct").get<int>()});
  }
  return log;
}

void save_response_log(const std::vector<ResponseTriple>& log, const std::string& path) {
  write_file_atomic(path, serialize_response_log(log));
}

std::vector<ResponseTriple> load_response_log(const std::string& path) {
  return parse_response_log(read_file(path));
}

std::string serialize_matrix(const ResponseMatrix& matrix) {
  const std::size_t m = matrix.num_students();
  const std::size_t n = matrix.num_questions();

  std::vector<std::size_t> row_order(m), col_order(n);
  for (std::size_t i = 0; i < m; ++i) row_order[i] = i;
  for (std::size_t j = 0; j < n; ++j) col_order[j] = j;
  std::sort(row_order.begin(), row_order.end(), [&](std::size_t a, std::size_t b) {
    return matrix.students()[a].id < matrix.students()[b].id;
  });
  std::sort(col_order.begin(), col_order.end(), [&](std::size_t a, std::size_t b) {
    return matrix.question_ids()[a] < matrix.question_ids()[b];
  });

  json header;
  header["questions"] = json::array();
  for (std::size_t j : col_order) header["questions"].push_back(matrix.question_ids()[j]);
  header["students"] = json::array();
  for (std::size_t i : row_order) {
    const auto& s = matrix.students()[i];
    header["students"].push_back(json{{"id", s.id},
                                      {"model_name", s.model_name},
                                      {"is_synthetic", s.is_synthetic},
                                      {"origin", to_string(s.origin)}});
  }

  std::string out = header.dump();
  out += '\n';
  for (std::size_t i : row_order) {
    std::string row(n, '0');
    for (std::size_t k = 0; k < n; ++k) {
      const std::int8_t e = matrix.entry(i, col_order[k]);
      row[k] = e < 0 ? '.' : static_cast<char>('0' + e);
    }
    out += row;
    out += '\n';
  }
  if (matrix.has_holdout()) {
    out += "#mask\n";
    for (std::size_t i : row_order) {
      std::string row(n, '0');
      for (std::size_t k = 0; k < n; ++k) {
        row[k] = matrix.held_out(i, col_order[k]) ? '1' : '0';
      }
      out += row;
      out += '\n';
    }
  }
  return out;
}

ResponseMatrix parse_matrix(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty matrix file");
  json header = parse_json_line(line, "matrix header");

  std::vector<std::string> questions =
      header.at("questions").get<std::vector<std::string>>();
  std::vector<StudentRecord> students;
  for (const auto& js : header.at("students")) {
    StudentRecord s;
    s.id = js.at("id").get<std::string>();
    s.model_name = js.value("model_name", s.id);
    s.is_synthetic = js.value("is_synthetic", false);
    s.origin = student_origin_from_string(js.value("origin", std::string("real")));
    students.push_back(std::move(s));
  }

  const std::size_t m = students.size();
  const std::size_t n = questions.size();
  std::vector<std::int8_t> entries;
  entries.reserve(m * n);
  std::vector<std::uint8_t> mask;
  bool in_mask = false;
  std::size_t rows_read = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line == "#mask") {
      in_mask = true;
      continue;
    }
    if (line.size() != n) {
      throw DimensionError("matrix row width " + std::to_string(line.size()) +
                           " does not match question count " + std::to_string(n));
    }
    for (char c : line) {
      if (in_mask) {
        if (c != '0' && c != '1') throw ConfigError("mask rows must be 0/1");
        mask.push_back(c == '1' ? 1 : 0);
      } else {
        if (c == '.') {
          entries.push_back(-1);
        } else if (c == '0' || c == '1') {
          entries.push_back(static_cast<std::int8_t>(c - '0'));
        } else {
          throw ConfigError("matrix rows must contain only 0, 1 or .");
        }
      }
    }
    if (!in_mask) ++rows_read;
  }
  if (rows_read != m) {
    throw DimensionError("matrix file has " + std::to_string(rows_read) +
                         " rows for " + std::to_string(m) + " students");
  }
  ResponseMatrix matrix(std::move(students), std::move(questions), std::move(entries));
  if (!mask.empty()) matrix.set_holdout(std::move(mask));
  return matrix;
}

void save_matrix(const ResponseMatrix& matrix, const std::string& path) {
  write_file_atomic(path, serialize_matrix(matrix));
}

ResponseMatrix load_matrix(const std::string& path) {
  return parse_matrix(read_file(path));
}

std::string serialize_embedding_bank(const std::vector<EmbeddingRecord>& bank) {
  auto sorted = sorted_by_id(bank, [](const EmbeddingRecord& e) { return e.question_id; });
  std::string out;
  for (const auto& e : sorted) {
    json j{{"question_id", e.question_id}, {"dim", e.vector.size()}};
    j["vector"] = e.vector;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<EmbeddingRecord> parse_embedding_bank(const std::string& text) {
  std::vector<EmbeddingRecord> bank;
  std::istringstream in(text);
  std::string line;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = parse_json_line(line, "embedding bank");
    EmbeddingRecord e;
    e.question_id = j.at("question_id").get<std::string>();
    e.vector = j.at("vector").get<std::vector<float>>();
    const auto declared = j.at("dim").get<std::size_t>();
    if (declared != e.vector.size()) {
      throw DimensionError("embedding for '" + e.question_id +
                           "' declares dim " + std::to_string(declared) +
                           " but has " + std::to_string(e.vector.size()));
    }
    if (dim == 0) dim = e.vector.size();
    if (e.vector.size() != dim) {
      throw DimensionError("embedding bank mixes dimensions " + std::to_string(dim) +
                           " and " + std::to_string(e.vector.size()));
    }
    bank.push_back(std::move(e));
  }
  return bank;
}

void save_embedding_bank(const std::vector<EmbeddingRecord>& bank, const std::string& path) {
  write_file_atomic(path, serialize_embedding_bank(bank));
}

std::vector<EmbeddingRecord> load_embedding_bank(const std::string& path) {
  return parse_embedding_bank(read_file(path));
}

}  // namespace diffcal
