#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace diffcal {

struct QuestionRecord {
  std::string id;
  std::string text;
  std::string answer;
  std::string topic;
  std::string source;
  std::optional<int> given_level;
};

enum class StudentOrigin { real, vae, sampled };

const char* to_string(StudentOrigin origin);
StudentOrigin student_origin_from_string(const std::string& s);

struct StudentRecord {
  std::string id;
  std::string model_name;
  bool is_synthetic = false;
  StudentOrigin origin = StudentOrigin::real;
};

struct ResponseTriple {
  std::string student_id;
  std::string question_id;
  int correct = 0;  // 0 or 1
};

// Binary correctness matrix, students as rows and questions as columns.
// Cells may be "not administered" in sparse mode (entry < 0) and excluded
// from every likelihood/statistic; strict mode forbids them.
class ResponseMatrix {
 public:
  ResponseMatrix() = default;
  ResponseMatrix(std::vector<StudentRecord> students,
                 std::vector<std::string> question_ids,
                 std::vector<std::int8_t> entries);

  std::size_t num_students() const { return students_.size(); }
  std::size_t num_questions() const { return question_ids_.size(); }

  const std::vector<StudentRecord>& students() const { return students_; }
  const std::vector<std::string>& question_ids() const { return question_ids_; }

  // 0/1, or -1 for a not-administered cell in sparse mode.
  std::int8_t entry(std::size_t row, std::size_t col) const {
    return entries_[row * question_ids_.size() + col];
  }
  bool administered(std::size_t row, std::size_t col) const {
    return entry(row, col) >= 0;
  }

  bool has_holdout() const { return !holdout_.empty(); }
  bool held_out(std::size_t row, std::size_t col) const {
    return !holdout_.empty() && holdout_[row * question_ids_.size() + col];
  }
  std::size_t holdout_count() const;

  // A cell contributes to fitting iff administered and not held out.
  bool observed(std::size_t row, std::size_t col) const {
    return administered(row, col) && !held_out(row, col);
  }

  void set_holdout(std::vector<std::uint8_t> mask);
  void clear_holdout() { holdout_.clear(); }

  // Appends synthetic rows; holdout mask (if any) is extended with
  // unmasked rows. Widths must match.
  void append_rows(const std::vector<StudentRecord>& students,
                   const std::vector<std::vector<std::int8_t>>& rows);

  double row_accuracy(std::size_t row) const;
  std::size_t student_index(const std::string& id) const;  // throws if absent

 private:
  std::vector<StudentRecord> students_;
  std::vector<std::string> question_ids_;
  std::vector<std::int8_t> entries_;        // row-major
  std::vector<std::uint8_t> holdout_;       // row-major, 1 = held out
};

struct MatrixBuildOptions {
  bool strict = true;  // reject missing (student, question) cells
};

// Rows/columns come out sorted by id, so the result is order-insensitive
// in the input responses.
ResponseMatrix build_response_matrix(const std::vector<ResponseTriple>& responses,
                                     const MatrixBuildOptions& options = {});

// Marks exactly round(fraction * M * N) administered-or-not cells as held
// out, uniformly at random under the seed. Returns a copy.
ResponseMatrix mask_holdout(const ResponseMatrix& matrix, double fraction,
                            std::uint64_t seed);

struct EmbeddingRecord {
  std::string question_id;
  std::vector<float> vector;
  std::string provider;
  std::size_t dim() const { return vector.size(); }
};

// --- persistence -----------------------------------------------------------
// Question bank / response log / embedding bank are JSONL; the matrix file is
// a JSON header line followed by row-major 0/1 rows (and an optional parallel
// holdout bit array after a "#mask" marker). All writers emit canonical
// sorted-by-id order so artifact digests are stable.

std::string serialize_question_bank(const std::vector<QuestionRecord>& bank);
std::vector<QuestionRecord> parse_question_bank(const std::string& text);
void save_question_bank(const std::vector<QuestionRecord>& bank, const std::string& path);
std::vector<QuestionRecord> load_question_bank(const std::string& path);

std::string serialize_response_log(const std::vector<ResponseTriple>& log);
std::vector<ResponseTriple> parse_response_log(const std::string& text);
void save_response_log(const std::vector<ResponseTriple>& log, const std::string& path);
std::vector<ResponseTriple> load_response_log(const std::string& path);

std::string serialize_matrix(const ResponseMatrix& matrix);
ResponseMatrix parse_matrix(const std::string& text);
void save_matrix(const ResponseMatrix& matrix, const std::string& path);
ResponseMatrix load_matrix(const std::string& path);

std::string serialize_embedding_bank(const std::vector<EmbeddingRecord>& bank);
std::vector<EmbeddingRecord> parse_embedding_bank(const std::string& text);
void save_embedding_bank(const std::vector<EmbeddingRecord>& bank, const std::string& path);
std::vector<EmbeddingRecord> load_embedding_bank(const std::string& path);

}  // namespace diffcal
