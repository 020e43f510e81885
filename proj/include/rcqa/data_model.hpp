#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace rcqa {

using TokenId = std::uint32_t;

// Inclusive passage span [start, end].
struct Span {
  int start = 0;
  int end = 0;

  friend bool operator==(const Span&, const Span&) = default;
};

// Gold annotation: a non-empty set of acceptable spans, or NULL when the
// passage does not answer the query.
class GoldAnswer {
 public:
  static GoldAnswer null() { return GoldAnswer(); }
  static GoldAnswer answerable(std::vector<Span> spans);

  bool is_null() const { return spans_.empty(); }
  const std::vector<Span>& spans() const { return spans_; }
  bool matches(const Span& span) const;

  friend bool operator==(const GoldAnswer&, const GoldAnswer&) = default;

 private:
  GoldAnswer() = default;
  std::vector<Span> spans_;
};

enum class Split { kTrain, kValidation, kCalibration, kTest };

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

struct QaInstance {
  std::string qid;
  std::vector<TokenId> query;
  std::vector<TokenId> passage;
  GoldAnswer gold = GoldAnswer::null();
  Split split = Split::kTrain;

  int passage_length() const { return static_cast<int>(passage.size()); }
  friend bool operator==(const QaInstance&, const QaInstance&) = default;
};

// Throws DataError when the instance violates its invariants (empty
// sequences, spans outside the passage, start > end).
void validate(const QaInstance& instance);

// Reader output: a direct answer or NULL, with the decoder's probability for
// the chosen entry.
class Prediction {
 public:
  static Prediction null(double score = 0.0);
  static Prediction direct(Span span, double score);

  bool is_null() const { return !span_.has_value(); }
  const Span& span() const { return *span_; }
  double score() const { return score_; }

  friend bool operator==(const Prediction&, const Prediction&) = default;

 private:
  Prediction() = default;
  std::optional<Span> span_;
  double score_ = 0.0;
};

// The five outcome folds of a Web-QA prediction.
//   ADplus  answerable, direct answer, correct
//   ADminus answerable, direct answer, wrong
//   AN      answerable, null answer
//   UN      unanswerable, null answer
//   UD      unanswerable, direct answer
enum class Outcome { kADplus, kADminus, kAN, kUN, kUD };

std::string_view to_string(Outcome outcome);
Outcome parse_outcome(std::string_view name);

// Correctness is exact (start, end) equality against any gold span.
Outcome categorize(const GoldAnswer& gold, const Prediction& prediction);

// 1 for ADminus and UD, 0 otherwise.
int web_qa_loss(Outcome outcome);

// True for the outcomes a qualify model scores (ADplus, ADminus, UD).
bool is_direct_answer(Outcome outcome);

// Whitespace-token vocabulary; line number in the vocabulary file is the id.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  std::optional<TokenId> find(std::string_view token) const;

  // Splits on whitespace; unknown tokens raise DataError.
  std::vector<TokenId> tokenize(std::string_view text) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// JSON Lines dataset. String query/passage fields need a vocabulary.
std::vector<QaInstance> load_jsonl(const std::filesystem::path& path,
                                   const Vocabulary* vocab = nullptr);
std::vector<QaInstance> parse_jsonl(std::string_view text,
                                    const Vocabulary* vocab = nullptr);
void save_jsonl(const std::filesystem::path& path,
                const std::vector<QaInstance>& instances);
std::string to_jsonl(const std::vector<QaInstance>& instances);

std::vector<QaInstance> select_split(const std::vector<QaInstance>& instances,
                                     Split split);

}  // namespace rcqa
