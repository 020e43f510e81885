#include "rcqa/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "rcqa/error.hpp"

namespace rcqa {

using nlohmann::json;

GoldAnswer GoldAnswer::answerable(std::vector<Span> spans) {
  if (spans.empty()) {
    throw DataError("answerable gold answer needs at least one span");
  }
  for (const Span& s : spans) {
    if (s.start < 0 || s.start > s.end) {
      throw DataError("gold span violates 0 <= start <= end");
    }
  }
  GoldAnswer gold;
  gold.spans_ = std::move(spans);
  return gold;
}

bool GoldAnswer::matches(const Span& span) const {
  return std::find(spans_.begin(), spans_.end(), span) != spans_.end();
}

Prediction Prediction::null(double score) {
  if (!std::isfinite(score)) throw DataError("prediction score is not finite");
  Prediction p;
  p.score_ = score;
  return p;
}

Prediction Prediction::direct(Span span, double score) {
  if (!std::isfinite(score)) throw DataError("prediction score is not finite");
  Prediction p;
  p.span_ = span;
  p.score_ = score;
  return p;
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kCalibration: return "calibration";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "validation") return Split::kValidation;
  if (name == "calibration") return Split::kCalibration;
  if (name == "test") return Split::kTest;
  throw DataError("unknown split '" + std::string(name) + "'");
}

std::string_view to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::kADplus: return "AD+";
    case Outcome::kADminus: return "AD-";
    case Outcome::kAN: return "AN";
    case Outcome::kUN: return "UN";
    case Outcome::kUD: return "UD";
  }
  return "?";
}

Outcome parse_outcome(std::string_view name) {
  if (name == "AD+") return Outcome::kADplus;
  if (name == "AD-") return Outcome::kADminus;
  if (name == "AN") return Outcome::kAN;
  if (name == "UN") return Outcome::kUN;
  if (name == "UD") return Outcome::kUD;
  throw DataError("unknown outcome '" + std::string(name) + "'");
}

Outcome categorize(const GoldAnswer& gold, const Prediction& prediction) {
  if (gold.is_null()) {
    return prediction.is_null() ? Outcome::kUN : Outcome::kUD;
  }
  if (prediction.is_null()) return Outcome::kAN;
  return gold.matches(prediction.span()) ? Outcome::kADplus
                                         : Outcome::kADminus;
}

int web_qa_loss(Outcome outcome) {
  return (outcome == Outcome::kADminus || outcome == Outcome::kUD) ? 1 : 0;
}

bool is_direct_answer(Outcome outcome) {
  return outcome == Outcome::kADplus || outcome == Outcome::kADminus ||
         outcome == Outcome::kUD;
}

void validate(const QaInstance& instance) {
  if (instance.query.empty()) {
    throw DataError("instance '" + instance.qid + "': empty query");
  }
  if (instance.passage.empty()) {
    throw DataError("instance '" + instance.qid + "': empty passage");
  }
  for (const Span& s : instance.gold.spans()) {
    if (s.start > s.end) {
      throw DataError("instance '" + instance.qid + "': start>end");
    }
    if (s.start < 0 || s.end >= instance.passage_length()) {
      throw DataError("instance '" + instance.qid +
                      "': span out of passage range");
    }
  }
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary(std::vector<std::string> tokens)
    : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw DataError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<TokenId> Vocabulary::tokenize(std::string_view text) const {
  std::vector<TokenId> ids;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) {
    auto id = find(word);
    if (!id) throw DataError("token '" + word + "' not in vocabulary");
    ids.push_back(*id);
  }
  return ids;
}

// ---------------------------------------------------------------------------
// JSON Lines

namespace {

std::vector<TokenId> read_tokens(const json& field, const char* name,
                                 const Vocabulary* vocab) {
  if (field.is_string()) {
    if (vocab == nullptr) {
      throw DataError(std::string("field '") + name +
                      "' is text but no vocabulary was given");
    }
    return vocab->tokenize(field.get<std::string>());
  }
  if (!field.is_array()) {
    throw DataError(std::string("field '") + name +
                    "' must be an array or string");
  }
  std::vector<TokenId> ids;
  ids.reserve(field.size());
  for (const auto& v : field) {
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw DataError(std::string("field '") + name +
                      "' holds a non-token value");
    }
    ids.push_back(static_cast<TokenId>(v.get<long long>()));
  }
  return ids;
}

QaInstance parse_record(const json& rec, const Vocabulary* vocab) {
  if (!rec.is_object()) throw DataError("record is not a JSON object");
  for (const char* key : {"qid", "query", "passage", "answers", "split"}) {
    if (!rec.contains(key)) {
      throw DataError(std::string("missing field '") + key + "'");
    }
  }
  QaInstance inst;
  if (!rec["qid"].is_string()) throw DataError("field 'qid' must be a string");
  inst.qid = rec["qid"].get<std::string>();
  inst.query = read_tokens(rec["query"], "query", vocab);
  inst.passage = read_tokens(rec["passage"], "passage", vocab);
  if (!rec["split"].is_string()) {
    throw DataError("field 'split' must be a string");
  }
  inst.split = parse_split(rec["split"].get<std::string>());

  const json& answers = rec["answers"];
  if (!answers.is_array()) throw DataError("field 'answers' must be an array");
  std::vector<Span> spans;
  for (const auto& a : answers) {
    if (!a.is_object() || !a.contains("start") || !a.contains("end") ||
        !a["start"].is_number_integer() || !a["end"].is_number_integer()) {
      throw DataError("field 'answers' entries need integer start/end");
    }
    Span s{a["start"].get<int>(), a["end"].get<int>()};
    if (s.start > s.end) throw DataError("field 'answers': start>end");
    spans.push_back(s);
  }
  inst.gold = spans.empty() ? GoldAnswer::null()
                            : GoldAnswer::answerable(std::move(spans));
  validate(inst);
  return inst;
}

json to_record(const QaInstance& inst) {
  json answers = json::array();
  for (const Span& s : inst.gold.spans()) {
    answers.push_back({{"start", s.start}, {"end", s.end}});
  }
  return json{{"qid", inst.qid},
              {"query", inst.query},
              {"passage", inst.passage},
              {"answers", answers},
              {"split", to_string(inst.split)}};
}

}  // namespace

std::vector<QaInstance> parse_jsonl(std::string_view text,
                                    const Vocabulary* vocab) {
  std::vector<QaInstance> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      out.push_back(parse_record(json::parse(line), vocab));
    } catch (const json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<QaInstance> load_jsonl(const std::filesystem::path& path,
                                   const Vocabulary* vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_jsonl(buf.str(), vocab);
}

std::string to_jsonl(const std::vector<QaInstance>& instances) {
  std::string out;
  for (const auto& inst : instances) {
    out += to_record(inst).dump();
    out += '\n';
  }
  return out;
}

void save_jsonl(const std::filesystem::path& path,
                const std::vector<QaInstance>& instances) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write dataset " + path.string());
  out << to_jsonl(instances);
}

std::vector<QaInstance> select_split(const std::vector<QaInstance>& instances,
                                     Split split) {
  std::vector<QaInstance> out;
  for (const auto& inst : instances) {
    if (inst.split == split) out.push_back(inst);
  }
  return out;
}

}  // namespace rcqa
