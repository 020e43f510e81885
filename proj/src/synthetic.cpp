#include "rcqa/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <random>
#include <string>

#include "rcqa/error.hpp"

namespace rcqa {

void SynthConfig::validate() const {
  auto fail = [](const std::string& what) {
    throw ConfigError("synthetic config: " + what);
  };
  if (num_keys < 2) fail("num_keys must be >= 2");
  if (num_answer_tokens() < 1 ||
      vocab_size - num_keys - num_answer_tokens() < 1) {
    fail("vocab_size too small for the key/answer/filler partition");
  }
  if (passage_min < 1 || passage_min > passage_max) {
    fail("invalid passage length range");
  }
  if (query_min < 1 || query_min > query_max) fail("invalid query length range");
  if (answer_min < 1 || answer_min > answer_max) {
    fail("invalid answer length range");
  }
  if (!(null_fraction >= 0.0 && null_fraction <= 1.0)) {
    fail("null_fraction must lie in [0,1]");
  }
  if (!(repeat_fraction >= 0.0 && repeat_fraction <= 1.0)) {
    fail("repeat_fraction must lie in [0,1]");
  }
  if (distractors < 0 || distractors > num_keys - 1) {
    fail("distractors must lie in [0, num_keys-1]");
  }
  if (n_train < 0 || n_validation < 0 || n_calibration < 0 || n_test < 0) {
    fail("split sizes must be non-negative");
  }
  // Every marker block (key + longest run + separator) must fit; shorter
  // draws are lengthened to fit.
  const int blocks = distractors + 2;
  if (blocks * (answer_max + 2) > passage_max) {
    fail("passage_max too short for the marker blocks");
  }
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size},
                     {"passage_min", c.passage_min},
                     {"passage_max", c.passage_max},
                     {"query_min", c.query_min},
                     {"query_max", c.query_max},
                     {"null_fraction", c.null_fraction},
                     {"num_keys", c.num_keys},
                     {"distractors", c.distractors},
                     {"answer_min", c.answer_min},
                     {"answer_max", c.answer_max},
                     {"repeat_fraction", c.repeat_fraction},
                     {"n_train", c.n_train},
                     {"n_validation", c.n_validation},
                     {"n_calibration", c.n_calibration},
                     {"n_test", c.n_test}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  SynthConfig d;
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.passage_min = j.value("passage_min", d.passage_min);
  c.passage_max = j.value("passage_max", d.passage_max);
  c.query_min = j.value("query_min", d.query_min);
  c.query_max = j.value("query_max", d.query_max);
  c.null_fraction = j.value("null_fraction", d.null_fraction);
  c.num_keys = j.value("num_keys", d.num_keys);
  c.distractors = j.value("distractors", d.distractors);
  c.answer_min = j.value("answer_min", d.answer_min);
  c.answer_max = j.value("answer_max", d.answer_max);
  c.repeat_fraction = j.value("repeat_fraction", d.repeat_fraction);
  c.n_train = j.value("n_train", d.n_train);
  c.n_validation = j.value("n_validation", d.n_validation);
  c.n_calibration = j.value("n_calibration", d.n_calibration);
  c.n_test = j.value("n_test", d.n_test);
}

namespace {

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  int uniform(int lo, int hi) {  // inclusive
    return std::uniform_int_distribution<int>(lo, hi)(rng_);
  }
  bool bernoulli(double p) { return std::bernoulli_distribution(p)(rng_); }
  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

struct Block {
  TokenId key;
  int run_length;
};

QaInstance make_instance(const SynthConfig& c, Sampler& s, Split split,
                         const std::string& qid) {
  const int n_answer = c.num_answer_tokens();
  const TokenId answer_base = static_cast<TokenId>(c.num_keys);
  const TokenId filler_base = static_cast<TokenId>(c.num_keys + n_answer);
  const int n_filler = c.vocab_size - c.num_keys - n_answer;

  auto filler = [&] {
    return filler_base + static_cast<TokenId>(s.uniform(0, n_filler - 1));
  };
  auto answer_token = [&] {
    return answer_base + static_cast<TokenId>(s.uniform(0, n_answer - 1));
  };
  auto run_length = [&] { return s.uniform(c.answer_min, c.answer_max); };

  QaInstance inst;
  inst.qid = qid;
  inst.split = split;

  const TokenId key = static_cast<TokenId>(s.uniform(0, c.num_keys - 1));
  const int lq = s.uniform(c.query_min, c.query_max);
  inst.query.assign(lq, 0);
  const int key_pos = s.uniform(0, lq - 1);
  for (int i = 0; i < lq; ++i) inst.query[i] = i == key_pos ? key : filler();

  const bool answerable = !s.bernoulli(c.null_fraction);
  const bool repeated = answerable && s.bernoulli(c.repeat_fraction);

  // Distractor keys are distinct and never the query key.
  std::vector<TokenId> others;
  for (int k = 0; k < c.num_keys; ++k) {
    if (static_cast<TokenId>(k) != key) others.push_back(k);
  }
  std::shuffle(others.begin(), others.end(), s.engine());

  std::vector<Block> blocks;
  if (answerable) blocks.push_back({key, run_length()});
  if (repeated) blocks.push_back({key, run_length()});
  for (int d = 0; d < c.distractors; ++d) {
    blocks.push_back({others[d], run_length()});
  }
  // Unanswerable passages get one extra distractor so the marker count does
  // not reveal answerability.
  if (!answerable) blocks.push_back({others[c.distractors], run_length()});

  // When the key repeats, the earlier occurrence is gold.
  std::shuffle(blocks.begin(), blocks.end(), s.engine());

  int used = 0;
  for (const Block& b : blocks) used += b.run_length + 2;
  const int lp =
      s.uniform(std::max(c.passage_min, used), std::max(c.passage_max, used));

  // Distribute the free filler slots in front of, between and after blocks.
  const int free_slots = lp - used;
  std::vector<int> gaps(blocks.size() + 1, 0);
  for (int i = 0; i < free_slots; ++i) {
    ++gaps[s.uniform(0, static_cast<int>(gaps.size()) - 1)];
  }

  std::vector<Span> gold_spans;
  bool gold_taken = false;
  inst.passage.reserve(lp);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (int i = 0; i < gaps[b]; ++i) inst.passage.push_back(filler());
    inst.passage.push_back(blocks[b].key);
    const int start = static_cast<int>(inst.passage.size());
    for (int i = 0; i < blocks[b].run_length; ++i) {
      inst.passage.push_back(answer_token());
    }
    if (answerable && !gold_taken && blocks[b].key == key) {
      gold_spans.push_back({start, start + blocks[b].run_length - 1});
      gold_taken = true;
    }
    inst.passage.push_back(filler());
  }
  for (int i = 0; i < gaps.back(); ++i) inst.passage.push_back(filler());

  inst.gold = answerable ? GoldAnswer::answerable(std::move(gold_spans))
                         : GoldAnswer::null();
  return inst;
}

}  // namespace

std::vector<QaInstance> generate_synthetic(const SynthConfig& config,
                                           std::uint64_t seed) {
  config.validate();
  Sampler sampler(seed);
  std::vector<QaInstance> out;
  out.reserve(config.total());
  const std::pair<Split, int> plan[] = {
      {Split::kTrain, config.n_train},
      {Split::kValidation, config.n_validation},
      {Split::kCalibration, config.n_calibration},
      {Split::kTest, config.n_test}};
  int serial = 0;
  for (const auto& [split, count] : plan) {
    for (int i = 0; i < count; ++i) {
      char qid[32];
      std::snprintf(qid, sizeof(qid), "syn-%06d", serial++);
      out.push_back(make_instance(config, sampler, split, qid));
    }
  }
  return out;
}

Vocabulary synthetic_vocabulary(const SynthConfig& config) {
  config.validate();
  std::vector<std::string> tokens;
  const int n_answer = config.num_answer_tokens();
  for (int i = 0; i < config.vocab_size; ++i) {
    if (i < config.num_keys) {
      tokens.push_back("k" + std::to_string(i));
    } else if (i < config.num_keys + n_answer) {
      tokens.push_back("a" + std::to_string(i - config.num_keys));
    } else {
      tokens.push_back("w" + std::to_string(i - config.num_keys - n_answer));
    }
  }
  return Vocabulary(std::move(tokens));
}

}  // namespace rcqa
