#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"
#include "rcqa/data_model.hpp"

namespace rcqa {

// Desk-scale marker-following reading task.
//
// The vocabulary is partitioned into key tokens, answer tokens and filler.
// A query carries one key among filler tokens. An answerable passage holds
// that key as a marker, immediately followed by the gold run of answer
// tokens. Every passage also holds distractor markers (other keys, each
// followed by an answer-token run); unanswerable passages hold only
// distractors. With probability `repeat_fraction` an answerable passage
// repeats the query key before a second run; only the first run is gold,
// which a reader without long-range order cannot resolve.
struct SynthConfig {
  int vocab_size = 50;
  int passage_min = 16;
  int passage_max = 32;
  int query_min = 2;
  int query_max = 4;
  double null_fraction = 0.35;
  int num_keys = 10;
  int distractors = 2;
  int answer_min = 1;
  int answer_max = 3;
  double repeat_fraction = 0.1;
  int n_train = 2000;
  int n_validation = 500;
  int n_calibration = 500;
  int n_test = 500;

  // Throws ConfigError on inconsistent ranges.
  void validate() const;

  int num_answer_tokens() const { return (vocab_size - num_keys) / 2; }
  int total() const {
    return n_train + n_validation + n_calibration + n_test;
  }
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

// Instances are emitted split by split (train, validation, calibration,
// test); the output is a pure function of (config, seed).
std::vector<QaInstance> generate_synthetic(const SynthConfig& config,
                                           std::uint64_t seed);

// Human-readable token names ("k3", "a7", "w12") for the vocabulary file.
Vocabulary synthetic_vocabulary(const SynthConfig& config);

}  // namespace rcqa
