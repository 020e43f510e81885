#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "rcqa/checkpoint.hpp"
#include "rcqa/data_model.hpp"
#include "rcqa/numerics.hpp"
#include "rcqa/parallel.hpp"

namespace rcqa {

struct BackboneConfig {
  int vocab_size = 50;
  int embed_width = 32;
  int hidden_width = 32;
  int ffn_width = 64;
  int layers = 4;
  int span_cap = 16;
  // Adds left/right neighbour embeddings to P^(0). With this off the reader
  // is purely content based: permuting passage tokens permutes its outputs.
  bool local_context = true;
  int epochs = 10;
  int batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const BackboneConfig& c);
void from_json(const nlohmann::json& j, BackboneConfig& c);

// One query-aware interaction block:
//   H = X + softmax((X Wq)(Q0 Wk)^T / sqrt(w)) (Q0 Wv)
//   Y = H + relu(H W1 + b1) W2 + b2
struct InteractionLayer {
  Dense2 query_proj;   // w x w
  Dense2 key_proj;     // h0 x w
  Dense2 value_proj;   // h0 x w
  Dense2 ffn_in;       // w x f
  Dense2 ffn_in_bias;  // 1 x f
  Dense2 ffn_out;      // f x w
  Dense2 ffn_out_bias; // 1 x w

  friend bool operator==(const InteractionLayer&, const InteractionLayer&) = default;
};

struct BackboneParams {
  Dense2 embedding;      // V x h0
  Dense2 left_context;   // V x h0, empty without local context
  Dense2 right_context;  // V x h0, empty without local context
  Dense2 null_row;       // 1 x h0
  Dense2 input_proj;     // h0 x w, empty when h0 == w
  std::vector<InteractionLayer> layers;
  Dense2 start_head;     // w x 1
  Dense2 end_head;       // w x 1

  // Non-empty arrays in a fixed order; names are checkpoint keys.
  ParamList list();
  BackboneParams zeros_like() const;

  friend bool operator==(const BackboneParams&, const BackboneParams&) = default;
};

struct BackboneModel {
  BackboneConfig config;
  BackboneParams params;

  static BackboneModel initialize(const BackboneConfig& config);

  Checkpoint to_checkpoint() const;
  static BackboneModel from_checkpoint(const Checkpoint& checkpoint);
};

// P^(0..T); each entry has l_p + 1 rows, the last being the NULL slot.
struct BackboneActivations {
  std::vector<Dense2> layers;
};

struct BackboneOutput {
  BackboneActivations activations;
  std::vector<double> start_logits;
  std::vector<double> end_logits;
};

// Throws DataError for token ids outside the vocabulary.
BackboneOutput forward(const BackboneModel& model, const QaInstance& instance);

struct HeadProbs {
  std::vector<double> start;
  std::vector<double> end;

  friend bool operator==(const HeadProbs&, const HeadProbs&) = default;
};
HeadProbs head_probs(const BackboneOutput& out);

// Most probable entry of L(p) = {(s, e): 0 <= s <= e < l_p, e - s < cap}
// plus NULL, where the vectors have l_p + 1 entries and the last is NULL.
// Ties go to the smallest start, then the smallest end; NULL loses ties.
// Throws DataError when the inputs are not probability vectors.
Prediction decode(std::span<const double> start_probs,
                  std::span<const double> end_probs, int span_cap);

// Throws DataError unless v is a non-empty, finite, non-negative vector
// summing to 1 within 1e-6.
void require_probability_vector(std::span<const double> v, const char* what);

// Training targets: the first gold span, or the NULL slot twice.
std::pair<int, int> span_targets(const QaInstance& instance);

// Mean start+end cross entropy over the batch; gradients (also averaged) are
// added into `grad`.
double backbone_loss(const BackboneModel& model,
                     std::span<const QaInstance* const> batch,
                     BackboneParams* grad, Exec exec);

struct BackboneTraining {
  BackboneModel model;
  std::vector<BackboneModel> snapshots;  // one per epoch
  std::vector<double> epoch_loss;
};

// Mini-batch Adam on the start/end log-likelihood. Deterministic under
// config.seed for either execution policy. Throws ConfigError on an empty
// training set.
BackboneTraining train_backbone(const BackboneConfig& config,
                                const std::vector<QaInstance>& train,
                                Exec exec = Exec::kParallel);

// FNV-1a over the serialized checkpoint; used to assert models are untouched.
std::uint64_t checksum(const BackboneModel& model);

}  // namespace rcqa
