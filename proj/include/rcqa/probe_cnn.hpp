#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "rcqa/checkpoint.hpp"
#include "rcqa/numerics.hpp"
#include "rcqa/parallel.hpp"
#include "rcqa/probes.hpp"

namespace rcqa {

struct ConvSpec {
  int rows = 3;
  int cols = 3;
  int channels = 8;
};

// Which probe layers feed the scorer: all of 1..T, or P^(T) alone.
enum class LayerMask { kAll, kLast };

std::string_view to_string(LayerMask mask);
LayerMask parse_layer_mask(std::string_view name);

struct ProbeCnnConfig {
  ConvSpec conv1;
  ConvSpec conv2;
  int top_k = 16;
  int hidden = 32;
  LayerMask layers = LayerMask::kAll;
  int epochs = 30;
  double learning_rate = 1e-3;
  int batch_pairs = 32;
  // Pairs drawn per epoch = pair_multiplier x the smaller class size.
  int pair_multiplier = 4;
  // Share of the direct-answer validation records held out for choosing the
  // best epoch.
  double holdout_fraction = 0.1;
  std::uint64_t seed = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const ProbeCnnConfig& c);
void from_json(const nlohmann::json& j, ProbeCnnConfig& c);

// 2-channel image: channel 0 holds start vectors, channel 1 end vectors;
// row t-1 is layer t; columns are passage positions plus NULL. Throws
// DataError on ragged vectors.
Dense3 stack_signals(const ProbeSignals& signals);
Dense3 stack_signals(const ProbeSignals& signals, LayerMask mask);

struct ProbeCnnParams {
  Dense2 conv1_weights;  // C1 x (2 * kr * kc)
  Dense2 conv1_bias;     // 1 x C1
  Dense2 conv2_weights;  // C2 x (C1 * kr * kc)
  Dense2 conv2_bias;     // 1 x C2
  Dense2 fc1_weights;    // (C2 * k) x hidden
  Dense2 fc1_bias;       // 1 x hidden
  Dense2 fc2_weights;    // hidden x 1
  Dense2 fc2_bias;       // 1 x 1

  ParamList list();
  ProbeCnnParams zeros_like() const;

  friend bool operator==(const ProbeCnnParams&, const ProbeCnnParams&) = default;
};

// Intermediate values of one evaluation, kept for backpropagation.
struct ProbeCnnTrace {
  Dense3 input;
  Dense3 conv1_pre;
  Dense3 conv1_out;
  Dense3 conv2_pre;
  Dense3 conv2_out;
  std::vector<TopK> topk;  // one per conv2 channel
  std::vector<double> features;
  std::vector<double> hidden_pre;
  std::vector<double> hidden;
  double logit = 0.0;
  double confidence = 0.5;

  // Distance to the nearest non-differentiable point: ReLU pre-activations
  // near zero or near-ties at the top-k selection boundary.
  double kink_margin() const;
};

// conv1 -> ReLU -> conv2 -> ReLU -> per-channel sorted top-k ->
// fully connected (ReLU hidden layer) -> logistic.
class ProbeCnn {
 public:
  ProbeCnn() = default;
  ProbeCnn(ProbeCnnConfig config, ProbeCnnParams params);
  static ProbeCnn initialize(const ProbeCnnConfig& config);

  const ProbeCnnConfig& config() const { return config_; }
  const ProbeCnnParams& params() const { return params_; }
  ProbeCnnParams& mutable_params() { return params_; }

  Conv2dShape conv1_shape() const;
  Conv2dShape conv2_shape() const;

  // Applies the layer mask, then scores.
  double score(const ProbeSignals& signals) const;
  // Scores an already-stacked (and masked) input.
  ProbeCnnTrace evaluate(const Dense3& input) const;
  // Adds d(loss)/d(params) given d(loss)/d(confidence).
  void backward(const ProbeCnnTrace& trace, double grad_confidence,
                ProbeCnnParams& grad) const;

  Checkpoint to_checkpoint() const;
  static ProbeCnn from_checkpoint(const Checkpoint& checkpoint);

 private:
  ProbeCnnConfig config_;
  ProbeCnnParams params_;
};

double pairwise_hinge(double positive, double negative);

// Mean of max(0, 1 - g(pos) + g(neg)) over the listed (pos, neg) index
// pairs; gradients are added into `grad` when non-null.
double pairwise_loss(const ProbeCnn& model, std::span<const Dense3> positives,
                     std::span<const Dense3> negatives,
                     std::span<const std::pair<int, int>> pairs,
                     ProbeCnnParams* grad, Exec exec);

struct ProbeCnnTraining {
  ProbeCnn model;
  std::vector<double> train_loss;    // mean sampled-pair loss per epoch
  std::vector<double> holdout_loss;  // all-pairs loss on the held-out slice
  int best_epoch = 0;                // 1-based
};

// Trains on the ADplus vs ADminus/UD records of a validation dump; AN and
// UN records are skipped. Throws DataError("insufficient pair supply") when
// either side is empty.
ProbeCnnTraining train_probe_cnn(const ProbeCnnConfig& config,
                                 const std::vector<SignalRecord>& validation,
                                 Exec exec = Exec::kParallel);

}  // namespace rcqa
