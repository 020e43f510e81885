#pragma once

#include <filesystem>
#include <vector>

#include "json.hpp"
#include "rcqa/backbone.hpp"
#include "rcqa/checkpoint.hpp"
#include "rcqa/data_model.hpp"
#include "rcqa/numerics.hpp"
#include "rcqa/parallel.hpp"

namespace rcqa {

// Linear start/end probes for layers 1..T (no bias term).
struct ProbeParams {
  std::vector<Dense2> start;  // width x 1 per layer
  std::vector<Dense2> end;

  static ProbeParams zeros(const BackboneModel& backbone);
  int layer_count() const { return static_cast<int>(start.size()); }

  ParamList list();
  Checkpoint to_checkpoint() const;
  static ProbeParams from_checkpoint(const Checkpoint& checkpoint);

  friend bool operator==(const ProbeParams&, const ProbeParams&) = default;
};

struct LayerSignals {
  std::vector<double> start;
  std::vector<double> end;

  friend bool operator==(const LayerSignals&, const LayerSignals&) = default;
};

// Signals for t = 1..T, bottom to top. Every vector has l_p + 1 entries.
struct ProbeSignals {
  std::vector<LayerSignals> layers;

  friend bool operator==(const ProbeSignals&, const ProbeSignals&) = default;
};

// s^(t) = softmax(P^(t) v_s^(t)), e^(t) = softmax(P^(t) v_e^(t)). The
// softmax covers the NULL slot. Throws ShapeError on width mismatch.
ProbeSignals probe_forward(const ProbeParams& params,
                           const BackboneActivations& activations);

// -log s^(t)[target_start] - log e^(t)[target_end] for one layer; gradients
// are added to grad_start / grad_end when non-null.
double probe_layer_loss(const Dense2& activation, const Dense2& start_weights,
                        const Dense2& end_weights, int target_start,
                        int target_end, Dense2* grad_start, Dense2* grad_end);

struct ProbeTrainConfig {
  int iterations = 300;
  // Multiplier on the per-layer 1/L step, where L = max squared row norm of
  // the layer's activations bounds the curvature of the mean loss.
  double step_scale = 1.0;
};

void to_json(nlohmann::json& j, const ProbeTrainConfig& c);
void from_json(const nlohmann::json& j, ProbeTrainConfig& c);

struct ProbeTraining {
  ProbeParams params;
  // loss_history[t][k]: mean training loss of layer t+1 before step k; the
  // final entry is the loss after the last step.
  std::vector<std::vector<double>> loss_history;
};

// Full-batch gradient descent on each layer's probe, starting from zero.
// The backbone is only read.
ProbeTraining train_probes(const BackboneModel& backbone,
                           const std::vector<QaInstance>& train,
                           const ProbeTrainConfig& config,
                           Exec exec = Exec::kParallel);

// One row of the signal dump.
struct SignalRecord {
  std::string qid;
  Outcome outcome = Outcome::kUN;
  Prediction prediction = Prediction::null();
  ProbeSignals signals;
  HeadProbs head;  // the backbone's own start/end distributions

  friend bool operator==(const SignalRecord&, const SignalRecord&) = default;
};

// Runs forward, decode and categorize per instance and attaches the probe
// signals. Output order follows input order.
std::vector<SignalRecord> export_signals(const BackboneModel& backbone,
                                         const ProbeParams& probes,
                                         const std::vector<QaInstance>& instances,
                                         Exec exec = Exec::kParallel);

// JSON Lines signal dump:
//   {"qid": str, "outcome": "AD+"|"AD-"|"AN"|"UN"|"UD",
//    "prediction": {"null": bool, "start": int, "end": int, "score": real},
//    "signals": [[s_vec, e_vec], ...],   // layers 1..T
//    "head": [s_vec, e_vec]}
std::string signals_to_jsonl(const std::vector<SignalRecord>& records);
std::vector<SignalRecord> signals_from_jsonl(std::string_view text);
void save_signals(const std::filesystem::path& path,
                  const std::vector<SignalRecord>& records);
std::vector<SignalRecord> load_signals(const std::filesystem::path& path);

}  // namespace rcqa
