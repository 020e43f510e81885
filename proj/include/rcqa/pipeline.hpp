#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "rcqa/backbone.hpp"
#include "rcqa/metrics.hpp"
#include "rcqa/probe_cnn.hpp"
#include "rcqa/probes.hpp"
#include "rcqa/synthetic.hpp"

namespace rcqa {

struct PipelineConfig {
  // Existing JSONL dataset; empty means the synthetic generator's output in
  // <out>/data.
  std::filesystem::path dataset_path;
  std::filesystem::path vocab_path;
  SynthConfig synthetic;
  // Master seed. Every component seed is derived from it.
  std::uint64_t seed = 0;
  BackboneConfig backbone;
  ProbeTrainConfig probes;
  ProbeCnnConfig probe_cnn;
  int ensemble_size = 3;
  std::vector<std::string> scorers = {"proba", "aes",            "ens",
                                      "probe-cnn", "probe-cnn-last", "oracle"};
  double target_risk = 0.1;
  // "direct" scores ADplus/ADminus/UD only; "all" also keeps AN/UN (loss 0).
  std::string scope = "direct";
  std::filesystem::path out_dir = "out";
  int heatmaps_per_outcome = 1;
  int threads = 0;  // 0 keeps the OpenMP default
  bool quiet = false;

  void validate() const;
};

void to_json(nlohmann::json& j, const PipelineConfig& c);
// "seed" is mandatory; everything else falls back to defaults.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

// splitmix64 of the master seed mixed with a component tag.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag);

// Output layout under out_dir.
struct Layout {
  std::filesystem::path root;

  std::filesystem::path dataset() const { return root / "data" / "dataset.jsonl"; }
  std::filesystem::path vocab() const { return root / "data" / "vocab.txt"; }
  std::filesystem::path backbone() const { return root / "models" / "backbone.ckpt"; }
  std::filesystem::path probes() const { return root / "models" / "probes.ckpt"; }
  std::filesystem::path snapshot(int epoch) const;
  std::filesystem::path member(int index) const;
  std::filesystem::path train_log() const { return root / "models" / "train_log.json"; }
  std::filesystem::path signals(Split split) const;
  std::filesystem::path qualify(const std::string& scorer) const {
    return root / "qualify" / (scorer + ".ckpt");
  }
  std::filesystem::path decision(const std::string& scorer) const {
    return root / "decision" / (scorer + ".json");
  }
  std::filesystem::path reports() const { return root / "reports"; }
};

// Outcome histogram per exported split.
using OutcomeHistogram = std::map<std::string, int>;

void cmd_gen_data(const PipelineConfig& config);
void cmd_train(const PipelineConfig& config);
std::map<std::string, OutcomeHistogram> cmd_extract(const PipelineConfig& config);
// Returns the checkpoint name: the scorer, or "probe-cnn-last" for the
// last-layer ablation.
std::string cmd_train_qualify(const PipelineConfig& config, const std::string& scorer,
                              LayerMask layers = LayerMask::kAll);

struct CalibrationRecord {
  std::string scorer;
  double target_risk = 0.0;
  Calibration calibration;
};
CalibrationRecord cmd_calibrate(const PipelineConfig& config, const std::string& scorer,
                                double target_risk);
std::vector<RiskReport> cmd_evaluate(const PipelineConfig& config);
void cmd_report(const PipelineConfig& config);

// gen-data (synthetic only), train, extract, train-qualify and calibrate for
// every configured scorer, evaluate, report.
std::vector<RiskReport> run_pipeline(const PipelineConfig& config);

// Scored set of one split under the configured scope.
std::vector<ScoredInstance> score_split(const PipelineConfig& config,
                                        const std::string& scorer, Split split);

}  // namespace rcqa
