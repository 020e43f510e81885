#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "rcqa/backbone.hpp"
#include "rcqa/probe_cnn.hpp"
#include "rcqa/probes.hpp"

namespace rcqa {

// Max over non-NULL spans in L(p) of start[s] * end[e]. Inputs are
// probability vectors over l_p + 1 slots; throws DataError otherwise.
double proba_score(std::span<const double> start_probs,
                   std::span<const double> end_probs, int span_cap);

// Averages post-softmax start and end vectors across the given head
// distributions, then applies proba_score. Throws ConfigError when empty.
double averaged_proba_score(std::span<const HeadProbs> heads, int span_cap);

// Runs each model on the instance and applies averaged_proba_score.
// aes_score and ens_score share this rule; they differ in where the models
// come from (per-epoch snapshots vs independent initializations).
double aes_score(std::span<const BackboneModel> snapshots,
                 const QaInstance& instance, int span_cap);
double ens_score(std::span<const BackboneModel> models,
                 const QaInstance& instance, int span_cap);

// 1 for ADplus, 0 for ADminus and UD. Throws DataError for AN and UN.
double oracle_score(Outcome outcome);

struct ProbaScorer {
  int span_cap = 16;
};
struct AesScorer {
  std::vector<BackboneModel> snapshots;
  std::vector<std::string> sources;  // checkpoint paths, for the marker
  int span_cap = 16;
};
struct EnsScorer {
  std::vector<BackboneModel> members;
  std::vector<std::string> sources;
  int span_cap = 16;
};
struct OracleScorer {};

using QualifyModel =
    std::variant<ProbeCnn, ProbaScorer, AesScorer, EnsScorer, OracleScorer>;

std::string scorer_kind(const QualifyModel& model);

// Confidence in [0, 1] for one exported record. AES/ENS also need the
// instance itself to run their member models.
double score(const QualifyModel& model, const SignalRecord& record,
             const QaInstance& instance);

// Scores every record; records and instances are aligned by position.
std::vector<double> score_all(const QualifyModel& model,
                              const std::vector<SignalRecord>& records,
                              const std::vector<QaInstance>& instances,
                              Exec exec = Exec::kParallel);

// PROBA/ORACLE checkpoints are parameter-free markers; AES/ENS checkpoints
// list member checkpoint paths relative to the qualify checkpoint's folder.
Checkpoint to_checkpoint(const QualifyModel& model);
QualifyModel load_qualify(const std::filesystem::path& path);

}  // namespace rcqa
