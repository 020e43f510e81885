#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rcqa/data_model.hpp"

namespace rcqa {

struct ScoredInstance {
  std::string qid;
  Outcome outcome = Outcome::kADplus;
  double confidence = 0.0;
};

// Accepts a prediction iff confidence >= theta. theta normally lies in
// [0, 1]; calibrate() may return the reject-all threshold just above 1.
struct DecisionModel {
  double theta = 0.0;
};

// Threshold that rejects every confidence in [0, 1].
double reject_all_threshold();

enum class Decision { kAccept, kReject };

Decision decide(const DecisionModel& model, double confidence);

// Accepted share of the set. Throws DataError on an empty set.
double coverage(std::span<const ScoredInstance> scored, const DecisionModel& model);

// Mean Web-QA loss over accepted instances; 0 when nothing is accepted.
double selective_risk(std::span<const ScoredInstance> scored,
                      const DecisionModel& model);

struct RcPoint {
  double coverage = 0.0;
  double risk = 0.0;
};

// Confidence-descending stable order (ties keep input order); point k is
// (k/n, errors among the first k / k).
std::vector<RcPoint> rc_curve(std::span<const ScoredInstance> scored);

// Mean risk over the n points of rc_curve.
double aurc(std::span<const ScoredInstance> scored);

// Mann-Whitney estimate with ADplus as positives and ADminus/UD as
// negatives; ties count one half. Throws DataError unless both classes are
// present.
double roc_auc(std::span<const ScoredInstance> scored);

// Mean precision at the rank of each ADplus instance, ranking by confidence
// descending with stable ties. Throws DataError with no positives.
double average_precision(std::span<const ScoredInstance> scored);

struct Calibration {
  DecisionModel model;
  double coverage = 0.0;
  double risk = 0.0;
  // False when no threshold with positive coverage meets the target; the
  // model then rejects everything.
  bool feasible = true;
};

// Smallest candidate threshold (0, each distinct confidence, and the
// reject-all threshold) whose selective risk is at most target_risk.
Calibration calibrate(std::span<const ScoredInstance> scored, double target_risk);

struct RiskReport {
  std::string scorer;
  std::size_t n = 0;
  std::vector<RcPoint> rc_curve;
  double aurc = 0.0;
  double roc_auc = 0.0;  // NaN when undefined (single class)
  double ap = 0.0;       // NaN when undefined (no positives)
  double full_coverage_risk = 0.0;
  std::map<std::string, int> outcome_counts;
};

RiskReport make_report(const std::string& scorer,
                       std::span<const ScoredInstance> scored);

// Summary record: raw [0,1] values and the same values x100.
nlohmann::json report_summary(const RiskReport& report);

}  // namespace rcqa
