#include "rcqa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "rcqa/error.hpp"

namespace rcqa {

namespace {

void require_non_empty(std::span<const ScoredInstance> scored, const char* what) {
  if (scored.empty()) throw DataError(std::string(what) + ": empty scored set");
}

std::vector<std::size_t> ranking(std::span<const ScoredInstance> scored) {
  std::vector<std::size_t> order(scored.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scored[a].confidence > scored[b].confidence;
  });
  return order;
}

bool is_positive(Outcome o) { return o == Outcome::kADplus; }
bool is_negative(Outcome o) { return o == Outcome::kADminus || o == Outcome::kUD; }

}  // namespace

double reject_all_threshold() { return std::nextafter(1.0, 2.0); }

Decision decide(const DecisionModel& model, double confidence) {
  return confidence >= model.theta ? Decision::kAccept : Decision::kReject;
}

double coverage(std::span<const ScoredInstance> scored, const DecisionModel& model) {
  require_non_empty(scored, "coverage");
  std::size_t accepted = 0;
  for (const auto& s : scored) {
    if (decide(model, s.confidence) == Decision::kAccept) ++accepted;
  }
  return static_cast<double>(accepted) / static_cast<double>(scored.size());
}

double selective_risk(std::span<const ScoredInstance> scored,
                      const DecisionModel& model) {
  require_non_empty(scored, "selective_risk");
  std::size_t accepted = 0;
  std::size_t errors = 0;
  for (const auto& s : scored) {
    if (decide(model, s.confidence) == Decision::kAccept) {
      ++accepted;
      errors += web_qa_loss(s.outcome);
    }
  }
  if (accepted == 0) return 0.0;
  return static_cast<double>(errors) / static_cast<double>(accepted);
}

std::vector<RcPoint> rc_curve(std::span<const ScoredInstance> scored) {
  require_non_empty(scored, "rc_curve");
  const auto order = ranking(scored);
  const double n = static_cast<double>(scored.size());
  std::vector<RcPoint> out;
  out.reserve(scored.size());
  std::size_t errors = 0;
  for (std::size_t k = 1; k <= order.size(); ++k) {
    errors += web_qa_loss(scored[order[k - 1]].outcome);
    out.push_back({static_cast<double>(k) / n,
                   static_cast<double>(errors) / static_cast<double>(k)});
  }
  return out;
}

double aurc(std::span<const ScoredInstance> scored) {
  const auto curve = rc_curve(scored);
  double total = 0.0;
  for (const auto& p : curve) total += p.risk;
  return total / static_cast<double>(curve.size());
}

double roc_auc(std::span<const ScoredInstance> scored) {
  // Rank-sum form with midranks for ties.
  std::vector<std::pair<double, bool>> items;
  for (const auto& s : scored) {
    if (is_positive(s.outcome)) items.emplace_back(s.confidence, true);
    else if (is_negative(s.outcome)) items.emplace_back(s.confidence, false);
  }
  std::size_t n_pos = 0;
  for (const auto& it : items) n_pos += it.second ? 1 : 0;
  const std::size_t n_neg = items.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw DataError("roc_auc needs at least one positive and one negative");
  }
  std::sort(items.begin(), items.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  // Sum over positives of (negatives strictly below + half the tied ones),
  // accumulated in integer half-units.
  long long twice_wins = 0;
  std::size_t i = 0;
  std::size_t neg_below = 0;
  while (i < items.size()) {
    std::size_t j = i;
    std::size_t pos_tied = 0, neg_tied = 0;
    while (j < items.size() && items[j].first == items[i].first) {
      (items[j].second ? pos_tied : neg_tied) += 1;
      ++j;
    }
    twice_wins += static_cast<long long>(pos_tied) *
                  static_cast<long long>(2 * neg_below + neg_tied);
    neg_below += neg_tied;
    i = j;
  }
  return static_cast<double>(twice_wins) /
         (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double average_precision(std::span<const ScoredInstance> scored) {
  const auto order = ranking(scored);
  std::size_t positives = 0;
  double total = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (is_positive(scored[order[r]].outcome)) {
      ++positives;
      total += static_cast<double>(positives) / static_cast<double>(r + 1);
    }
  }
  if (positives == 0) throw DataError("average_precision needs a positive");
  return total / static_cast<double>(positives);
}

Calibration calibrate(std::span<const ScoredInstance> scored, double target_risk) {
  if (!(target_risk >= 0.0 && target_risk <= 1.0)) {
    throw ConfigError("target risk must lie in [0,1]");
  }
  require_non_empty(scored, "calibrate");
  std::vector<double> candidates{0.0, reject_all_threshold()};
  for (const auto& s : scored) candidates.push_back(s.confidence);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()),
                   candidates.end());

  // Walk thresholds upward; the accepted set shrinks as theta grows.
  const auto order = ranking(scored);  // descending confidence
  const std::size_t n = scored.size();
  std::vector<std::size_t> errors_prefix(n + 1, 0);
  for (std::size_t k = 0; k < n; ++k) {
    errors_prefix[k + 1] = errors_prefix[k] + web_qa_loss(scored[order[k]].outcome);
  }
  for (double theta : candidates) {
    // Accepted count = number of confidences >= theta.
    std::size_t accepted = 0;
    {
      std::size_t lo = 0, hi = n;
      while (lo < hi) {
        const std::size_t mid = (lo + hi) / 2;
        if (scored[order[mid]].confidence >= theta) lo = mid + 1;
        else hi = mid;
      }
      accepted = lo;
    }
    const double risk =
        accepted == 0 ? 0.0
                      : static_cast<double>(errors_prefix[accepted]) /
                            static_cast<double>(accepted);
    if (risk <= target_risk) {
      Calibration c;
      c.model.theta = theta;
      c.coverage = static_cast<double>(accepted) / static_cast<double>(n);
      c.risk = risk;
      c.feasible = accepted > 0;
      return c;
    }
  }
  // Unreachable: the reject-all candidate has risk 0.
  Calibration c;
  c.model.theta = reject_all_threshold();
  c.feasible = false;
  return c;
}

RiskReport make_report(const std::string& scorer,
                       std::span<const ScoredInstance> scored) {
  RiskReport r;
  r.scorer = scorer;
  r.n = scored.size();
  r.rc_curve = rc_curve(scored);
  r.aurc = aurc(scored);
  r.full_coverage_risk = r.rc_curve.back().risk;
  for (const char* name : {"AD+", "AD-", "AN", "UN", "UD"}) r.outcome_counts[name] = 0;
  std::size_t pos = 0, neg = 0;
  for (const auto& s : scored) {
    ++r.outcome_counts[std::string(to_string(s.outcome))];
    pos += is_positive(s.outcome);
    neg += is_negative(s.outcome);
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  r.roc_auc = (pos > 0 && neg > 0) ? roc_auc(scored) : nan;
  r.ap = pos > 0 ? average_precision(scored) : nan;
  return r;
}

nlohmann::json report_summary(const RiskReport& r) {
  auto num = [](double v) -> nlohmann::json {
    if (std::isnan(v)) return nullptr;
    return v;
  };
  return nlohmann::json{
      {"scorer", r.scorer},
      {"n", r.n},
      {"aurc", num(r.aurc)},
      {"roc_auc", num(r.roc_auc)},
      {"ap", num(r.ap)},
      {"full_coverage_risk", num(r.full_coverage_risk)},
      {"x100",
       {{"aurc", num(100.0 * r.aurc)},
        {"roc_auc", num(100.0 * r.roc_auc)},
        {"ap", num(100.0 * r.ap)},
        {"full_coverage_risk", num(100.0 * r.full_coverage_risk)}}},
      {"outcome_counts", r.outcome_counts}};
}

}  // namespace rcqa
