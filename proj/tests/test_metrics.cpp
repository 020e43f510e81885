#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rcqa/error.hpp"
#include "rcqa/metrics.hpp"

namespace rcqa {
namespace {

std::vector<ScoredInstance> make(std::vector<double> conf, std::vector<int> loss) {
  std::vector<ScoredInstance> out;
  for (std::size_t i = 0; i < conf.size(); ++i) {
    out.push_back({"q" + std::to_string(i), loss[i] ? Outcome::kADminus : Outcome::kADplus,
                   conf[i]});
  }
  return out;
}

TEST(Decide, BoundaryIsInclusive) {
  EXPECT_EQ(decide({0.5}, 0.5), Decision::kAccept);
  EXPECT_EQ(decide({0.0}, 0.0), Decision::kAccept);
  EXPECT_EQ(decide({1.0}, 0.999), Decision::kReject);
  EXPECT_EQ(decide({reject_all_threshold()}, 1.0), Decision::kReject);
}

TEST(Coverage, Examples) {
  const auto s = make({0.9, 0.4, 0.7}, {0, 0, 0});
  EXPECT_DOUBLE_EQ(coverage(s, {0.5}), 2.0 / 3.0);
  EXPECT_EQ(coverage(s, {0.0}), 1.0);
  EXPECT_EQ(coverage(s, {std::nextafter(0.9, 1.0)}), 0.0);
  EXPECT_THROW(coverage({}, {0.5}), DataError);
}

TEST(SelectiveRisk, Examples) {
  const auto s = make({0.2, 0.8, 0.9}, {1, 0, 0});
  EXPECT_DOUBLE_EQ(selective_risk(s, {0.0}), 1.0 / 3.0);
  EXPECT_EQ(selective_risk(s, {0.5}), 0.0);
  EXPECT_EQ(selective_risk(s, {reject_all_threshold()}), 0.0);
}

TEST(SelectiveRisk, UnansweredOutcomesCarryNoLoss) {
  std::vector<ScoredInstance> s = {{"a", Outcome::kAN, 0.5}, {"b", Outcome::kUN, 0.5},
                                   {"c", Outcome::kUD, 0.5}};
  EXPECT_DOUBLE_EQ(selective_risk(s, {0.0}), 1.0 / 3.0);
}

TEST(RcCurve, HandEnumeration) {
  const auto c = rc_curve(make({0.9, 0.7, 0.5}, {0, 1, 0}));
  ASSERT_EQ(c.size(), 3u);
  EXPECT_DOUBLE_EQ(c[0].coverage, 1.0 / 3.0);
  EXPECT_EQ(c[0].risk, 0.0);
  EXPECT_DOUBLE_EQ(c[1].coverage, 2.0 / 3.0);
  EXPECT_EQ(c[1].risk, 0.5);
  EXPECT_EQ(c[2].coverage, 1.0);
  EXPECT_DOUBLE_EQ(c[2].risk, 1.0 / 3.0);
}

TEST(RcCurve, FlatCurves) {
  for (const auto& p : rc_curve(make({0.1, 0.5, 0.3}, {0, 0, 0}))) EXPECT_EQ(p.risk, 0.0);
  for (const auto& p : rc_curve(make({0.1, 0.5, 0.3}, {1, 1, 1}))) EXPECT_EQ(p.risk, 1.0);
}

TEST(RcCurve, TiesKeepInputOrder) {
  const auto c = rc_curve(make({0.5, 0.5}, {1, 0}));
  EXPECT_EQ(c[0].risk, 1.0);
  EXPECT_EQ(c[1].risk, 0.5);
}

TEST(Aurc, Examples) {
  EXPECT_NEAR(aurc(make({0.9, 0.7, 0.5}, {0, 1, 0})), 5.0 / 18.0, 1e-15);
  EXPECT_DOUBLE_EQ(aurc(make({1, 1, 1, 0}, {0, 0, 0, 1})), 0.0625);
  EXPECT_EQ(aurc(make({0.3, 0.2}, {0, 0})), 0.0);
}

TEST(RocAuc, Examples) {
  std::vector<ScoredInstance> a = {{"p", Outcome::kADplus, 0.9}, {"p", Outcome::kADplus, 0.7},
                                   {"n", Outcome::kADminus, 0.4}};
  EXPECT_EQ(roc_auc(a), 1.0);
  std::vector<ScoredInstance> b = {{"p", Outcome::kADplus, 0.5}, {"n", Outcome::kUD, 0.5}};
  EXPECT_EQ(roc_auc(b), 0.5);
  std::vector<ScoredInstance> c = {{"p", Outcome::kADplus, 0.9}, {"p", Outcome::kADplus, 0.3},
                                   {"n", Outcome::kADminus, 0.5}};
  EXPECT_EQ(roc_auc(c), 0.5);
  EXPECT_THROW(roc_auc(make({0.3, 0.4}, {0, 0})), DataError);
}

TEST(AveragePrecision, Examples) {
  EXPECT_NEAR(average_precision(make({0.9, 0.8, 0.7}, {0, 1, 0})), 5.0 / 6.0, 1e-15);
  EXPECT_EQ(average_precision(make({0.9, 0.8, 0.1}, {0, 0, 1})), 1.0);
  EXPECT_DOUBLE_EQ(average_precision(make({0.9, 0.8, 0.7, 0.1}, {1, 1, 1, 0})), 0.25);
  EXPECT_THROW(average_precision(make({0.9}, {1})), DataError);
}

TEST(Metrics, MatchBruteForceReferences) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 400; ++trial) {
    const int n = 1 + trial % 20;
    const bool coarse = trial % 2 == 0;
    const auto s = oracle::random_scored(rng, n, coarse);
    EXPECT_NEAR(aurc(s), oracle::aurc(s), 1e-12);
    if (!coarse) EXPECT_NEAR(aurc(s), oracle::aurc_by_thresholds(s), 1e-12);
    if (oracle::has_both_classes(s)) EXPECT_NEAR(roc_auc(s), oracle::roc_auc(s), 1e-12);
    bool any_pos = false;
    for (const auto& x : s) any_pos |= x.outcome == Outcome::kADplus;
    if (any_pos) EXPECT_NEAR(average_precision(s), oracle::average_precision(s), 1e-12);
  }
}

TEST(Metrics, RocMatchesPairCountingUpToFifty) {
  std::mt19937_64 rng(7);
  for (int n = 2; n <= 50; ++n) {
    for (int rep = 0; rep < 4; ++rep) {
      const auto s = oracle::random_scored(rng, n, rep % 2 == 0);
      if (!oracle::has_both_classes(s)) continue;
      EXPECT_NEAR(roc_auc(s), oracle::roc_auc(s), 1e-12);
    }
  }
}

TEST(Metrics, CoverageNonIncreasingInTheta) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = oracle::random_scored(rng, 1 + trial % 30, trial % 3 != 0);
    double prev = 2.0;
    for (double theta : oracle::candidates(s)) {
      const double c = coverage(s, {theta});
      EXPECT_LE(c, prev);
      prev = c;
    }
  }
}

TEST(Metrics, OracleOrderingMinimizesAurc) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int set = 0; set < 5; ++set) {
    auto s = oracle::random_scored(rng, 8 + set, true);
    std::vector<ScoredInstance> ideal = s;
    for (auto& x : ideal) x.confidence = x.outcome == Outcome::kADplus ? 1.0 : 0.0;
    const double best = aurc(ideal);
    for (int r = 0; r < 1000; ++r) {
      for (auto& x : s) x.confidence = u(rng);
      EXPECT_LE(best, aurc(s) + 1e-15);
    }
  }
}

TEST(Calibrate, AllCorrectTargetZero) {
  const Calibration c = calibrate(make({0.2, 0.7, 0.4}, {0, 0, 0}), 0.0);
  EXPECT_EQ(c.model.theta, 0.0);
  EXPECT_EQ(c.coverage, 1.0);
  EXPECT_TRUE(c.feasible);
}

TEST(Calibrate, WorkedExample) {
  const Calibration c = calibrate(make({0.9, 0.6, 0.3}, {0, 1, 0}), 0.0);
  EXPECT_EQ(c.model.theta, 0.9);
  EXPECT_DOUBLE_EQ(c.coverage, 1.0 / 3.0);
  EXPECT_EQ(c.risk, 0.0);
}

TEST(Calibrate, TargetOneAcceptsEverything) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    EXPECT_EQ(calibrate(oracle::random_scored(rng, 1 + i), 1.0).model.theta, 0.0);
  }
}

TEST(Calibrate, InfeasibleRejectsEverything) {
  const Calibration c = calibrate(make({0.9, 0.6}, {1, 1}), 0.0);
  EXPECT_FALSE(c.feasible);
  EXPECT_EQ(c.model.theta, reject_all_threshold());
  EXPECT_EQ(c.coverage, 0.0);
  EXPECT_THROW(calibrate(make({0.5}, {0}), 1.5), ConfigError);
}

TEST(Calibrate, MaximalCoverageExhaustive) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 500; ++trial) {
    const auto s = oracle::random_scored(rng, 1 + trial % 15, trial % 2 == 0);
    for (double target : {0.0, 0.05, 0.1, 0.2}) {
      const Calibration c = calibrate(s, target);
      EXPECT_LE(oracle::risk_at(s, c.model.theta), target);
      EXPECT_EQ(c.coverage, oracle::coverage_at(s, c.model.theta));
      for (double theta : oracle::candidates(s)) {
        if (oracle::coverage_at(s, theta) > c.coverage) {
          EXPECT_GT(oracle::risk_at(s, theta), target);
        }
      }
    }
  }
}

TEST(Report, SummaryFields) {
  std::vector<ScoredInstance> s = {{"a", Outcome::kADplus, 0.9}, {"b", Outcome::kUD, 0.2},
                                   {"c", Outcome::kADminus, 0.5}};
  const RiskReport r = make_report("x", s);
  EXPECT_EQ(r.n, 3u);
  EXPECT_EQ(r.rc_curve.size(), 3u);
  EXPECT_DOUBLE_EQ(r.full_coverage_risk, 2.0 / 3.0);
  EXPECT_EQ(r.outcome_counts.at("UD"), 1);
  const auto j = report_summary(r);
  for (const char* key : {"aurc", "roc_auc", "ap"}) EXPECT_TRUE(j.contains(key)) << key;
  const RiskReport none = make_report("y", make({0.3, 0.1}, {1, 1}));
  EXPECT_TRUE(std::isnan(none.roc_auc));
  EXPECT_TRUE(std::isnan(none.ap));
}

}  // namespace
}  // namespace rcqa
