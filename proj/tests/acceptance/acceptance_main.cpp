// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.
//
//   rcqa_acceptance [--config path] [--work dir] [--keep] [--skip-pipeline]
//
// --skip-pipeline runs only the criteria that need no pipeline run and
// reports the rest as FAIL (not run).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "rcqa/backbone.hpp"
#include "rcqa/checkpoint.hpp"
#include "rcqa/metrics.hpp"
#include "rcqa/numerics.hpp"
#include "rcqa/pipeline.hpp"
#include "rcqa/probe_cnn.hpp"
#include "rcqa/probes.hpp"
#include "rcqa/qualify.hpp"

namespace rcqa {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// Draws scored sets until both ADplus and an error outcome are present.
std::vector<ScoredInstance> draw_two_class(std::mt19937_64& rng, int n, bool coarse) {
  for (;;) {
    auto s = oracle::random_scored(rng, n, coarse);
    if (oracle::has_both_classes(s)) return s;
  }
}

// ---------------------------------------------------------------------------
// 1. Metric oracle equivalence.

Verdict metric_oracles() {
  const auto start = Clock::now();
  std::mt19937_64 rng(1001);
  std::uniform_int_distribution<int> size(2, 20);
  double worst = 0.0;
  int sets = 0;
  for (; sets < 500; ++sets) {
    // Half the sets use a coarse grid so ties occur; the other half have
    // distinct confidences, where the threshold-enumeration AURC applies.
    const bool coarse = sets % 2 == 0;
    const auto s = draw_two_class(rng, size(rng), coarse);
    worst = std::max(worst, std::abs(aurc(s) - oracle::aurc(s)));
    if (!coarse) worst = std::max(worst, std::abs(aurc(s) - oracle::aurc_by_thresholds(s)));
    worst = std::max(worst, std::abs(roc_auc(s) - oracle::roc_auc(s)));
    worst = std::max(worst, std::abs(average_precision(s) - oracle::average_precision(s)));
  }
  const double elapsed = seconds_since(start);
  return {worst <= 1e-12 && elapsed < 10.0,
          std::to_string(sets) + " sets, max |delta| " + fmt("%.3g", worst) + ", " +
              fmt("%.2f s", elapsed)};
}

// ---------------------------------------------------------------------------
// 2. Gradient correctness.

ProbeSignals random_signals(std::mt19937_64& rng, int layers, int width, double sharpness) {
  std::normal_distribution<double> g(0.0, sharpness);
  ProbeSignals s;
  for (int t = 0; t < layers; ++t) {
    std::vector<double> a(width), b(width);
    for (auto& x : a) x = g(rng);
    for (auto& x : b) x = g(rng);
    s.layers.push_back({softmax(a), softmax(b)});
  }
  return s;
}

Verdict gradients() {
  const auto start = Clock::now();
  std::mt19937_64 rng(2002);
  double worst_probe = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int width = 4 + trial % 5, positions = 3 + trial % 7;
    Dense2 act(positions + 1, width), ws(width, 1), we(width, 1), gs(width, 1), ge(width, 1);
    fill_normal(act, 1.0, rng);
    fill_normal(ws, 1.0, rng);
    fill_normal(we, 1.0, rng);
    GradTape tape({{"s", &ws}, {"e", &we}}, {{"s", &gs}, {"e", &ge}});
    const int ts = trial % (positions + 1), te = (trial * 3) % (positions + 1);
    auto loss = [&] { return probe_layer_loss(act, ws, we, ts, te, &gs, &ge); };
    worst_probe = std::max(worst_probe, check_gradients(loss, tape, 1e-5).max_relative_error);
  }

  // Full-size scorer. A step of 1e-5 moves any pre-activation by about 1e-5
  // since the inputs lie in [0, 1], so draws with a ReLU or top-k boundary
  // within 1e-4 are skipped to keep finite differences on one smooth piece.
  constexpr int kWidth = 6;  // passage length 5 plus NULL
  double worst_cnn = 0.0;
  int checked = 0, draws = 0;
  for (; checked < 20 && draws < 2000; ++draws) {
    ProbeCnnConfig c;
    c.seed = 500 + draws;
    ProbeCnn m = ProbeCnn::initialize(c);
    fill_normal(m.mutable_params().fc1_bias, 0.5, rng);
    fill_normal(m.mutable_params().conv1_bias, 0.2, rng);
    std::vector<Dense3> pos, neg;
    for (int i = 0; i < 3; ++i) pos.push_back(stack_signals(random_signals(rng, 4, kWidth, 2.0)));
    for (int i = 0; i < 2; ++i) neg.push_back(stack_signals(random_signals(rng, 4, kWidth, 2.0)));
    double margin = INFINITY;
    for (const auto* set : {&pos, &neg}) {
      for (const auto& x : *set) margin = std::min(margin, m.evaluate(x).kink_margin());
    }
    if (margin < 1e-4) continue;
    const std::vector<std::pair<int, int>> pairs = {{0, 0}, {1, 1}, {2, 0}, {0, 1}};
    ProbeCnnParams grad = m.params().zeros_like();
    GradTape tape(m.mutable_params().list(), grad.list());
    auto loss = [&] { return pairwise_loss(m, pos, neg, pairs, &grad, Exec::kSerial); };
    auto value = [&] { return pairwise_loss(m, pos, neg, pairs, nullptr, Exec::kSerial); };
    worst_cnn =
        std::max(worst_cnn, check_gradients(loss, tape, 1e-5, value).max_relative_error);
    ++checked;
  }
  const double elapsed = seconds_since(start);
  return {worst_probe <= 1e-4 && worst_cnn <= 1e-4 && checked == 20 && elapsed < 60.0,
          "probe max rel " + fmt("%.3g", worst_probe) + ", scorer max rel " +
              fmt("%.3g", worst_cnn) + " over " + std::to_string(checked) + " draws, " +
              fmt("%.1f s", elapsed)};
}

// ---------------------------------------------------------------------------
// 4. Decode equivalence.

Verdict decode_equivalence() {
  std::mt19937_64 rng(4004);
  std::uniform_int_distribution<int> length(1, 8);
  std::normal_distribution<double> g(0.0, 2.0);
  std::uniform_int_distribution<int> grid(0, 3);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int lp = length(rng);
    std::vector<double> a(lp + 1), b(lp + 1);
    // Every fourth pair is built from a coarse grid so that exact ties occur.
    const bool ties = trial % 4 == 0;
    for (auto& x : a) x = ties ? grid(rng) : g(rng);
    for (auto& x : b) x = ties ? grid(rng) : g(rng);
    const auto s = softmax(a), e = softmax(b);
    const int cap = trial % 2 == 0 ? lp : 1 + trial % lp;
    const Prediction p = decode(s, e, cap);
    const oracle::DecodeResult want = oracle::decode(s, e, cap);
    const bool same = p.is_null() == want.is_null &&
                      (want.is_null || (p.span().start == want.start && p.span().end == want.end)) &&
                      p.score() == want.score;
    mismatches += !same;
  }
  return {mismatches == 0, "1000 pairs, l_p <= 8, " + std::to_string(mismatches) + " mismatches"};
}

// ---------------------------------------------------------------------------
// 5. Oracle scorer properties.

std::string oracle_violation(const std::vector<ScoredInstance>& s) {
  int correct = 0;
  for (const auto& x : s) correct += x.outcome == Outcome::kADplus;
  const int n = static_cast<int>(s.size());
  const RiskReport r = make_report("oracle", s);
  if (correct > 0 && correct < n && r.roc_auc != 1.0) return "roc " + fmt("%.17g", r.roc_auc);
  if (correct > 0 && r.ap != 1.0) return "ap " + fmt("%.17g", r.ap);
  for (const auto& pt : r.rc_curve) {
    if (std::lround(pt.coverage * n) <= correct && pt.risk != 0.0) return "nonzero risk below |AD+|/n";
  }
  if (std::abs(r.aurc - oracle::oracle_aurc(n, correct)) > 1e-12) {
    return "aurc " + fmt("%.17g", r.aurc);
  }
  return "";
}

Verdict oracle_properties(const std::vector<std::vector<ScoredInstance>>& pipeline_sets) {
  std::mt19937_64 rng(5005);
  std::uniform_int_distribution<int> size(2, 200);
  int sets = 0;
  for (; sets < 300; ++sets) {
    auto s = draw_two_class(rng, size(rng), true);
    for (auto& x : s) x.confidence = oracle_score(x.outcome);
    const std::string v = oracle_violation(s);
    if (!v.empty()) return {false, "random set " + std::to_string(sets) + ": " + v};
  }
  for (std::size_t i = 0; i < pipeline_sets.size(); ++i) {
    const std::string v = oracle_violation(pipeline_sets[i]);
    if (!v.empty()) return {false, "pipeline seed " + std::to_string(i + 1) + ": " + v};
  }
  return {true, std::to_string(sets) + " random sets and " +
                    std::to_string(pipeline_sets.size()) + " pipeline test sets"};
}

// ---------------------------------------------------------------------------
// 8. Calibration contract.

Verdict calibration_contract() {
  std::mt19937_64 rng(8008);
  std::uniform_int_distribution<int> size(1, 15);
  int checks = 0;
  for (int set = 0; set < 500; ++set) {
    const auto s = oracle::random_scored(rng, size(rng), set % 2 == 0);
    const auto cands = oracle::candidates(s);
    for (double target : {0.0, 0.05, 0.1, 0.2}) {
      const Calibration c = calibrate(s, target);
      ++checks;
      if (oracle::risk_at(s, c.model.theta) > target) {
        return {false, "risk above target at set " + std::to_string(set)};
      }
      if (selective_risk(s, c.model) != c.risk || coverage(s, c.model) != c.coverage) {
        return {false, "reported risk/coverage disagree at set " + std::to_string(set)};
      }
      const double cov = oracle::coverage_at(s, c.model.theta);
      for (double theta : cands) {
        if (oracle::coverage_at(s, theta) > cov && oracle::risk_at(s, theta) <= target) {
          return {false, "larger feasible coverage missed at set " + std::to_string(set)};
        }
      }
      const bool any_positive = std::any_of(cands.begin(), cands.end(), [&](double t) {
        return oracle::coverage_at(s, t) > 0 && oracle::risk_at(s, t) <= target;
      });
      if (c.feasible != any_positive) {
        return {false, "feasibility flag wrong at set " + std::to_string(set)};
      }
    }
  }
  return {true, std::to_string(checks) + " (set, target) checks, n <= 15"};
}

// ---------------------------------------------------------------------------
// 10. Coverage monotone in theta.

Verdict coverage_monotone() {
  std::mt19937_64 rng(1010);
  std::uniform_int_distribution<int> size(1, 60);
  for (int set = 0; set < 200; ++set) {
    const auto s = oracle::random_scored(rng, size(rng), set % 2 == 0);
    double previous = INFINITY;
    for (double theta : oracle::candidates(s)) {
      const double c = coverage(s, DecisionModel{theta});
      if (c > previous) return {false, "coverage rose at set " + std::to_string(set)};
      previous = c;
    }
  }
  return {true, "200 sets"};
}

// ---------------------------------------------------------------------------
// Pipeline-based criteria.

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = read_file(e.path());
  }
  return out;
}

struct SeedRun {
  std::uint64_t seed = 0;
  double seconds = 0.0;
  std::map<std::string, RiskReport> reports;
  std::vector<ScoredInstance> oracle_test;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

SeedRun run_seed(const PipelineConfig& base, std::uint64_t seed, const fs::path& out) {
  PipelineConfig c = base;
  c.seed = seed;
  c.out_dir = out;
  c.quiet = true;
  fs::remove_all(out);
  SeedRun r;
  r.seed = seed;
  const auto start = Clock::now();
  for (const auto& rep : run_pipeline(c)) r.reports[rep.scorer] = rep;
  r.seconds = seconds_since(start);
  r.oracle_test = score_split(c, "oracle", Split::kTest);
  return r;
}

Verdict stop_gradient(const PipelineConfig& base, const fs::path& out) {
  PipelineConfig c = base;
  c.out_dir = out;
  const Layout l{out};
  const std::string on_disk = read_file(l.backbone());
  const BackboneModel model = BackboneModel::from_checkpoint(parse_checkpoint(on_disk));
  const std::string before = serialize_checkpoint(model.to_checkpoint());
  const auto data = load_jsonl(l.dataset());
  train_probes(model, select_split(data, Split::kTrain), c.probes);
  const std::string after = serialize_checkpoint(model.to_checkpoint());
  const auto log = nlohmann::json::parse(read_file(l.train_log()));
  const bool logged_equal =
      log["backbone_checksum_before_probes"] == log["backbone_checksum_after_probes"];
  return {before == on_disk && after == before && logged_equal,
          std::to_string(after.size()) + " checkpoint bytes compared"};
}

Verdict determinism(const PipelineConfig& base, const fs::path& first, const fs::path& work) {
  // Rerun into the same output directory so that the config echo matches.
  const fs::path kept = work / "determinism-first";
  fs::remove_all(kept);
  fs::rename(first, kept);
  run_seed(base, base.seed, first);
  const auto a = tree(kept);
  const auto b = tree(first);
  fs::remove_all(kept);
  if (a.size() != b.size()) return {false, "file sets differ"};
  std::size_t bytes = 0;
  for (const auto& [path, content] : a) {
    const auto it = b.find(path);
    if (it == b.end() || it->second != content) return {false, "differs: " + path};
    bytes += content.size();
  }
  return {true, std::to_string(a.size()) + " files, " + std::to_string(bytes) + " bytes identical"};
}

int run(int argc, char** argv) {
  fs::path config_path = RCQA_REFERENCE_CONFIG;
  fs::path work = fs::temp_directory_path() / "rcqa_acceptance";
  bool keep = false;
  bool skip_pipeline = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) config_path = argv[++i];
    else if (a == "--work" && i + 1 < argc) work = argv[++i];
    else if (a == "--keep") keep = true;
    else if (a == "--skip-pipeline") skip_pipeline = true;
    else {
      std::fprintf(stderr,
                   "usage: %s [--config path] [--work dir] [--keep] [--skip-pipeline]\n",
                   argv[0]);
      return 1;
    }
  }
  const PipelineConfig base = load_pipeline_config(config_path);

  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Verdict()>& fn) {
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::printf("%s criterion %d (%s): %s\n", v.pass ? "PASS" : "FAIL", id, name, v.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "metric oracles", metric_oracles);
  report(2, "gradients", gradients);
  report(4, "decode", decode_equivalence);
  report(8, "calibration", calibration_contract);
  report(10, "coverage monotone", coverage_monotone);

  // Five seeds on the reference configuration, starting at its own seed.
  std::vector<SeedRun> runs;
  std::string pipeline_error = "not run";
  try {
    for (std::uint64_t k = 0; k < 5 && !skip_pipeline; ++k) {
      const std::uint64_t seed = base.seed + k;
      runs.push_back(run_seed(base, seed, work / ("seed-" + std::to_string(seed))));
      const auto& r = runs.back();
      std::printf("  seed %llu: %.0f s, AURC x100 proba %.2f probe-cnn %.2f last-layer %.2f, "
                  "ROC-AUC probe-cnn %.3f\n",
                  static_cast<unsigned long long>(seed), r.seconds,
                  100 * r.reports.at("proba").aurc, 100 * r.reports.at("probe-cnn").aurc,
                  100 * r.reports.at("probe-cnn-last").aurc, r.reports.at("probe-cnn").roc_auc);
      std::fflush(stdout);
    }
  } catch (const std::exception& e) {
    pipeline_error = std::string("exception: ") + e.what();
  }
  const fs::path first = work / ("seed-" + std::to_string(base.seed));

  report(3, "stop-gradient", [&] {
    if (runs.empty()) return Verdict{false, pipeline_error};
    return stop_gradient(base, first);
  });
  report(5, "oracle properties", [&] {
    if (runs.empty()) return Verdict{false, pipeline_error};
    std::vector<std::vector<ScoredInstance>> sets;
    for (const auto& r : runs) sets.push_back(r.oracle_test);
    return oracle_properties(sets);
  });
  report(6, "direction of improvement", [&] {
    if (runs.size() != 5) return Verdict{false, pipeline_error};
    std::vector<double> cnn, proba, roc;
    int wins = 0;
    double slowest = 0.0;
    for (const auto& r : runs) {
      cnn.push_back(r.reports.at("probe-cnn").aurc);
      proba.push_back(r.reports.at("proba").aurc);
      roc.push_back(r.reports.at("probe-cnn").roc_auc);
      wins += cnn.back() < proba.back();
      slowest = std::max(slowest, r.seconds);
    }
    const bool pass = median(cnn) < median(proba) && wins >= 4 && median(roc) > 0.5 &&
                      slowest < 600.0;
    return Verdict{pass, "median AURC x100 probe-cnn " + fmt("%.2f", 100 * median(cnn)) +
                             " vs proba " + fmt("%.2f", 100 * median(proba)) + ", wins " +
                             std::to_string(wins) + "/5, median ROC-AUC " +
                             fmt("%.3f", median(roc)) + ", slowest seed " +
                             fmt("%.0f s", slowest)};
  });
  report(7, "layer ablation", [&] {
    if (runs.size() != 5) return Verdict{false, pipeline_error};
    int ok = 0;
    for (const auto& r : runs) {
      ok += r.reports.at("probe-cnn").aurc <= r.reports.at("probe-cnn-last").aurc;
    }
    return Verdict{ok >= 3, "all layers <= last layer in " + std::to_string(ok) + "/5 seeds"};
  });
  report(9, "determinism", [&] {
    if (runs.empty()) return Verdict{false, pipeline_error};
    PipelineConfig c = base;
    return determinism(c, first, work);
  });

  if (!keep) fs::remove_all(work);
  std::printf("%s: %d failing criteria\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}

}  // namespace
}  // namespace rcqa

int main(int argc, char** argv) {
  try {
    return rcqa::run(argc, argv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "acceptance: %s\n", e.what());
    return 2;
  }
}
