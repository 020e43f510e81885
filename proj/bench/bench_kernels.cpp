// Serial reference path vs OpenMP path for the parallel kernels.
// Range argument 0 selects Exec::kSerial, 1 selects Exec::kParallel.

#include <vector>

#include <benchmark/benchmark.h>

#include "rcqa/backbone.hpp"
#include "rcqa/metrics.hpp"
#include "rcqa/probe_cnn.hpp"
#include "rcqa/probes.hpp"
#include "rcqa/qualify.hpp"
#include "rcqa/synthetic.hpp"

namespace rcqa {
namespace {

struct Fixture {
  std::vector<QaInstance> data;
  BackboneModel backbone;
  ProbeParams probes;
  std::vector<SignalRecord> signals;
  ProbeCnn scorer;

  Fixture() {
    SynthConfig sc;
    sc.n_train = 256;
    sc.n_validation = sc.n_calibration = sc.n_test = 0;
    data = generate_synthetic(sc, 1);
    BackboneConfig bc;
    bc.layers = 4;
    bc.seed = 2;
    backbone = BackboneModel::initialize(bc);
    ProbeTrainConfig pc;
    pc.iterations = 5;
    probes = train_probes(backbone, data, pc, Exec::kSerial).params;
    signals = export_signals(backbone, probes, data, Exec::kSerial);
    scorer = ProbeCnn::initialize(ProbeCnnConfig{});
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

Exec exec_of(const benchmark::State& state) {
  return state.range(0) == 0 ? Exec::kSerial : Exec::kParallel;
}

void BM_BackboneLoss(benchmark::State& state) {
  const Fixture& f = fixture();
  std::vector<const QaInstance*> batch;
  for (const auto& q : f.data) batch.push_back(&q);
  BackboneParams grad = f.backbone.params.zeros_like();
  for (auto _ : state) {
    benchmark::DoNotOptimize(backbone_loss(f.backbone, batch, &grad, exec_of(state)));
  }
  state.SetItemsProcessed(state.iterations() * batch.size());
}
BENCHMARK(BM_BackboneLoss)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_ExportSignals(benchmark::State& state) {
  const Fixture& f = fixture();
  for (auto _ : state) {
    benchmark::DoNotOptimize(export_signals(f.backbone, f.probes, f.data, exec_of(state)));
  }
  state.SetItemsProcessed(state.iterations() * f.data.size());
}
BENCHMARK(BM_ExportSignals)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_ScoreAll(benchmark::State& state) {
  const Fixture& f = fixture();
  const QualifyModel model = f.scorer;
  for (auto _ : state) {
    benchmark::DoNotOptimize(score_all(model, f.signals, f.data, exec_of(state)));
  }
  state.SetItemsProcessed(state.iterations() * f.signals.size());
}
BENCHMARK(BM_ScoreAll)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_PairwiseLoss(benchmark::State& state) {
  const Fixture& f = fixture();
  std::vector<Dense3> pos, neg;
  for (std::size_t i = 0; i < f.signals.size(); ++i) {
    (i % 2 ? neg : pos).push_back(stack_signals(f.signals[i].signals));
  }
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < 128; ++i) {
    pairs.emplace_back(i % static_cast<int>(pos.size()), (7 * i) % static_cast<int>(neg.size()));
  }
  ProbeCnnParams grad = f.scorer.params().zeros_like();
  for (auto _ : state) {
    benchmark::DoNotOptimize(pairwise_loss(f.scorer, pos, neg, pairs, &grad, exec_of(state)));
  }
  state.SetItemsProcessed(state.iterations() * pairs.size());
}
BENCHMARK(BM_PairwiseLoss)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace rcqa

BENCHMARK_MAIN();
