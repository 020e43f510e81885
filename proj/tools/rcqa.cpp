// rcqa: command line driver for the risk-controlled QA pipeline.
//
//   rcqa gen-data      --config cfg.json [--seed N] [--out DIR]
//   rcqa train         --config cfg.json
//   rcqa extract       --config cfg.json
//   rcqa train-qualify --config cfg.json --scorer probe-cnn [--layers last]
//   rcqa calibrate     --config cfg.json --scorer NAME [--target-risk R]
//   rcqa evaluate      --config cfg.json
//   rcqa report        --config cfg.json
//   rcqa run           --config cfg.json
//
// Flags override the config file; RCQA_<FLAG> environment variables
// (RCQA_CONFIG, RCQA_SEED, RCQA_OUT, ...) apply when a flag is absent.
//
// Exit codes: 0 success, 1 usage error, 2 data or validation error,
// 3 infeasible calibration.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "rcqa/error.hpp"
#include "rcqa/parallel.hpp"
#include "rcqa/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitInfeasible = 3;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string scorer;
  std::string layers = "all";
  std::optional<double> target_risk;
  std::optional<int> threads;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "Pipeline config (JSON)")->envname("RCQA_CONFIG");
  cmd->add_option("--seed", f.seed, "Master seed")->envname("RCQA_SEED");
  cmd->add_option("--out", f.out, "Output directory")->envname("RCQA_OUT");
  cmd->add_option("--threads", f.threads, "OpenMP threads")->envname("RCQA_THREADS");
  cmd->add_flag("--quiet", f.quiet, "Suppress progress output");
}

void add_scorer(CLI::App* cmd, Flags& f, bool required) {
  auto* opt = cmd->add_option("--scorer", f.scorer, "proba | aes | ens | probe-cnn | "
                                                    "probe-cnn-last | oracle")
                  ->envname("RCQA_SCORER");
  if (required) opt->required();
}

rcqa::PipelineConfig resolve(const Flags& f) {
  rcqa::PipelineConfig config;
  if (!f.config.empty()) {
    config = rcqa::load_pipeline_config(f.config);
  } else if (f.seed) {
    config = rcqa::pipeline_config_from_json(nlohmann::json{{"seed", *f.seed}});
  } else {
    throw rcqa::ConfigError("--config is required (or --seed for built-in defaults)");
  }
  if (f.seed) config.seed = *f.seed;
  if (!f.out.empty()) config.out_dir = f.out;
  if (f.target_risk) config.target_risk = *f.target_risk;
  if (f.threads) config.threads = *f.threads;
  if (f.quiet) config.quiet = true;
  rcqa::set_threads(config.threads);
  return config;
}

void print_histograms(const std::map<std::string, rcqa::OutcomeHistogram>& hists) {
  for (const auto& [split, hist] : hists) {
    std::printf("%-12s", split.c_str());
    for (const auto& [outcome, count] : hist) {
      std::printf(" %s=%d", outcome.c_str(), count);
    }
    std::printf("\n");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Risk-controlled span QA: reader, probes, qualify models, metrics"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("gen-data", "Write the synthetic dataset and vocabulary");
  auto* train = app.add_subcommand("train", "Train the reader, probes and ensemble members");
  auto* extract = app.add_subcommand("extract", "Dump probe signals for held-out splits");
  auto* tq = app.add_subcommand("train-qualify", "Fit or emit a qualify model");
  auto* cal = app.add_subcommand("calibrate", "Pick the decision threshold");
  auto* eval = app.add_subcommand("evaluate", "Score the test split and write reports");
  auto* rep = app.add_subcommand("report", "Render RC-curve and heatmap SVGs");
  auto* run = app.add_subcommand("run", "Run every stage in order");
  for (auto* cmd : {gen, train, extract, tq, cal, eval, rep, run}) add_common(cmd, f);
  add_scorer(tq, f, true);
  tq->add_option("--layers", f.layers, "Probe layers fed to probe-cnn")
      ->check(CLI::IsMember({"all", "last"}))
      ->envname("RCQA_LAYERS");
  add_scorer(cal, f, true);
  for (auto* cmd : {cal, run}) {
    cmd->add_option("--target-risk", f.target_risk, "Target selective risk in [0,1]")
        ->envname("RCQA_TARGET_RISK");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const rcqa::PipelineConfig config = resolve(f);
    if (gen->parsed()) {
      rcqa::cmd_gen_data(config);
    } else if (train->parsed()) {
      rcqa::cmd_train(config);
    } else if (extract->parsed()) {
      print_histograms(rcqa::cmd_extract(config));
    } else if (tq->parsed()) {
      const std::string name =
          rcqa::cmd_train_qualify(config, f.scorer, rcqa::parse_layer_mask(f.layers));
      std::printf("%s\n", rcqa::Layout{config.out_dir}.qualify(name).string().c_str());
    } else if (cal->parsed()) {
      const auto rec = rcqa::cmd_calibrate(config, f.scorer, config.target_risk);
      std::printf("theta=%.17g coverage=%.6f risk=%.6f feasible=%s\n",
                  rec.calibration.model.theta, rec.calibration.coverage,
                  rec.calibration.risk, rec.calibration.feasible ? "true" : "false");
      if (!rec.calibration.feasible) {
        std::fprintf(stderr, "warning: target risk %g is not attainable at any positive "
                             "coverage; rejecting everything\n", config.target_risk);
        return kExitInfeasible;
      }
    } else if (eval->parsed()) {
      rcqa::cmd_evaluate(config);
    } else if (rep->parsed()) {
      rcqa::cmd_report(config);
    } else if (run->parsed()) {
      rcqa::run_pipeline(config);
    }
  } catch (const rcqa::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return kExitOk;
}
