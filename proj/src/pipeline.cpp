#include "rcqa/pipeline.hpp"

#include <cstdio>
#include <iostream>
#include <set>

#include "rcqa/checkpoint.hpp"
#include "rcqa/error.hpp"
#include "rcqa/qualify.hpp"
#include "rcqa/report.hpp"

namespace rcqa {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

namespace {

const std::set<std::string> kScorers = {"proba", "aes", "ens", "probe-cnn",
                                        "probe-cnn-last", "oracle"};

}  // namespace

void PipelineConfig::validate() const {
  if (dataset_path.empty()) synthetic.validate();
  backbone.validate();
  probe_cnn.validate();
  if (ensemble_size < 2) throw ConfigError("ensemble_size must be >= 2");
  if (backbone.epochs < 2 &&
      std::find(scorers.begin(), scorers.end(), "aes") != scorers.end()) {
    throw ConfigError("aes needs >= 2 epochs of snapshots");
  }
  for (const auto& s : scorers) {
    if (!kScorers.count(s)) throw ConfigError("unknown scorer '" + s + "'");
  }
  if (!(target_risk >= 0.0 && target_risk <= 1.0)) {
    throw ConfigError("target_risk must lie in [0,1]");
  }
  if (scope != "direct" && scope != "all") {
    throw ConfigError("scope must be 'direct' or 'all'");
  }
}

void to_json(json& j, const PipelineConfig& c) {
  j = json{{"dataset_path", c.dataset_path.string()},
           {"vocab_path", c.vocab_path.string()},
           {"synthetic", c.synthetic},
           {"seed", c.seed},
           {"backbone", c.backbone},
           {"probes", c.probes},
           {"probe_cnn", c.probe_cnn},
           {"ensemble_size", c.ensemble_size},
           {"scorers", c.scorers},
           {"target_risk", c.target_risk},
           {"scope", c.scope},
           {"out_dir", c.out_dir.string()},
           {"heatmaps_per_outcome", c.heatmaps_per_outcome}};
}

PipelineConfig pipeline_config_from_json(const json& j) {
  if (!j.is_object() || !j.contains("seed") || !j["seed"].is_number_integer() ||
      (!j["seed"].is_number_unsigned() && j["seed"].get<std::int64_t>() < 0)) {
    throw ConfigError("config must set a non-negative integer \"seed\"");
  }
  PipelineConfig c;
  try {
    c.seed = j["seed"].get<std::uint64_t>();
    c.dataset_path = j.value("dataset_path", std::string());
    c.vocab_path = j.value("vocab_path", std::string());
    if (j.contains("synthetic")) c.synthetic = j["synthetic"].get<SynthConfig>();
    if (j.contains("backbone")) c.backbone = j["backbone"].get<BackboneConfig>();
    if (j.contains("probes")) c.probes = j["probes"].get<ProbeTrainConfig>();
    if (j.contains("probe_cnn")) c.probe_cnn = j["probe_cnn"].get<ProbeCnnConfig>();
    c.ensemble_size = j.value("ensemble_size", c.ensemble_size);
    c.scorers = j.value("scorers", c.scorers);
    c.target_risk = j.value("target_risk", c.target_risk);
    c.scope = j.value("scope", c.scope);
    c.out_dir = j.value("out_dir", c.out_dir.string());
    c.heatmaps_per_outcome = j.value("heatmaps_per_outcome", c.heatmaps_per_outcome);
    c.threads = j.value("threads", c.threads);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const DataError&) {
    throw ConfigError("cannot read config " + path.string());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return pipeline_config_from_json(j);
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::uint64_t z = master + 0x9e3779b97f4a7c15ull * (h | 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

fs::path Layout::snapshot(int epoch) const {
  char name[32];
  std::snprintf(name, sizeof(name), "epoch-%02d.ckpt", epoch);
  return root / "models" / "snapshots" / name;
}

fs::path Layout::member(int index) const {
  return root / "models" / "ensemble" / ("member-" + std::to_string(index) + ".ckpt");
}

fs::path Layout::signals(Split split) const {
  return root / "signals" / (std::string(to_string(split)) + ".jsonl");
}

// ---------------------------------------------------------------------------
// Helpers

namespace {

void note(const PipelineConfig& config, const std::string& msg) {
  if (!config.quiet) std::clog << "[rcqa] " << msg << '\n';
}

BackboneConfig backbone_config(const PipelineConfig& config, std::string_view tag) {
  BackboneConfig c = config.backbone;
  if (config.dataset_path.empty()) c.vocab_size = config.synthetic.vocab_size;
  c.seed = derive_seed(config.seed, tag);
  return c;
}

std::vector<QaInstance> load_dataset(const PipelineConfig& config) {
  const Layout layout{config.out_dir};
  if (config.dataset_path.empty()) {
    if (!fs::exists(layout.dataset())) {
      throw DataError("no dataset at " + layout.dataset().string() +
                      "; run gen-data first or set dataset_path");
    }
    return load_jsonl(layout.dataset());
  }
  if (!config.vocab_path.empty()) {
    const Vocabulary vocab = Vocabulary::load(config.vocab_path);
    return load_jsonl(config.dataset_path, &vocab);
  }
  return load_jsonl(config.dataset_path);
}

std::vector<QaInstance> load_split(const PipelineConfig& config, Split split) {
  auto out = select_split(load_dataset(config), split);
  if (out.empty()) {
    throw DataError("dataset has no '" + std::string(to_string(split)) + "' split");
  }
  return out;
}

std::string relative_to(const fs::path& target, const fs::path& base) {
  return fs::relative(target, base).generic_string();
}

void write_json(const fs::path& path, const json& j) {
  write_file(path, j.dump(2) + "\n");
}

bool in_scope(const PipelineConfig& config, Outcome outcome) {
  return config.scope == "all" || is_direct_answer(outcome);
}

}  // namespace

// ---------------------------------------------------------------------------
// Subcommands

void cmd_gen_data(const PipelineConfig& config) {
  config.synthetic.validate();
  const Layout layout{config.out_dir};
  const auto instances =
      generate_synthetic(config.synthetic, derive_seed(config.seed, "data"));
  fs::create_directories(layout.dataset().parent_path());
  save_jsonl(layout.dataset(), instances);
  synthetic_vocabulary(config.synthetic).save(layout.vocab());
  note(config, "wrote " + std::to_string(instances.size()) + " instances to " +
                   layout.dataset().string());
}

void cmd_train(const PipelineConfig& config) {
  config.validate();
  const Layout layout{config.out_dir};
  const auto train = load_split(config, Split::kTrain);

  note(config, "training backbone on " + std::to_string(train.size()) + " instances");
  BackboneTraining main = train_backbone(backbone_config(config, "backbone"), train);
  save_checkpoint(layout.backbone(), main.model.to_checkpoint());
  for (std::size_t e = 0; e < main.snapshots.size(); ++e) {
    save_checkpoint(layout.snapshot(static_cast<int>(e) + 1),
                    main.snapshots[e].to_checkpoint());
  }

  note(config, "training probes");
  const std::uint64_t before = checksum(main.model);
  ProbeTraining probes = train_probes(main.model, train, config.probes);
  const std::uint64_t after = checksum(main.model);
  if (before != after) throw Error("probe training modified the backbone");
  save_checkpoint(layout.probes(), probes.params.to_checkpoint());

  json members = json::array();
  for (int i = 1; i < config.ensemble_size; ++i) {
    note(config, "training ensemble member " + std::to_string(i));
    BackboneTraining member = train_backbone(
        backbone_config(config, "ensemble-" + std::to_string(i)), train);
    save_checkpoint(layout.member(i), member.model.to_checkpoint());
    members.push_back(member.epoch_loss);
  }

  json probe_losses = json::array();
  for (const auto& h : probes.loss_history) {
    probe_losses.push_back({{"initial", h.front()}, {"final", h.back()}});
  }
  write_json(layout.train_log(),
             {{"backbone_epoch_loss", main.epoch_loss},
              {"probe_loss", probe_losses},
              {"ensemble_epoch_loss", members},
              {"backbone_checksum_before_probes", before},
              {"backbone_checksum_after_probes", after}});
}

std::map<std::string, OutcomeHistogram> cmd_extract(const PipelineConfig& config) {
  config.validate();
  const Layout layout{config.out_dir};
  const BackboneModel backbone =
      BackboneModel::from_checkpoint(load_checkpoint(layout.backbone()));
  const ProbeParams probes = ProbeParams::from_checkpoint(load_checkpoint(layout.probes()));
  const auto dataset = load_dataset(config);

  std::map<std::string, OutcomeHistogram> histograms;
  for (Split split : {Split::kValidation, Split::kCalibration, Split::kTest}) {
    const auto instances = select_split(dataset, split);
    if (instances.empty()) {
      throw DataError("dataset has no '" + std::string(to_string(split)) + "' split");
    }
    const auto records = export_signals(backbone, probes, instances);
    save_signals(layout.signals(split), records);
    OutcomeHistogram hist{{"AD+", 0}, {"AD-", 0}, {"AN", 0}, {"UN", 0}, {"UD", 0}};
    for (const auto& r : records) ++hist[std::string(to_string(r.outcome))];
    std::string line = std::string(to_string(split)) + ":";
    for (const auto& [k, v] : hist) line += " " + k + "=" + std::to_string(v);
    note(config, line);
    histograms[std::string(to_string(split))] = hist;
  }
  return histograms;
}

std::string cmd_train_qualify(const PipelineConfig& config, const std::string& scorer,
                              LayerMask layers) {
  config.validate();
  const Layout layout{config.out_dir};
  const int cap = config.backbone.span_cap;
  const fs::path qdir = layout.qualify("x").parent_path();
  fs::create_directories(qdir);

  if (scorer == "proba") {
    save_checkpoint(layout.qualify(scorer), to_checkpoint(ProbaScorer{cap}));
    return scorer;
  }
  if (scorer == "oracle") {
    save_checkpoint(layout.qualify(scorer), to_checkpoint(OracleScorer{}));
    return scorer;
  }
  if (scorer == "aes") {
    AesScorer aes;
    aes.span_cap = cap;
    for (int e = 1; e <= config.backbone.epochs; ++e) {
      if (!fs::exists(layout.snapshot(e))) {
        throw DataError("missing snapshot " + layout.snapshot(e).string() +
                        "; run train first");
      }
      aes.sources.push_back(relative_to(layout.snapshot(e), qdir));
    }
    save_checkpoint(layout.qualify(scorer), to_checkpoint(aes));
    return scorer;
  }
  if (scorer == "ens") {
    EnsScorer ens;
    ens.span_cap = cap;
    ens.sources.push_back(relative_to(layout.backbone(), qdir));
    for (int i = 1; i < config.ensemble_size; ++i) {
      if (!fs::exists(layout.member(i))) {
        throw DataError("missing ensemble member " + layout.member(i).string() +
                        "; run train first");
      }
      ens.sources.push_back(relative_to(layout.member(i), qdir));
    }
    save_checkpoint(layout.qualify(scorer), to_checkpoint(ens));
    return scorer;
  }
  if (scorer == "probe-cnn" || scorer == "probe-cnn-last") {
    ProbeCnnConfig cnn = config.probe_cnn;
    cnn.layers = scorer == "probe-cnn-last" ? LayerMask::kLast : layers;
    cnn.seed = derive_seed(config.seed, "probe-cnn");
    const std::string name = cnn.layers == LayerMask::kLast ? "probe-cnn-last" : "probe-cnn";
    const auto validation = load_signals(layout.signals(Split::kValidation));
    note(config, "training " + name + " on " + std::to_string(validation.size()) +
                     " validation records");
    ProbeCnnTraining trained = train_probe_cnn(cnn, validation);
    for (std::size_t e = 0; e < trained.train_loss.size(); ++e) {
      char line[128];
      std::snprintf(line, sizeof(line), "%s epoch %2zu pairwise loss %.6f held-out %.6f",
                    name.c_str(), e + 1, trained.train_loss[e], trained.holdout_loss[e]);
      note(config, line);
    }
    save_checkpoint(layout.qualify(name), trained.model.to_checkpoint());
    write_json(qdir / (name + ".log.json"),
               {{"train_loss", trained.train_loss},
                {"holdout_loss", trained.holdout_loss},
                {"best_epoch", trained.best_epoch}});
    return name;
  }
  throw ConfigError("unknown scorer '" + scorer + "'");
}

std::vector<ScoredInstance> score_split(const PipelineConfig& config,
                                        const std::string& scorer, Split split) {
  const Layout layout{config.out_dir};
  if (!fs::exists(layout.qualify(scorer))) {
    throw DataError("no qualify checkpoint for '" + scorer + "'; run train-qualify");
  }
  const QualifyModel model = load_qualify(layout.qualify(scorer));
  const auto records = load_signals(layout.signals(split));
  const auto all = select_split(load_dataset(config), split);

  // Out-of-scope records are never scored (the oracle rejects AN/UN).
  std::vector<SignalRecord> kept_records;
  std::vector<QaInstance> kept_instances;
  if (records.size() != all.size()) {
    throw DataError("signal dump and dataset disagree on the " +
                    std::string(to_string(split)) + " split size");
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!in_scope(config, records[i].outcome)) continue;
    kept_records.push_back(records[i]);
    kept_instances.push_back(all[i]);
  }
  std::vector<double> conf;
  if (std::holds_alternative<OracleScorer>(model)) {
    // Out-of-direct-scope outcomes get the oracle's reject score.
    for (const auto& r : kept_records) {
      conf.push_back(is_direct_answer(r.outcome) ? oracle_score(r.outcome) : 0.0);
    }
  } else {
    conf = score_all(model, kept_records, kept_instances);
  }
  std::vector<ScoredInstance> scored;
  for (std::size_t i = 0; i < kept_records.size(); ++i) {
    scored.push_back({kept_records[i].qid, kept_records[i].outcome, conf[i]});
  }
  return scored;
}

CalibrationRecord cmd_calibrate(const PipelineConfig& config, const std::string& scorer,
                                double target_risk) {
  config.validate();
  const Layout layout{config.out_dir};
  const auto scored = score_split(config, scorer, Split::kCalibration);
  CalibrationRecord rec{scorer, target_risk, calibrate(scored, target_risk)};
  write_json(layout.decision(scorer),
             {{"scorer", scorer},
              {"target_risk", target_risk},
              {"theta", rec.calibration.model.theta},
              {"coverage", rec.calibration.coverage},
              {"risk", rec.calibration.risk},
              {"feasible", rec.calibration.feasible},
              {"n", scored.size()}});
  char line[160];
  std::snprintf(line, sizeof(line), "%s: theta=%.6f coverage=%.4f risk=%.4f%s",
                scorer.c_str(), rec.calibration.model.theta, rec.calibration.coverage,
                rec.calibration.risk, rec.calibration.feasible ? "" : " (infeasible)");
  note(config, line);
  return rec;
}

std::vector<RiskReport> cmd_evaluate(const PipelineConfig& config) {
  config.validate();
  const Layout layout{config.out_dir};
  std::vector<RiskReport> reports;
  json summary = json::array();
  for (const auto& scorer : config.scorers) {
    const auto scored = score_split(config, scorer, Split::kTest);
    RiskReport report = make_report(scorer, scored);
    json entry = report_summary(report);
    if (fs::exists(layout.decision(scorer))) {
      const json decision = json::parse(read_file(layout.decision(scorer)));
      const DecisionModel dm{decision.at("theta").get<double>()};
      entry["decision"] = {{"theta", dm.theta},
                           {"target_risk", decision.at("target_risk")},
                           {"test_coverage", coverage(scored, dm)},
                           {"test_risk", selective_risk(scored, dm)}};
    }
    const fs::path dir = layout.reports() / scorer;
    write_json(dir / "summary.json", entry);
    write_file(dir / "rc_curve.csv", rc_curve_csv(report.rc_curve));
    std::string lines;
    for (const auto& s : scored) {
      lines += json{{"qid", s.qid},
                    {"outcome", to_string(s.outcome)},
                    {"confidence", s.confidence}}
                   .dump() +
               "\n";
    }
    write_file(dir / "scored.jsonl", lines);
    summary.push_back(entry);
    reports.push_back(std::move(report));
  }
  write_json(layout.reports() / "summary.json",
             {{"config", config}, {"split", "test"}, {"scope", config.scope},
              {"scorers", summary}});
  const std::string table = summary_table(reports);
  write_file(layout.reports() / "summary.txt", table);
  if (!config.quiet) std::clog << table;
  return reports;
}

void cmd_report(const PipelineConfig& config) {
  config.validate();
  const Layout layout{config.out_dir};
  std::vector<RiskReport> reports;
  for (const auto& scorer : config.scorers) {
    const fs::path scored_path = layout.reports() / scorer / "scored.jsonl";
    if (!fs::exists(scored_path)) {
      throw DataError("no evaluation output for '" + scorer + "'; run evaluate");
    }
    std::vector<ScoredInstance> scored;
    const std::string text = read_file(scored_path);
    std::size_t pos = 0;
    while (pos < text.size()) {
      const std::size_t eol = text.find('\n', pos);
      const json j = json::parse(text.substr(pos, eol - pos));
      scored.push_back({j.at("qid").get<std::string>(),
                        parse_outcome(j.at("outcome").get<std::string>()),
                        j.at("confidence").get<double>()});
      pos = eol == std::string::npos ? text.size() : eol + 1;
    }
    reports.push_back(make_report(scorer, scored));
  }
  write_file(layout.reports() / "rc_curve.svg", rc_curve_svg(reports));

  const auto records = load_signals(layout.signals(Split::kTest));
  std::map<Outcome, int> emitted;
  for (const auto& r : records) {
    if (emitted[r.outcome] >= config.heatmaps_per_outcome) continue;
    ++emitted[r.outcome];
    write_file(layout.reports() / "heatmaps" / (r.qid + ".svg"), signal_heatmap_svg(r));
  }
  note(config, "wrote " + (layout.reports() / "rc_curve.svg").string());
}

std::vector<RiskReport> run_pipeline(const PipelineConfig& config) {
  config.validate();
  if (config.dataset_path.empty()) cmd_gen_data(config);
  cmd_train(config);
  cmd_extract(config);
  for (const auto& scorer : config.scorers) cmd_train_qualify(config, scorer);
  for (const auto& scorer : config.scorers) {
    cmd_calibrate(config, scorer, config.target_risk);
  }
  auto reports = cmd_evaluate(config);
  cmd_report(config);
  return reports;
}

}  // namespace rcqa
