#include "rcqa/qualify.hpp"

#include <algorithm>

#include "rcqa/error.hpp"

namespace rcqa {

double proba_score(std::span<const double> start_probs,
                   std::span<const double> end_probs, int span_cap) {
  require_probability_vector(start_probs, "proba start");
  require_probability_vector(end_probs, "proba end");
  if (start_probs.size() != end_probs.size() || start_probs.size() < 2) {
    throw DataError("proba: start/end vectors must share a length >= 2");
  }
  if (span_cap < 1) throw ConfigError("proba: span_cap must be >= 1");
  const int n = static_cast<int>(start_probs.size()) - 1;
  double best = 0.0;
  for (int s = 0; s < n; ++s) {
    const int last = std::min(n - 1, s + span_cap - 1);
    for (int e = s; e <= last; ++e) best = std::max(best, start_probs[s] * end_probs[e]);
  }
  return best;
}

double averaged_proba_score(std::span<const HeadProbs> heads, int span_cap) {
  if (heads.empty()) throw ConfigError("ensemble scoring needs >= 1 member");
  const std::size_t n = heads.front().start.size();
  std::vector<double> start(n, 0.0), end(n, 0.0);
  for (const HeadProbs& h : heads) {
    if (h.start.size() != n || h.end.size() != n) {
      throw DataError("ensemble members disagree on passage length");
    }
    for (std::size_t i = 0; i < n; ++i) {
      start[i] += h.start[i];
      end[i] += h.end[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(heads.size());
  for (std::size_t i = 0; i < n; ++i) {
    start[i] *= inv;
    end[i] *= inv;
  }
  return proba_score(start, end, span_cap);
}

namespace {

double member_average(std::span<const BackboneModel> models,
                      const QaInstance& instance, int span_cap) {
  if (models.empty()) throw ConfigError("ensemble scoring needs >= 1 member");
  std::vector<HeadProbs> heads;
  heads.reserve(models.size());
  for (const BackboneModel& m : models) heads.push_back(head_probs(forward(m, instance)));
  return averaged_proba_score(heads, span_cap);
}

}  // namespace

double aes_score(std::span<const BackboneModel> snapshots,
                 const QaInstance& instance, int span_cap) {
  return member_average(snapshots, instance, span_cap);
}

double ens_score(std::span<const BackboneModel> models,
                 const QaInstance& instance, int span_cap) {
  return member_average(models, instance, span_cap);
}

double oracle_score(Outcome outcome) {
  switch (outcome) {
    case Outcome::kADplus: return 1.0;
    case Outcome::kADminus:
    case Outcome::kUD: return 0.0;
    default:
      throw DataError("oracle scores only direct answers, got " +
                      std::string(to_string(outcome)));
  }
}

std::string scorer_kind(const QualifyModel& model) {
  struct {
    std::string operator()(const ProbeCnn&) const { return "probe-cnn"; }
    std::string operator()(const ProbaScorer&) const { return "proba"; }
    std::string operator()(const AesScorer&) const { return "aes"; }
    std::string operator()(const EnsScorer&) const { return "ens"; }
    std::string operator()(const OracleScorer&) const { return "oracle"; }
  } visitor;
  return std::visit(visitor, model);
}

double score(const QualifyModel& model, const SignalRecord& record,
             const QaInstance& instance) {
  struct {
    const SignalRecord& record;
    const QaInstance& instance;
    double operator()(const ProbeCnn& m) const { return m.score(record.signals); }
    double operator()(const ProbaScorer& m) const {
      return proba_score(record.head.start, record.head.end, m.span_cap);
    }
    double operator()(const AesScorer& m) const {
      return aes_score(m.snapshots, instance, m.span_cap);
    }
    double operator()(const EnsScorer& m) const {
      return ens_score(m.members, instance, m.span_cap);
    }
    double operator()(const OracleScorer&) const {
      return oracle_score(record.outcome);
    }
  } visitor{record, instance};
  return std::visit(visitor, model);
}

std::vector<double> score_all(const QualifyModel& model,
                              const std::vector<SignalRecord>& records,
                              const std::vector<QaInstance>& instances,
                              Exec exec) {
  if (records.size() != instances.size()) {
    throw DataError("score_all: records and instances differ in length");
  }
  std::vector<double> out(records.size());
  for_each_index(records.size(), exec, [&](std::size_t i) {
    if (records[i].qid != instances[i].qid) {
      throw DataError("score_all: record/instance qid mismatch");
    }
    out[i] = score(model, records[i], instances[i]);
  });
  return out;
}

Checkpoint to_checkpoint(const QualifyModel& model) {
  if (const auto* cnn = std::get_if<ProbeCnn>(&model)) return cnn->to_checkpoint();
  Checkpoint ckpt;
  ckpt.kind = "qualify";
  ckpt.config["variant"] = scorer_kind(model);
  if (const auto* p = std::get_if<ProbaScorer>(&model)) {
    ckpt.config["span_cap"] = p->span_cap;
  } else if (const auto* a = std::get_if<AesScorer>(&model)) {
    ckpt.config["span_cap"] = a->span_cap;
    ckpt.config["members"] = a->sources;
  } else if (const auto* e = std::get_if<EnsScorer>(&model)) {
    ckpt.config["span_cap"] = e->span_cap;
    ckpt.config["members"] = e->sources;
  }
  return ckpt;
}

QualifyModel load_qualify(const std::filesystem::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.kind != "qualify") {
    throw DataError(path.string() + " is not a qualify checkpoint");
  }
  const std::string variant = ckpt.config.value("variant", "");
  if (variant == "probe-cnn") return ProbeCnn::from_checkpoint(ckpt);
  if (variant == "oracle") return OracleScorer{};
  const int cap = ckpt.config.value("span_cap", 16);
  if (variant == "proba") return ProbaScorer{cap};
  if (variant == "aes" || variant == "ens") {
    std::vector<BackboneModel> models;
    std::vector<std::string> sources =
        ckpt.config.value("members", std::vector<std::string>{});
    for (const auto& rel : sources) {
      models.push_back(BackboneModel::from_checkpoint(
          load_checkpoint(path.parent_path() / rel)));
    }
    if (models.empty()) throw DataError(variant + " checkpoint lists no members");
    if (variant == "aes") return AesScorer{std::move(models), std::move(sources), cap};
    return EnsScorer{std::move(models), std::move(sources), cap};
  }
  throw DataError("unknown qualify variant '" + variant + "'");
}

}  // namespace rcqa
