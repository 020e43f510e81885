#include "rcqa/probes.hpp"

#include <algorithm>
#include <cmath>

#include "rcqa/error.hpp"

namespace rcqa {

ProbeParams ProbeParams::zeros(const BackboneModel& backbone) {
  ProbeParams p;
  for (int t = 0; t < backbone.config.layers; ++t) {
    p.start.emplace_back(backbone.config.hidden_width, 1);
    p.end.emplace_back(backbone.config.hidden_width, 1);
  }
  return p;
}

ParamList ProbeParams::list() {
  ParamList out;
  for (std::size_t t = 0; t < start.size(); ++t) {
    out.push_back({"probe" + std::to_string(t + 1) + ".start", &start[t]});
    out.push_back({"probe" + std::to_string(t + 1) + ".end", &end[t]});
  }
  return out;
}

Checkpoint ProbeParams::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.kind = "probes";
  ckpt.config = {{"layers", layer_count()}};
  ProbeParams copy = *this;
  for (auto& p : copy.list()) ckpt.arrays.emplace_back(p.name, *p.value);
  return ckpt;
}

ProbeParams ProbeParams::from_checkpoint(const Checkpoint& checkpoint) {
  if (checkpoint.kind != "probes") {
    throw DataError("checkpoint kind '" + checkpoint.kind + "' is not probes");
  }
  const int layers = checkpoint.config.at("layers").get<int>();
  ProbeParams p;
  for (int t = 1; t <= layers; ++t) {
    p.start.push_back(checkpoint.array("probe" + std::to_string(t) + ".start"));
    p.end.push_back(checkpoint.array("probe" + std::to_string(t) + ".end"));
  }
  return p;
}

ProbeSignals probe_forward(const ProbeParams& params,
                           const BackboneActivations& activations) {
  const int layers = params.layer_count();
  if (static_cast<int>(activations.layers.size()) != layers + 1) {
    throw ShapeError("probe_forward: layer count mismatch");
  }
  ProbeSignals out;
  for (int t = 0; t < layers; ++t) {
    const Dense2& act = activations.layers[t + 1];
    if (act.cols() != params.start[t].rows()) {
      throw ShapeError("probe_forward: width mismatch at layer " +
                       std::to_string(t + 1));
    }
    out.layers.push_back({softmax(matvec(act, params.start[t].values())),
                          softmax(matvec(act, params.end[t].values()))});
  }
  return out;
}

double probe_layer_loss(const Dense2& activation, const Dense2& start_weights,
                        const Dense2& end_weights, int target_start,
                        int target_end, Dense2* grad_start, Dense2* grad_end) {
  if (activation.cols() != start_weights.rows() ||
      activation.cols() != end_weights.rows()) {
    throw ShapeError("probe_layer_loss: width mismatch");
  }
  const auto ls = matvec(activation, start_weights.values());
  const auto le = matvec(activation, end_weights.values());
  std::vector<double> ds(ls.size(), 0.0);
  std::vector<double> de(le.size(), 0.0);
  const bool want_grad = grad_start != nullptr && grad_end != nullptr;
  double loss = softmax_cross_entropy(ls, target_start,
                                      want_grad ? std::span<double>(ds) : std::span<double>());
  loss += softmax_cross_entropy(le, target_end,
                                want_grad ? std::span<double>(de) : std::span<double>());
  if (want_grad) {
    for (int r = 0; r < activation.rows(); ++r) {
      auto row = activation.row(r);
      for (int c = 0; c < activation.cols(); ++c) {
        (*grad_start)(c, 0) += ds[r] * row[c];
        (*grad_end)(c, 0) += de[r] * row[c];
      }
    }
  }
  return loss;
}

void to_json(nlohmann::json& j, const ProbeTrainConfig& c) {
  j = nlohmann::json{{"iterations", c.iterations}, {"step_scale", c.step_scale}};
}

void from_json(const nlohmann::json& j, ProbeTrainConfig& c) {
  ProbeTrainConfig d;
  c.iterations = j.value("iterations", d.iterations);
  c.step_scale = j.value("step_scale", d.step_scale);
}

ProbeTraining train_probes(const BackboneModel& backbone,
                           const std::vector<QaInstance>& train,
                           const ProbeTrainConfig& config, Exec exec) {
  if (train.empty()) throw ConfigError("train_probes: empty training set");
  if (config.iterations < 0 || !(config.step_scale > 0.0) ||
      config.step_scale > 1.0) {
    throw ConfigError("train_probes: need iterations >= 0, 0 < step_scale <= 1");
  }
  const std::size_t m = train.size();
  const int layers = backbone.config.layers;

  // The backbone is frozen, so its activations are computed once.
  std::vector<BackboneActivations> acts(m);
  for_each_index(m, exec, [&](std::size_t i) {
    acts[i] = forward(backbone, train[i]).activations;
  });

  ProbeTraining result;
  result.params = ProbeParams::zeros(backbone);
  result.loss_history.assign(layers, {});
  std::vector<double> losses(m);
  std::vector<Dense2> gs(m), ge(m);

  for (int t = 0; t < layers; ++t) {
    double lipschitz = 0.0;
    for (const auto& a : acts) {
      const Dense2& x = a.layers[t + 1];
      for (int r = 0; r < x.rows(); ++r) {
        double sq = 0.0;
        for (double v : x.row(r)) sq += v * v;
        lipschitz = std::max(lipschitz, sq);
      }
    }
    const double step = config.step_scale / std::max(lipschitz, 1e-12);
    Dense2& ws = result.params.start[t];
    Dense2& we = result.params.end[t];

    auto evaluate = [&](bool with_grad) {
      for_each_index(m, exec, [&](std::size_t i) {
        const auto [ts, te] = span_targets(train[i]);
        if (with_grad) {
          gs[i] = Dense2(ws.rows(), 1);
          ge[i] = Dense2(we.rows(), 1);
        }
        losses[i] = probe_layer_loss(acts[i].layers[t + 1], ws, we, ts, te,
                                     with_grad ? &gs[i] : nullptr,
                                     with_grad ? &ge[i] : nullptr);
      });
      double total = 0.0;
      for (double l : losses) total += l;
      return total / static_cast<double>(m);
    };

    for (int k = 0; k < config.iterations; ++k) {
      result.loss_history[t].push_back(evaluate(true));
      Dense2 sum_s(ws.rows(), 1), sum_e(we.rows(), 1);
      for (std::size_t i = 0; i < m; ++i) {
        add_inplace(sum_s, gs[i]);
        add_inplace(sum_e, ge[i]);
      }
      const double scale = step / static_cast<double>(m);
      for (int c = 0; c < ws.rows(); ++c) {
        ws(c, 0) -= scale * sum_s(c, 0);
        we(c, 0) -= scale * sum_e(c, 0);
      }
    }
    result.loss_history[t].push_back(evaluate(false));
  }
  return result;
}

std::vector<SignalRecord> export_signals(const BackboneModel& backbone,
                                         const ProbeParams& probes,
                                         const std::vector<QaInstance>& instances,
                                         Exec exec) {
  std::vector<SignalRecord> out(instances.size());
  for_each_index(instances.size(), exec, [&](std::size_t i) {
    const QaInstance& inst = instances[i];
    BackboneOutput fw = forward(backbone, inst);
    SignalRecord& rec = out[i];
    rec.qid = inst.qid;
    rec.head = head_probs(fw);
    rec.prediction = decode(rec.head.start, rec.head.end, backbone.config.span_cap);
    rec.outcome = categorize(inst.gold, rec.prediction);
    rec.signals = probe_forward(probes, fw.activations);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Dump format

namespace {

nlohmann::json record_to_json(const SignalRecord& r) {
  nlohmann::json pred;
  pred["null"] = r.prediction.is_null();
  if (!r.prediction.is_null()) {
    pred["start"] = r.prediction.span().start;
    pred["end"] = r.prediction.span().end;
  }
  pred["score"] = r.prediction.score();
  nlohmann::json signals = nlohmann::json::array();
  for (const auto& l : r.signals.layers) {
    signals.push_back(nlohmann::json::array({l.start, l.end}));
  }
  return nlohmann::json{{"qid", r.qid},
                        {"outcome", to_string(r.outcome)},
                        {"prediction", pred},
                        {"signals", signals},
                        {"head", nlohmann::json::array({r.head.start, r.head.end})}};
}

SignalRecord record_from_json(const nlohmann::json& j) {
  SignalRecord r;
  r.qid = j.at("qid").get<std::string>();
  r.outcome = parse_outcome(j.at("outcome").get<std::string>());
  const auto& pred = j.at("prediction");
  const double score = pred.at("score").get<double>();
  r.prediction = pred.at("null").get<bool>()
                     ? Prediction::null(score)
                     : Prediction::direct({pred.at("start").get<int>(),
                                           pred.at("end").get<int>()},
                                          score);
  std::size_t width = 0;
  for (const auto& layer : j.at("signals")) {
    LayerSignals ls{layer.at(0).get<std::vector<double>>(),
                    layer.at(1).get<std::vector<double>>()};
    if (width == 0) width = ls.start.size();
    if (ls.start.size() != width || ls.end.size() != width) {
      throw DataError("signal dump: ragged signal vectors for " + r.qid);
    }
    r.signals.layers.push_back(std::move(ls));
  }
  if (j.contains("head")) {
    r.head.start = j["head"].at(0).get<std::vector<double>>();
    r.head.end = j["head"].at(1).get<std::vector<double>>();
  }
  return r;
}

}  // namespace

std::string signals_to_jsonl(const std::vector<SignalRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += record_to_json(r).dump();
    out += '\n';
  }
  return out;
}

std::vector<SignalRecord> signals_from_jsonl(std::string_view text) {
  std::vector<SignalRecord> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    const std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("signal dump line " + std::to_string(line_no) + ": " +
                      e.what());
    }
  }
  return out;
}

void save_signals(const std::filesystem::path& path,
                  const std::vector<SignalRecord>& records) {
  write_file(path, signals_to_jsonl(records));
}

std::vector<SignalRecord> load_signals(const std::filesystem::path& path) {
  return signals_from_jsonl(read_file(path));
}

}  // namespace rcqa
