#include "rcqa/probe_cnn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "rcqa/error.hpp"

namespace rcqa {

std::string_view to_string(LayerMask mask) {
  return mask == LayerMask::kAll ? "all" : "last";
}

LayerMask parse_layer_mask(std::string_view name) {
  if (name == "all") return LayerMask::kAll;
  if (name == "last") return LayerMask::kLast;
  throw ConfigError("layers must be 'all' or 'last', got '" +
                    std::string(name) + "'");
}

void ProbeCnnConfig::validate() const {
  for (const ConvSpec* c : {&conv1, &conv2}) {
    if (c->rows < 1 || c->cols < 1 || c->channels < 1) {
      throw ConfigError("probe-cnn: kernel extents and channels must be >= 1");
    }
  }
  if (top_k < 1) throw ConfigError("probe-cnn: top_k must be >= 1");
  if (hidden < 1) throw ConfigError("probe-cnn: hidden must be >= 1");
  if (epochs < 1 || batch_pairs < 1 || pair_multiplier < 1) {
    throw ConfigError("probe-cnn: epochs, batch_pairs, pair_multiplier >= 1");
  }
  if (!(learning_rate > 0.0)) {
    throw ConfigError("probe-cnn: learning_rate must be positive");
  }
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
    throw ConfigError("probe-cnn: holdout_fraction must lie in [0,1)");
  }
}

void to_json(nlohmann::json& j, const ProbeCnnConfig& c) {
  auto conv = [](const ConvSpec& s) {
    return nlohmann::json{{"rows", s.rows}, {"cols", s.cols}, {"channels", s.channels}};
  };
  j = nlohmann::json{{"conv1", conv(c.conv1)},
                     {"conv2", conv(c.conv2)},
                     {"top_k", c.top_k},
                     {"hidden", c.hidden},
                     {"layers", to_string(c.layers)},
                     {"epochs", c.epochs},
                     {"learning_rate", c.learning_rate},
                     {"batch_pairs", c.batch_pairs},
                     {"pair_multiplier", c.pair_multiplier},
                     {"holdout_fraction", c.holdout_fraction},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ProbeCnnConfig& c) {
  ProbeCnnConfig d;
  auto conv = [&](const char* key, const ConvSpec& def) {
    ConvSpec s = def;
    if (j.contains(key)) {
      const auto& v = j.at(key);
      s.rows = v.value("rows", def.rows);
      s.cols = v.value("cols", def.cols);
      s.channels = v.value("channels", def.channels);
    }
    return s;
  };
  c.conv1 = conv("conv1", d.conv1);
  c.conv2 = conv("conv2", d.conv2);
  c.top_k = j.value("top_k", d.top_k);
  c.hidden = j.value("hidden", d.hidden);
  c.layers = parse_layer_mask(j.value("layers", std::string("all")));
  c.epochs = j.value("epochs", d.epochs);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.batch_pairs = j.value("batch_pairs", d.batch_pairs);
  c.pair_multiplier = j.value("pair_multiplier", d.pair_multiplier);
  c.holdout_fraction = j.value("holdout_fraction", d.holdout_fraction);
  c.seed = j.value("seed", d.seed);
}

Dense3 stack_signals(const ProbeSignals& signals) {
  return stack_signals(signals, LayerMask::kAll);
}

Dense3 stack_signals(const ProbeSignals& signals, LayerMask mask) {
  if (signals.layers.empty()) throw DataError("stack_signals: no layers");
  const std::size_t width = signals.layers.front().start.size();
  for (const auto& l : signals.layers) {
    if (l.start.size() != width || l.end.size() != width) {
      throw DataError("stack_signals: ragged signal lengths");
    }
  }
  const int first =
      mask == LayerMask::kAll ? 0 : static_cast<int>(signals.layers.size()) - 1;
  const int rows = static_cast<int>(signals.layers.size()) - first;
  Dense3 out(2, rows, static_cast<int>(width));
  for (int r = 0; r < rows; ++r) {
    const LayerSignals& l = signals.layers[first + r];
    for (std::size_t c = 0; c < width; ++c) {
      out(0, r, static_cast<int>(c)) = l.start[c];
      out(1, r, static_cast<int>(c)) = l.end[c];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

ParamList ProbeCnnParams::list() {
  return {{"conv1.weights", &conv1_weights}, {"conv1.bias", &conv1_bias},
          {"conv2.weights", &conv2_weights}, {"conv2.bias", &conv2_bias},
          {"fc1.weights", &fc1_weights},     {"fc1.bias", &fc1_bias},
          {"fc2.weights", &fc2_weights},     {"fc2.bias", &fc2_bias}};
}

ProbeCnnParams ProbeCnnParams::zeros_like() const {
  ProbeCnnParams z = *this;
  for (auto& p : z.list()) p.value->fill(0.0);
  return z;
}

double ProbeCnnTrace::kink_margin() const {
  double margin = std::numeric_limits<double>::infinity();
  for (const Dense3* pre : {&conv1_pre, &conv2_pre}) {
    for (double v : pre->values()) margin = std::min(margin, std::abs(v));
  }
  for (double v : hidden_pre) margin = std::min(margin, std::abs(v));
  for (std::size_t ch = 0; ch < topk.size(); ++ch) {
    const auto values = conv2_out.channel(static_cast<int>(ch));
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const std::size_t k = topk[ch].values.size();
    for (std::size_t i = 0; i + 1 < sorted.size() && i < k; ++i) {
      // Ties between dead units carry no gradient either way.
      if (sorted[i] == 0.0 && sorted[i + 1] == 0.0) continue;
      margin = std::min(margin, sorted[i] - sorted[i + 1]);
    }
  }
  return margin;
}

ProbeCnn::ProbeCnn(ProbeCnnConfig config, ProbeCnnParams params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
}

ProbeCnn ProbeCnn::initialize(const ProbeCnnConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const int c1 = config.conv1.channels;
  const int c2 = config.conv2.channels;
  const int fan1 = 2 * config.conv1.rows * config.conv1.cols;
  const int fan2 = c1 * config.conv2.rows * config.conv2.cols;
  const int features = c2 * config.top_k;
  ProbeCnnParams p;
  p.conv1_weights = Dense2(c1, fan1);
  p.conv1_bias = Dense2(1, c1);
  p.conv2_weights = Dense2(c2, fan2);
  p.conv2_bias = Dense2(1, c2);
  p.fc1_weights = Dense2(features, config.hidden);
  p.fc1_bias = Dense2(1, config.hidden);
  p.fc2_weights = Dense2(config.hidden, 1);
  p.fc2_bias = Dense2(1, 1);
  fill_normal(p.conv1_weights, std::sqrt(2.0 / fan1), rng);
  fill_normal(p.conv2_weights, std::sqrt(2.0 / fan2), rng);
  fill_normal(p.fc1_weights, std::sqrt(2.0 / features), rng);
  fill_normal(p.fc2_weights, 1.0 / std::sqrt(static_cast<double>(config.hidden)), rng);
  return ProbeCnn(config, std::move(p));
}

Conv2dShape ProbeCnn::conv1_shape() const {
  return {config_.conv1.channels, 2, config_.conv1.rows, config_.conv1.cols,
          (config_.conv1.rows - 1) / 2, (config_.conv1.cols - 1) / 2};
}

Conv2dShape ProbeCnn::conv2_shape() const {
  return {config_.conv2.channels, config_.conv1.channels, config_.conv2.rows,
          config_.conv2.cols, (config_.conv2.rows - 1) / 2,
          (config_.conv2.cols - 1) / 2};
}

double ProbeCnn::score(const ProbeSignals& signals) const {
  return evaluate(stack_signals(signals, config_.layers)).confidence;
}

ProbeCnnTrace ProbeCnn::evaluate(const Dense3& input) const {
  ProbeCnnTrace tr;
  tr.input = input;
  tr.conv1_pre = conv2d(input, conv1_shape(), params_.conv1_weights.values(),
                        params_.conv1_bias.values());
  tr.conv1_out = tr.conv1_pre;
  for (double& v : tr.conv1_out.values()) v = relu(v);
  tr.conv2_pre = conv2d(tr.conv1_out, conv2_shape(),
                        params_.conv2_weights.values(),
                        params_.conv2_bias.values());
  tr.conv2_out = tr.conv2_pre;
  for (double& v : tr.conv2_out.values()) v = relu(v);

  const int k = config_.top_k;
  tr.features.reserve(static_cast<std::size_t>(config_.conv2.channels) * k);
  for (int ch = 0; ch < config_.conv2.channels; ++ch) {
    tr.topk.push_back(sorted_topk(tr.conv2_out.channel(ch), k));
    const auto& vals = tr.topk.back().values;
    tr.features.insert(tr.features.end(), vals.begin(), vals.end());
  }

  const Dense2& w1 = params_.fc1_weights;
  tr.hidden_pre.assign(config_.hidden, 0.0);
  for (int h = 0; h < config_.hidden; ++h) tr.hidden_pre[h] = params_.fc1_bias(0, h);
  for (std::size_t f = 0; f < tr.features.size(); ++f) {
    const double x = tr.features[f];
    if (x == 0.0) continue;
    auto row = w1.row(static_cast<int>(f));
    for (int h = 0; h < config_.hidden; ++h) tr.hidden_pre[h] += x * row[h];
  }
  tr.hidden.resize(config_.hidden);
  tr.logit = params_.fc2_bias(0, 0);
  for (int h = 0; h < config_.hidden; ++h) {
    tr.hidden[h] = relu(tr.hidden_pre[h]);
    tr.logit += tr.hidden[h] * params_.fc2_weights(h, 0);
  }
  tr.confidence = logistic(tr.logit);
  return tr;
}

void ProbeCnn::backward(const ProbeCnnTrace& tr, double grad_confidence,
                        ProbeCnnParams& grad) const {
  const double dz = grad_confidence * tr.confidence * (1.0 - tr.confidence);
  grad.fc2_bias(0, 0) += dz;
  std::vector<double> dh_pre(config_.hidden, 0.0);
  for (int h = 0; h < config_.hidden; ++h) {
    grad.fc2_weights(h, 0) += dz * tr.hidden[h];
    dh_pre[h] = tr.hidden_pre[h] > 0.0 ? dz * params_.fc2_weights(h, 0) : 0.0;
    grad.fc1_bias(0, h) += dh_pre[h];
  }
  std::vector<double> dfeat(tr.features.size(), 0.0);
  for (std::size_t f = 0; f < tr.features.size(); ++f) {
    auto wrow = params_.fc1_weights.row(static_cast<int>(f));
    auto grow = grad.fc1_weights.row(static_cast<int>(f));
    double acc = 0.0;
    for (int h = 0; h < config_.hidden; ++h) {
      grow[h] += tr.features[f] * dh_pre[h];
      acc += wrow[h] * dh_pre[h];
    }
    dfeat[f] = acc;
  }

  const int k = config_.top_k;
  Dense3 dconv2(tr.conv2_out.channels(), tr.conv2_out.rows(), tr.conv2_out.cols());
  for (int ch = 0; ch < config_.conv2.channels; ++ch) {
    sorted_topk_backward(
        tr.topk[ch],
        std::span<const double>(dfeat).subspan(static_cast<std::size_t>(ch) * k, k),
        dconv2.channel(ch));
  }
  {
    auto pre = tr.conv2_pre.values();
    auto d = dconv2.values();
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (pre[i] <= 0.0) d[i] = 0.0;
    }
  }
  Dense3 dconv1(tr.conv1_out.channels(), tr.conv1_out.rows(), tr.conv1_out.cols());
  conv2d_backward(tr.conv1_out, conv2_shape(), params_.conv2_weights.values(),
                  dconv2, grad.conv2_weights.values(), grad.conv2_bias.values(),
                  &dconv1);
  {
    auto pre = tr.conv1_pre.values();
    auto d = dconv1.values();
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (pre[i] <= 0.0) d[i] = 0.0;
    }
  }
  conv2d_backward(tr.input, conv1_shape(), params_.conv1_weights.values(),
                  dconv1, grad.conv1_weights.values(), grad.conv1_bias.values(),
                  nullptr);
}

Checkpoint ProbeCnn::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.kind = "qualify";
  ckpt.config = {{"variant", "probe-cnn"}, {"probe_cnn", config_}};
  ProbeCnnParams copy = params_;
  for (auto& p : copy.list()) ckpt.arrays.emplace_back(p.name, *p.value);
  return ckpt;
}

ProbeCnn ProbeCnn::from_checkpoint(const Checkpoint& checkpoint) {
  if (checkpoint.kind != "qualify" ||
      checkpoint.config.value("variant", "") != "probe-cnn") {
    throw DataError("checkpoint is not a probe-cnn qualify model");
  }
  ProbeCnn model =
      initialize(checkpoint.config.at("probe_cnn").get<ProbeCnnConfig>());
  for (auto& p : model.params_.list()) {
    const Dense2& a = checkpoint.array(p.name);
    if (a.rows() != p.value->rows() || a.cols() != p.value->cols()) {
      throw DataError("probe-cnn checkpoint shape mismatch for " + p.name);
    }
    *p.value = a;
  }
  return model;
}

// ---------------------------------------------------------------------------
// Pairwise training

double pairwise_hinge(double positive, double negative) {
  return std::max(0.0, 1.0 - positive + negative);
}

namespace {

void accumulate(ProbeCnnParams& into, ProbeCnnParams& from, double scale) {
  auto a = into.list();
  auto b = from.list();
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto av = a[i].value->values();
    auto bv = b[i].value->values();
    for (std::size_t j = 0; j < av.size(); ++j) av[j] += scale * bv[j];
  }
}

double all_pairs_loss(const std::vector<double>& pos,
                      const std::vector<double>& neg) {
  double total = 0.0;
  for (double p : pos) {
    for (double n : neg) total += pairwise_hinge(p, n);
  }
  return total / static_cast<double>(pos.size() * neg.size());
}

std::vector<double> score_inputs(const ProbeCnn& model,
                                 const std::vector<Dense3>& inputs, Exec exec) {
  std::vector<double> out(inputs.size());
  for_each_index(inputs.size(), exec, [&](std::size_t i) {
    out[i] = model.evaluate(inputs[i]).confidence;
  });
  return out;
}

}  // namespace

double pairwise_loss(const ProbeCnn& model, std::span<const Dense3> positives,
                     std::span<const Dense3> negatives,
                     std::span<const std::pair<int, int>> pairs,
                     ProbeCnnParams* grad, Exec exec) {
  const std::size_t m = pairs.size();
  if (m == 0) return 0.0;
  // Every referenced input is evaluated once. Ids below np are positives,
  // the rest negatives; slot maps an id to its position in `items`.
  const std::size_t np = positives.size();
  std::vector<int> slot(np + negatives.size(), -1);
  std::vector<std::size_t> items;
  auto use = [&](std::size_t id) {
    if (slot[id] < 0) {
      slot[id] = static_cast<int>(items.size());
      items.push_back(id);
    }
  };
  for (const auto& [pi, ni] : pairs) {
    if (pi < 0 || static_cast<std::size_t>(pi) >= np || ni < 0 ||
        static_cast<std::size_t>(ni) >= negatives.size()) {
      throw ShapeError("pairwise_loss: pair index out of range");
    }
    use(static_cast<std::size_t>(pi));
    use(np + static_cast<std::size_t>(ni));
  }
  std::vector<ProbeCnnTrace> traces(items.size());
  for_each_index(items.size(), exec, [&](std::size_t k) {
    const std::size_t id = items[k];
    traces[k] = model.evaluate(id < np ? positives[id] : negatives[id - np]);
  });

  // The backward pass is linear in d(loss)/d(confidence), so each input
  // needs one backward call with its summed upstream gradient.
  const double scale = 1.0 / static_cast<double>(m);
  double total = 0.0;
  std::vector<double> dconf(items.size(), 0.0);
  for (const auto& [pi, ni] : pairs) {
    const int a = slot[pi];
    const int b = slot[np + ni];
    const double loss = pairwise_hinge(traces[a].confidence, traces[b].confidence);
    total += loss;
    if (loss > 0.0) {
      dconf[a] -= scale;
      dconf[b] += scale;
    }
  }
  if (grad != nullptr) {
    std::vector<ProbeCnnParams> grads(items.size(), model.params().zeros_like());
    for_each_index(items.size(), exec, [&](std::size_t k) {
      if (dconf[k] != 0.0) model.backward(traces[k], dconf[k], grads[k]);
    });
    for (auto& g : grads) accumulate(*grad, g, 1.0);
  }
  return total * scale;
}

ProbeCnnTraining train_probe_cnn(const ProbeCnnConfig& config,
                                 const std::vector<SignalRecord>& validation,
                                 Exec exec) {
  config.validate();
  std::mt19937_64 rng(config.seed ^ 0x5851f42d4c957f2dull);

  std::vector<std::size_t> direct;
  for (std::size_t i = 0; i < validation.size(); ++i) {
    if (is_direct_answer(validation[i].outcome)) direct.push_back(i);
  }
  std::shuffle(direct.begin(), direct.end(), rng);
  const auto holdout_count = static_cast<std::size_t>(
      std::llround(config.holdout_fraction * static_cast<double>(direct.size())));

  std::vector<Dense3> train_pos, train_neg, hold_pos, hold_neg;
  for (std::size_t r = 0; r < direct.size(); ++r) {
    const SignalRecord& rec = validation[direct[r]];
    Dense3 x = stack_signals(rec.signals, config.layers);
    const bool positive = rec.outcome == Outcome::kADplus;
    if (r < holdout_count) {
      (positive ? hold_pos : hold_neg).push_back(std::move(x));
    } else {
      (positive ? train_pos : train_neg).push_back(std::move(x));
    }
  }
  if (train_pos.empty() || train_neg.empty()) {
    throw DataError("insufficient pair supply: need ADplus and ADminus/UD records");
  }
  // Without both classes in the held-out slice, epochs are compared on the
  // full training pair set instead.
  const bool use_holdout = !hold_pos.empty() && !hold_neg.empty();

  ProbeCnnTraining result;
  result.model = ProbeCnn::initialize(config);
  ProbeCnn best = result.model;
  double best_loss = std::numeric_limits<double>::infinity();

  ProbeCnnParams grad = result.model.params().zeros_like();
  GradTape tape(result.model.mutable_params().list(), grad.list());
  Adam adam(tape, AdamConfig{.learning_rate = config.learning_rate});

  const std::size_t pairs_per_epoch =
      static_cast<std::size_t>(config.pair_multiplier) *
      std::min(train_pos.size(), train_neg.size());
  std::uniform_int_distribution<int> pick_pos(0, static_cast<int>(train_pos.size()) - 1);
  std::uniform_int_distribution<int> pick_neg(0, static_cast<int>(train_neg.size()) - 1);
  std::vector<std::pair<int, int>> pairs(pairs_per_epoch);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (auto& p : pairs) {
      p.first = pick_pos(rng);
      p.second = pick_neg(rng);
    }
    double epoch_total = 0.0;
    for (std::size_t begin = 0; begin < pairs.size(); begin += config.batch_pairs) {
      const std::size_t end =
          std::min(pairs.size(), begin + static_cast<std::size_t>(config.batch_pairs));
      std::span<const std::pair<int, int>> batch(pairs.data() + begin, end - begin);
      tape.zero_grad();
      epoch_total += pairwise_loss(result.model, train_pos, train_neg, batch,
                                   &grad, exec) *
                     static_cast<double>(batch.size());
      adam.step(tape);
    }
    result.train_loss.push_back(epoch_total / static_cast<double>(pairs.size()));

    const double selection_loss =
        use_holdout ? all_pairs_loss(score_inputs(result.model, hold_pos, exec),
                                     score_inputs(result.model, hold_neg, exec))
                    : all_pairs_loss(score_inputs(result.model, train_pos, exec),
                                     score_inputs(result.model, train_neg, exec));
    result.holdout_loss.push_back(selection_loss);
    if (selection_loss < best_loss) {
      best_loss = selection_loss;
      best = result.model;
      result.best_epoch = epoch;
    }
  }
  result.model = std::move(best);
  return result;
}

}  // namespace rcqa
