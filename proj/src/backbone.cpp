#include "rcqa/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "rcqa/error.hpp"

namespace rcqa {

void BackboneConfig::validate() const {
  if (vocab_size < 1) throw ConfigError("backbone: vocab_size must be >= 1");
  if (embed_width < 1 || hidden_width < 1 || ffn_width < 1) {
    throw ConfigError("backbone: widths must be >= 1");
  }
  if (layers < 1) throw ConfigError("backbone: layers must be >= 1");
  if (span_cap < 1) throw ConfigError("backbone: span_cap must be >= 1");
  if (epochs < 1 || batch_size < 1) {
    throw ConfigError("backbone: epochs and batch_size must be >= 1");
  }
  if (!(learning_rate > 0.0)) {
    throw ConfigError("backbone: learning_rate must be positive");
  }
}

void to_json(nlohmann::json& j, const BackboneConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size},
                     {"embed_width", c.embed_width},
                     {"hidden_width", c.hidden_width},
                     {"ffn_width", c.ffn_width},
                     {"layers", c.layers},
                     {"span_cap", c.span_cap},
                     {"local_context", c.local_context},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, BackboneConfig& c) {
  BackboneConfig d;
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.embed_width = j.value("embed_width", d.embed_width);
  c.hidden_width = j.value("hidden_width", d.hidden_width);
  c.ffn_width = j.value("ffn_width", d.ffn_width);
  c.layers = j.value("layers", d.layers);
  c.span_cap = j.value("span_cap", d.span_cap);
  c.local_context = j.value("local_context", d.local_context);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.seed = j.value("seed", d.seed);
}

// ---------------------------------------------------------------------------
// Parameters

ParamList BackboneParams::list() {
  ParamList out;
  auto add = [&](std::string name, Dense2& m) {
    if (m.size() > 0) out.push_back({std::move(name), &m});
  };
  add("embedding", embedding);
  add("left_context", left_context);
  add("right_context", right_context);
  add("null_row", null_row);
  add("input_proj", input_proj);
  for (std::size_t t = 0; t < layers.size(); ++t) {
    const std::string p = "layer" + std::to_string(t + 1) + ".";
    InteractionLayer& l = layers[t];
    add(p + "query_proj", l.query_proj);
    add(p + "key_proj", l.key_proj);
    add(p + "value_proj", l.value_proj);
    add(p + "ffn_in", l.ffn_in);
    add(p + "ffn_in_bias", l.ffn_in_bias);
    add(p + "ffn_out", l.ffn_out);
    add(p + "ffn_out_bias", l.ffn_out_bias);
  }
  add("start_head", start_head);
  add("end_head", end_head);
  return out;
}

BackboneParams BackboneParams::zeros_like() const {
  BackboneParams z = *this;
  for (auto& p : z.list()) p.value->fill(0.0);
  return z;
}

BackboneModel BackboneModel::initialize(const BackboneConfig& config) {
  config.validate();
  const int v = config.vocab_size;
  const int h0 = config.embed_width;
  const int w = config.hidden_width;
  const int f = config.ffn_width;
  std::mt19937_64 rng(config.seed);

  BackboneModel model;
  model.config = config;
  BackboneParams& p = model.params;
  const double emb_scale = 1.0 / std::sqrt(static_cast<double>(h0));
  p.embedding = Dense2(v, h0);
  fill_normal(p.embedding, emb_scale, rng);
  if (config.local_context) {
    p.left_context = Dense2(v, h0);
    p.right_context = Dense2(v, h0);
    fill_normal(p.left_context, emb_scale, rng);
    fill_normal(p.right_context, emb_scale, rng);
  }
  p.null_row = Dense2(1, h0);
  fill_normal(p.null_row, emb_scale, rng);
  if (h0 != w) {
    p.input_proj = Dense2(h0, w);
    fill_normal(p.input_proj, 1.0 / std::sqrt(static_cast<double>(h0)), rng);
  }
  for (int t = 0; t < config.layers; ++t) {
    InteractionLayer l;
    l.query_proj = Dense2(w, w);
    l.key_proj = Dense2(h0, w);
    l.value_proj = Dense2(h0, w);
    l.ffn_in = Dense2(w, f);
    l.ffn_in_bias = Dense2(1, f);
    l.ffn_out = Dense2(f, w);
    l.ffn_out_bias = Dense2(1, w);
    fill_normal(l.query_proj, 1.0 / std::sqrt(static_cast<double>(w)), rng);
    fill_normal(l.key_proj, 1.0 / std::sqrt(static_cast<double>(h0)), rng);
    fill_normal(l.value_proj, 1.0 / std::sqrt(static_cast<double>(h0)), rng);
    fill_normal(l.ffn_in, 1.0 / std::sqrt(static_cast<double>(w)), rng);
    // Small residual branch so early layers start close to the identity.
    fill_normal(l.ffn_out, 0.5 / std::sqrt(static_cast<double>(f)), rng);
    p.layers.push_back(std::move(l));
  }
  p.start_head = Dense2(w, 1);
  p.end_head = Dense2(w, 1);
  fill_normal(p.start_head, 1.0 / std::sqrt(static_cast<double>(w)), rng);
  fill_normal(p.end_head, 1.0 / std::sqrt(static_cast<double>(w)), rng);
  return model;
}

Checkpoint BackboneModel::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.kind = "backbone";
  ckpt.config = config;
  BackboneParams copy = params;
  for (auto& p : copy.list()) ckpt.arrays.emplace_back(p.name, *p.value);
  return ckpt;
}

BackboneModel BackboneModel::from_checkpoint(const Checkpoint& checkpoint) {
  if (checkpoint.kind != "backbone") {
    throw DataError("checkpoint kind '" + checkpoint.kind + "' is not backbone");
  }
  BackboneModel model =
      initialize(checkpoint.config.get<BackboneConfig>());
  auto list = model.params.list();
  if (list.size() != checkpoint.arrays.size()) {
    throw DataError("backbone checkpoint array count mismatch");
  }
  for (auto& p : list) {
    const Dense2& a = checkpoint.array(p.name);
    if (a.rows() != p.value->rows() || a.cols() != p.value->cols()) {
      throw DataError("backbone checkpoint shape mismatch for " + p.name);
    }
    if (!a.all_finite()) throw DataError("non-finite parameter " + p.name);
    *p.value = a;
  }
  return model;
}

std::uint64_t checksum(const BackboneModel& model) {
  const std::string bytes = serialize_checkpoint(model.to_checkpoint());
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

struct LayerCache {
  Dense2 input;   // X
  Dense2 qp;      // X Wq
  Dense2 keys;    // Q0 Wk
  Dense2 vals;    // Q0 Wv
  Dense2 attn;    // row-softmaxed scores
  Dense2 hidden;  // H
  Dense2 pre;     // H W1 + b1
  Dense2 act;     // relu(pre)
};

struct ForwardCache {
  Dense2 p0;
  Dense2 q0;
  std::vector<LayerCache> layers;
};

void add_row_bias(Dense2& m, const Dense2& bias) {
  for (int r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (int c = 0; c < m.cols(); ++c) row[c] += bias(0, c);
  }
}

void add_col_sums(const Dense2& m, Dense2& out) {
  for (int r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (int c = 0; c < m.cols(); ++c) out(0, c) += row[c];
  }
}

void check_tokens(const BackboneConfig& config, const QaInstance& instance) {
  auto bad = [&](TokenId t) {
    return t >= static_cast<TokenId>(config.vocab_size);
  };
  if (std::any_of(instance.query.begin(), instance.query.end(), bad) ||
      std::any_of(instance.passage.begin(), instance.passage.end(), bad)) {
    throw DataError("instance '" + instance.qid +
                    "': token id outside the vocabulary");
  }
  if (instance.query.empty() || instance.passage.empty()) {
    throw DataError("instance '" + instance.qid + "': empty query or passage");
  }
}

BackboneOutput run_forward(const BackboneModel& model,
                           const QaInstance& instance, ForwardCache* cache) {
  check_tokens(model.config, instance);
  const BackboneParams& p = model.params;
  const int n = instance.passage_length();
  const int lq = static_cast<int>(instance.query.size());
  const int h0 = model.config.embed_width;

  Dense2 p0(n + 1, h0);
  for (int i = 0; i < n; ++i) {
    auto row = p0.row(i);
    auto e = p.embedding.row(instance.passage[i]);
    std::copy(e.begin(), e.end(), row.begin());
    if (model.config.local_context) {
      if (i > 0) {
        auto l = p.left_context.row(instance.passage[i - 1]);
        for (int c = 0; c < h0; ++c) row[c] += l[c];
      }
      if (i + 1 < n) {
        auto r = p.right_context.row(instance.passage[i + 1]);
        for (int c = 0; c < h0; ++c) row[c] += r[c];
      }
    }
  }
  {
    auto nr = p.null_row.row(0);
    std::copy(nr.begin(), nr.end(), p0.row(n).begin());
  }
  Dense2 q0(lq, h0);
  for (int j = 0; j < lq; ++j) {
    auto e = p.embedding.row(instance.query[j]);
    std::copy(e.begin(), e.end(), q0.row(j).begin());
  }

  BackboneOutput out;
  out.activations.layers.push_back(p0);
  Dense2 x = p.input_proj.size() > 0 ? matmul(p0, p.input_proj) : p0;
  const double inv_sqrt_w =
      1.0 / std::sqrt(static_cast<double>(model.config.hidden_width));

  for (const InteractionLayer& layer : p.layers) {
    LayerCache lc;
    Dense2 qp = matmul(x, layer.query_proj);
    Dense2 keys = matmul(q0, layer.key_proj);
    Dense2 vals = matmul(q0, layer.value_proj);
    Dense2 scores = matmul_nt(qp, keys);
    for (double& v : scores.values()) v *= inv_sqrt_w;
    Dense2 attn = softmax_rows(scores);
    Dense2 hidden = matmul(attn, vals);
    add_inplace(hidden, x);
    Dense2 pre = matmul(hidden, layer.ffn_in);
    add_row_bias(pre, layer.ffn_in_bias);
    Dense2 act = pre;
    for (double& v : act.values()) v = relu(v);
    Dense2 y = matmul(act, layer.ffn_out);
    add_row_bias(y, layer.ffn_out_bias);
    add_inplace(y, hidden);

    if (cache != nullptr) {
      lc.input = std::move(x);
      lc.qp = std::move(qp);
      lc.keys = std::move(keys);
      lc.vals = std::move(vals);
      lc.attn = std::move(attn);
      lc.hidden = std::move(hidden);
      lc.pre = std::move(pre);
      lc.act = std::move(act);
      cache->layers.push_back(std::move(lc));
    }
    out.activations.layers.push_back(y);
    x = std::move(y);
  }

  out.start_logits = matvec(x, p.start_head.values());
  out.end_logits = matvec(x, p.end_head.values());
  if (cache != nullptr) {
    cache->p0 = std::move(p0);
    cache->q0 = std::move(q0);
  }
  return out;
}

// Backpropagates d(loss)/d(logits) into `grad` (accumulating).
void run_backward(const BackboneModel& model, const QaInstance& instance,
                  const BackboneOutput& out, const ForwardCache& cache,
                  std::span<const double> d_start, std::span<const double> d_end,
                  BackboneParams& grad) {
  const BackboneParams& p = model.params;
  const int n = instance.passage_length();
  const int w = model.config.hidden_width;
  const int h0 = model.config.embed_width;
  const Dense2& top = out.activations.layers.back();

  // Heads: logits = P^(T) head.
  Dense2 dx(n + 1, w);
  for (int r = 0; r <= n; ++r) {
    auto row = top.row(r);
    auto drow = dx.row(r);
    for (int c = 0; c < w; ++c) {
      grad.start_head(c, 0) += d_start[r] * row[c];
      grad.end_head(c, 0) += d_end[r] * row[c];
      drow[c] = d_start[r] * p.start_head(c, 0) + d_end[r] * p.end_head(c, 0);
    }
  }

  const double inv_sqrt_w = 1.0 / std::sqrt(static_cast<double>(w));
  Dense2 dq0(cache.q0.rows(), h0);
  for (int t = static_cast<int>(p.layers.size()) - 1; t >= 0; --t) {
    const InteractionLayer& layer = p.layers[t];
    InteractionLayer& g = grad.layers[t];
    const LayerCache& lc = cache.layers[t];

    // Y = H + act W2 + b2
    Dense2 dhidden = dx;
    add_matmul_tn(lc.act, dx, g.ffn_out);
    add_col_sums(dx, g.ffn_out_bias);
    Dense2 dact = matmul_nt(dx, layer.ffn_out);
    auto pre = lc.pre.values();
    auto da = dact.values();
    for (std::size_t i = 0; i < da.size(); ++i) {
      if (pre[i] <= 0.0) da[i] = 0.0;
    }
    add_matmul_tn(lc.hidden, dact, g.ffn_in);
    add_col_sums(dact, g.ffn_in_bias);
    add_inplace(dhidden, matmul_nt(dact, layer.ffn_in));

    // H = X + attn vals
    Dense2 dinput = dhidden;
    Dense2 dattn = matmul_nt(dhidden, lc.vals);
    Dense2 dvals = matmul_tn(lc.attn, dhidden);
    Dense2 dscores(dattn.rows(), dattn.cols());
    for (int r = 0; r < dattn.rows(); ++r) {
      auto ds = softmax_backward(lc.attn.row(r), dattn.row(r));
      auto out_row = dscores.row(r);
      for (std::size_t c = 0; c < ds.size(); ++c) out_row[c] = ds[c] * inv_sqrt_w;
    }
    Dense2 dqp = matmul(dscores, lc.keys);
    Dense2 dkeys = matmul_tn(dscores, lc.qp);
    add_matmul_tn(lc.input, dqp, g.query_proj);
    add_inplace(dinput, matmul_nt(dqp, layer.query_proj));
    add_matmul_tn(cache.q0, dkeys, g.key_proj);
    add_matmul_tn(cache.q0, dvals, g.value_proj);
    add_inplace(dq0, matmul_nt(dkeys, layer.key_proj));
    add_inplace(dq0, matmul_nt(dvals, layer.value_proj));
    dx = std::move(dinput);
  }

  Dense2 dp0 = std::move(dx);
  if (p.input_proj.size() > 0) {
    add_matmul_tn(cache.p0, dp0, grad.input_proj);
    dp0 = matmul_nt(dp0, p.input_proj);
  }
  for (int i = 0; i < n; ++i) {
    auto d = dp0.row(i);
    auto ge = grad.embedding.row(instance.passage[i]);
    for (int c = 0; c < h0; ++c) ge[c] += d[c];
    if (model.config.local_context) {
      if (i > 0) {
        auto gl = grad.left_context.row(instance.passage[i - 1]);
        for (int c = 0; c < h0; ++c) gl[c] += d[c];
      }
      if (i + 1 < n) {
        auto gr = grad.right_context.row(instance.passage[i + 1]);
        for (int c = 0; c < h0; ++c) gr[c] += d[c];
      }
    }
  }
  {
    auto d = dp0.row(n);
    for (int c = 0; c < h0; ++c) grad.null_row(0, c) += d[c];
  }
  for (int j = 0; j < dq0.rows(); ++j) {
    auto d = dq0.row(j);
    auto ge = grad.embedding.row(instance.query[j]);
    for (int c = 0; c < h0; ++c) ge[c] += d[c];
  }
}

void accumulate_scaled(BackboneParams& into, BackboneParams& from,
                       double scale) {
  auto a = into.list();
  auto b = from.list();
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto av = a[i].value->values();
    auto bv = b[i].value->values();
    for (std::size_t j = 0; j < av.size(); ++j) av[j] += scale * bv[j];
  }
}

}  // namespace

BackboneOutput forward(const BackboneModel& model, const QaInstance& instance) {
  return run_forward(model, instance, nullptr);
}

HeadProbs head_probs(const BackboneOutput& out) {
  return {softmax(out.start_logits), softmax(out.end_logits)};
}

void require_probability_vector(std::span<const double> v, const char* what) {
  if (v.empty()) throw DataError(std::string(what) + ": empty vector");
  double sum = 0.0;
  for (double x : v) {
    if (!std::isfinite(x) || x < 0.0) {
      throw DataError(std::string(what) + ": not a probability vector");
    }
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw DataError(std::string(what) + ": entries do not sum to 1");
  }
}

Prediction decode(std::span<const double> start_probs,
                  std::span<const double> end_probs, int span_cap) {
  require_probability_vector(start_probs, "decode start");
  require_probability_vector(end_probs, "decode end");
  if (start_probs.size() != end_probs.size() || start_probs.size() < 2) {
    throw DataError("decode: start/end vectors must share a length >= 2");
  }
  if (span_cap < 1) throw ConfigError("decode: span_cap must be >= 1");
  const int n = static_cast<int>(start_probs.size()) - 1;
  double best = -1.0;
  Span best_span;
  for (int s = 0; s < n; ++s) {
    const int last = std::min(n - 1, s + span_cap - 1);
    for (int e = s; e <= last; ++e) {
      const double score = start_probs[s] * end_probs[e];
      if (score > best) {
        best = score;
        best_span = {s, e};
      }
    }
  }
  const double null_score = start_probs[n] * end_probs[n];
  if (null_score > best) return Prediction::null(null_score);
  return Prediction::direct(best_span, best);
}

std::pair<int, int> span_targets(const QaInstance& instance) {
  if (instance.gold.is_null()) {
    const int n = instance.passage_length();
    return {n, n};
  }
  const Span& s = instance.gold.spans().front();
  return {s.start, s.end};
}

double backbone_loss(const BackboneModel& model,
                     std::span<const QaInstance* const> batch,
                     BackboneParams* grad, Exec exec) {
  const std::size_t m = batch.size();
  if (m == 0) return 0.0;
  std::vector<double> losses(m, 0.0);
  std::vector<BackboneParams> grads;
  if (grad != nullptr) grads.assign(m, model.params.zeros_like());

  for_each_index(m, exec, [&](std::size_t i) {
    const QaInstance& inst = *batch[i];
    ForwardCache cache;
    BackboneOutput out =
        run_forward(model, inst, grad != nullptr ? &cache : nullptr);
    const auto [ts, te] = span_targets(inst);
    std::vector<double> ds(out.start_logits.size(), 0.0);
    std::vector<double> de(out.end_logits.size(), 0.0);
    losses[i] = softmax_cross_entropy(out.start_logits, ts, ds) +
                softmax_cross_entropy(out.end_logits, te, de);
    if (grad != nullptr) run_backward(model, inst, out, cache, ds, de, grads[i]);
  });

  // Fixed-order reduction.
  const double scale = 1.0 / static_cast<double>(m);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    total += losses[i];
    if (grad != nullptr) accumulate_scaled(*grad, grads[i], scale);
  }
  return total * scale;
}

BackboneTraining train_backbone(const BackboneConfig& config,
                                const std::vector<QaInstance>& train,
                                Exec exec) {
  if (train.empty()) throw ConfigError("train_backbone: empty training set");
  BackboneTraining result;
  result.model = BackboneModel::initialize(config);
  BackboneParams grad = result.model.params.zeros_like();
  GradTape tape(result.model.params.list(), grad.list());
  Adam adam(tape, AdamConfig{.learning_rate = config.learning_rate});

  // Separate stream from initialization so shuffling does not depend on the
  // parameter count.
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<const QaInstance*> batch;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    for (std::size_t begin = 0; begin < order.size();
         begin += config.batch_size) {
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      for (std::size_t i = begin; i < end; ++i) batch.push_back(&train[order[i]]);
      tape.zero_grad();
      const double loss = backbone_loss(result.model, batch, &grad, exec);
      epoch_total += loss * static_cast<double>(batch.size());
      adam.step(tape);
    }
    result.epoch_loss.push_back(epoch_total / static_cast<double>(train.size()));
    result.snapshots.push_back(result.model);
  }
  return result;
}

}  // namespace rcqa
