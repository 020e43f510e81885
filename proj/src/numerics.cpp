#include "rcqa/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rcqa/error.hpp"

namespace rcqa {

Dense2::Dense2(int rows, int cols, double fill)
    : rows_(rows), cols_(cols) {
  if (rows < 0 || cols < 0) throw ShapeError("negative Dense2 extent");
  values_.assign(static_cast<std::size_t>(rows) * cols, fill);
}

Dense2::Dense2(int rows, int cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (rows < 0 || cols < 0 ||
      values_.size() != static_cast<std::size_t>(rows) * cols) {
    throw ShapeError("Dense2 value count does not match extents");
  }
}

void Dense2::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool Dense2::all_finite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](double v) { return std::isfinite(v); });
}

Dense3::Dense3(int channels, int rows, int cols, double fill)
    : channels_(channels), rows_(rows), cols_(cols) {
  if (channels < 0 || rows < 0 || cols < 0) {
    throw ShapeError("negative Dense3 extent");
  }
  values_.assign(static_cast<std::size_t>(channels) * rows * cols, fill);
}

Dense2 matmul(const Dense2& a, const Dense2& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner extents differ");
  Dense2 out(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i) {
    auto o = out.row(i);
    for (int k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto br = b.row(k);
      for (int j = 0; j < b.cols(); ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

Dense2 matmul_nt(const Dense2& a, const Dense2& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt: inner extents differ");
  Dense2 out(a.rows(), b.rows());
  for (int i = 0; i < a.rows(); ++i) {
    auto ar = a.row(i);
    for (int j = 0; j < b.rows(); ++j) {
      auto br = b.row(j);
      double s = 0.0;
      for (int k = 0; k < a.cols(); ++k) s += ar[k] * br[k];
      out(i, j) = s;
    }
  }
  return out;
}

void add_matmul_tn(const Dense2& a, const Dense2& b, Dense2& out) {
  if (a.rows() != b.rows() || out.rows() != a.cols() ||
      out.cols() != b.cols()) {
    throw ShapeError("add_matmul_tn: extents differ");
  }
  for (int k = 0; k < a.rows(); ++k) {
    auto ar = a.row(k);
    auto br = b.row(k);
    for (int i = 0; i < a.cols(); ++i) {
      const double aki = ar[i];
      if (aki == 0.0) continue;
      auto o = out.row(i);
      for (int j = 0; j < b.cols(); ++j) o[j] += aki * br[j];
    }
  }
}

Dense2 matmul_tn(const Dense2& a, const Dense2& b) {
  Dense2 out(a.cols(), b.cols());
  add_matmul_tn(a, b, out);
  return out;
}

std::vector<double> matvec(const Dense2& a, std::span<const double> v) {
  if (static_cast<std::size_t>(a.cols()) != v.size()) {
    throw ShapeError("matvec: extents differ");
  }
  std::vector<double> out(a.rows(), 0.0);
  for (int i = 0; i < a.rows(); ++i) {
    auto ar = a.row(i);
    double s = 0.0;
    for (int k = 0; k < a.cols(); ++k) s += ar[k] * v[k];
    out[i] = s;
  }
  return out;
}

void add_inplace(Dense2& a, const Dense2& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("add_inplace: extents differ");
  }
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) av[i] += bv[i];
}

Dense2 transpose(const Dense2& a) {
  Dense2 out(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i) {
    for (int j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  }
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw ShapeError("softmax of an empty vector");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

Dense2 softmax_rows(const Dense2& logits) {
  Dense2 out(logits.rows(), logits.cols());
  for (int r = 0; r < logits.rows(); ++r) {
    auto p = softmax(logits.row(r));
    std::copy(p.begin(), p.end(), out.row(r).begin());
  }
  return out;
}

std::vector<double> softmax_backward(std::span<const double> probs,
                                     std::span<const double> grad_probs) {
  if (probs.size() != grad_probs.size()) {
    throw ShapeError("softmax_backward: extents differ");
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) dot += probs[i] * grad_probs[i];
  std::vector<double> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    out[i] = probs[i] * (grad_probs[i] - dot);
  }
  return out;
}

double softmax_cross_entropy(std::span<const double> logits, int target,
                             std::span<double> grad_logits) {
  if (logits.empty()) throw ShapeError("cross entropy over an empty vector");
  if (target < 0 || static_cast<std::size_t>(target) >= logits.size()) {
    throw ShapeError("cross entropy target out of range");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double x : logits) sum += std::exp(x - mx);
  const double log_z = mx + std::log(sum);
  if (!grad_logits.empty()) {
    for (std::size_t i = 0; i < logits.size(); ++i) {
      grad_logits[i] += std::exp(logits[i] - log_z);
    }
    grad_logits[target] -= 1.0;
  }
  return log_z - logits[target];
}

double relu(double x) { return x > 0.0 ? x : 0.0; }

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// ---------------------------------------------------------------------------

namespace {

void check_conv(const Dense3& input, const Conv2dShape& shape,
                std::span<const double> kernels) {
  if (input.channels() != shape.in_channels) {
    throw ShapeError("conv2d: input channel count mismatch");
  }
  if (kernels.size() != shape.weight_count()) {
    throw ShapeError("conv2d: kernel count mismatch");
  }
  if (shape.kernel_rows < 1 || shape.kernel_cols < 1 || shape.pad_rows < 0 ||
      shape.pad_cols < 0) {
    throw ShapeError("conv2d: invalid kernel or padding extents");
  }
  if (shape.kernel_rows > input.rows() + 2 * shape.pad_rows ||
      shape.kernel_cols > input.cols() + 2 * shape.pad_cols) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
}

}  // namespace

Dense3 conv2d(const Dense3& input, const Conv2dShape& shape,
              std::span<const double> kernels, std::span<const double> bias) {
  check_conv(input, shape, kernels);
  if (bias.size() != static_cast<std::size_t>(shape.out_channels)) {
    throw ShapeError("conv2d: bias count mismatch");
  }
  const int out_rows = input.rows() + 2 * shape.pad_rows - shape.kernel_rows + 1;
  const int out_cols = input.cols() + 2 * shape.pad_cols - shape.kernel_cols + 1;
  const int kr = shape.kernel_rows;
  const int kc = shape.kernel_cols;
  Dense3 out(shape.out_channels, out_rows, out_cols);
  for (int o = 0; o < shape.out_channels; ++o) {
    for (int r = 0; r < out_rows; ++r) {
      for (int c = 0; c < out_cols; ++c) {
        double acc = bias[o];
        for (int i = 0; i < shape.in_channels; ++i) {
          const double* w =
              kernels.data() + (static_cast<std::size_t>(o) * shape.in_channels + i) * kr * kc;
          for (int dr = 0; dr < kr; ++dr) {
            const int ir = r + dr - shape.pad_rows;
            if (ir < 0 || ir >= input.rows()) continue;
            for (int dc = 0; dc < kc; ++dc) {
              const int ic = c + dc - shape.pad_cols;
              if (ic < 0 || ic >= input.cols()) continue;
              acc += w[dr * kc + dc] * input(i, ir, ic);
            }
          }
        }
        out(o, r, c) = acc;
      }
    }
  }
  return out;
}

void conv2d_backward(const Dense3& input, const Conv2dShape& shape,
                     std::span<const double> kernels, const Dense3& grad_out,
                     std::span<double> grad_kernels,
                     std::span<double> grad_bias, Dense3* grad_input) {
  check_conv(input, shape, kernels);
  const int kr = shape.kernel_rows;
  const int kc = shape.kernel_cols;
  if (grad_kernels.size() != kernels.size() ||
      grad_bias.size() != static_cast<std::size_t>(shape.out_channels) ||
      grad_out.channels() != shape.out_channels ||
      grad_out.rows() != input.rows() + 2 * shape.pad_rows - kr + 1 ||
      grad_out.cols() != input.cols() + 2 * shape.pad_cols - kc + 1) {
    throw ShapeError("conv2d_backward: gradient extents mismatch");
  }
  if (grad_input != nullptr &&
      (grad_input->channels() != input.channels() ||
       grad_input->rows() != input.rows() ||
       grad_input->cols() != input.cols())) {
    throw ShapeError("conv2d_backward: input gradient extents mismatch");
  }
  for (int o = 0; o < shape.out_channels; ++o) {
    for (int r = 0; r < grad_out.rows(); ++r) {
      for (int c = 0; c < grad_out.cols(); ++c) {
        const double g = grad_out(o, r, c);
        if (g == 0.0) continue;
        grad_bias[o] += g;
        for (int i = 0; i < shape.in_channels; ++i) {
          const std::size_t base =
              (static_cast<std::size_t>(o) * shape.in_channels + i) * kr * kc;
          for (int dr = 0; dr < kr; ++dr) {
            const int ir = r + dr - shape.pad_rows;
            if (ir < 0 || ir >= input.rows()) continue;
            for (int dc = 0; dc < kc; ++dc) {
              const int ic = c + dc - shape.pad_cols;
              if (ic < 0 || ic >= input.cols()) continue;
              grad_kernels[base + dr * kc + dc] += g * input(i, ir, ic);
              if (grad_input != nullptr) {
                (*grad_input)(i, ir, ic) += g * kernels[base + dr * kc + dc];
              }
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------

TopK sorted_topk(std::span<const double> v, int k) {
  if (k < 1) throw ShapeError("sorted_topk: k must be >= 1");
  std::vector<int> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return v[a] > v[b]; });
  TopK out;
  out.values.assign(k, 0.0);
  out.source.assign(k, -1);
  const int n = std::min<int>(k, static_cast<int>(v.size()));
  for (int i = 0; i < n; ++i) {
    out.values[i] = v[order[i]];
    out.source[i] = order[i];
  }
  return out;
}

void sorted_topk_backward(const TopK& topk, std::span<const double> grad_values,
                          std::span<double> grad_input) {
  if (grad_values.size() != topk.values.size()) {
    throw ShapeError("sorted_topk_backward: gradient extent mismatch");
  }
  for (std::size_t i = 0; i < topk.source.size(); ++i) {
    if (topk.source[i] >= 0) grad_input[topk.source[i]] += grad_values[i];
  }
}

// ---------------------------------------------------------------------------

GradTape::GradTape(ParamList params, ParamList grads)
    : params_(std::move(params)), grads_(std::move(grads)) {
  if (params_.size() != grads_.size()) {
    throw ShapeError("GradTape: parameter and gradient lists differ");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].value->rows() != grads_[i].value->rows() ||
        params_[i].value->cols() != grads_[i].value->cols()) {
      throw ShapeError("GradTape: gradient shape differs for " +
                       params_[i].name);
    }
  }
}

std::size_t GradTape::total_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value->size();
  return n;
}

void GradTape::zero_grad() {
  for (auto& g : grads_) g.value->fill(0.0);
}

Adam::Adam(const GradTape& tape, AdamConfig config) : config_(config) {
  for (std::size_t i = 0; i < tape.size(); ++i) {
    m_.emplace_back(tape.value(i).size(), 0.0);
    v_.emplace_back(tape.value(i).size(), 0.0);
  }
}

void Adam::step(GradTape& tape) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < tape.size(); ++i) {
    auto w = tape.value(i).values();
    auto g = tape.grad(i).values();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }
}

void fill_normal(Dense2& m, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, scale);
  for (double& v : m.values()) v = dist(rng);
}

}  // namespace rcqa
