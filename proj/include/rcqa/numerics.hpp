#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace rcqa {

// Row-major matrix of doubles.
class Dense2 {
 public:
  Dense2() = default;
  Dense2(int rows, int cols, double fill = 0.0);
  Dense2(int rows, int cols, std::vector<double> values);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }

  double& operator()(int r, int c) { return values_[index(r, c)]; }
  double operator()(int r, int c) const { return values_[index(r, c)]; }

  std::span<double> row(int r) {
    return {values_.data() + static_cast<std::size_t>(r) * cols_,
            static_cast<std::size_t>(cols_)};
  }
  std::span<const double> row(int r) const {
    return {values_.data() + static_cast<std::size_t>(r) * cols_,
            static_cast<std::size_t>(cols_)};
  }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Dense2&, const Dense2&) = default;

 private:
  std::size_t index(int r, int c) const {
    return static_cast<std::size_t>(r) * cols_ + c;
  }
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> values_;
};

// Channel-major 3-D array: (channel, row, col).
class Dense3 {
 public:
  Dense3() = default;
  Dense3(int channels, int rows, int cols, double fill = 0.0);

  int channels() const { return channels_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }

  double& operator()(int ch, int r, int c) { return values_[index(ch, r, c)]; }
  double operator()(int ch, int r, int c) const {
    return values_[index(ch, r, c)];
  }
  std::span<double> channel(int ch) {
    return {values_.data() + static_cast<std::size_t>(ch) * rows_ * cols_,
            static_cast<std::size_t>(rows_) * cols_};
  }
  std::span<const double> channel(int ch) const {
    return {values_.data() + static_cast<std::size_t>(ch) * rows_ * cols_,
            static_cast<std::size_t>(rows_) * cols_};
  }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  friend bool operator==(const Dense3&, const Dense3&) = default;

 private:
  std::size_t index(int ch, int r, int c) const {
    return (static_cast<std::size_t>(ch) * rows_ + r) * cols_ + c;
  }
  int channels_ = 0;
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> values_;
};

// ---------------------------------------------------------------------------
// Dense kernels

// a * b
Dense2 matmul(const Dense2& a, const Dense2& b);
// a * b^T
Dense2 matmul_nt(const Dense2& a, const Dense2& b);
// a^T * b
Dense2 matmul_tn(const Dense2& a, const Dense2& b);
// out += a^T * b (shapes must already agree)
void add_matmul_tn(const Dense2& a, const Dense2& b, Dense2& out);
// a * v for a column vector v of length a.cols().
std::vector<double> matvec(const Dense2& a, std::span<const double> v);

void add_inplace(Dense2& a, const Dense2& b);
Dense2 transpose(const Dense2& a);

// Numerically stable softmax (max subtraction). Throws ShapeError on empty
// input.
std::vector<double> softmax(std::span<const double> logits);
// Row-wise softmax.
Dense2 softmax_rows(const Dense2& logits);
// Given p = softmax(x) and dL/dp, returns dL/dx.
std::vector<double> softmax_backward(std::span<const double> probs,
                                     std::span<const double> grad_probs);
// -log p[target] for p = softmax(logits); writes dL/dlogits when grad given.
double softmax_cross_entropy(std::span<const double> logits, int target,
                             std::span<double> grad_logits = {});

double relu(double x);
double logistic(double x);
// log(1 + exp(x)) without overflow.
double softplus(double x);

// ---------------------------------------------------------------------------
// 2-D cross-correlation

struct Conv2dShape {
  int out_channels = 1;
  int in_channels = 1;
  int kernel_rows = 1;
  int kernel_cols = 1;
  int pad_rows = 0;
  int pad_cols = 0;

  std::size_t weight_count() const {
    return static_cast<std::size_t>(out_channels) * in_channels *
           kernel_rows * kernel_cols;
  }
};

// Kernels are laid out (out, in, kernel_row, kernel_col); bias has one entry
// per output channel. Padding is zero padding on both sides.
Dense3 conv2d(const Dense3& input, const Conv2dShape& shape,
              std::span<const double> kernels, std::span<const double> bias);

// Accumulates gradients for the kernels, bias and (when non-null) input.
void conv2d_backward(const Dense3& input, const Conv2dShape& shape,
                     std::span<const double> kernels, const Dense3& grad_out,
                     std::span<double> grad_kernels,
                     std::span<double> grad_bias, Dense3* grad_input);

// ---------------------------------------------------------------------------
// Sorted top-k

struct TopK {
  std::vector<double> values;  // length k, non-increasing
  std::vector<int> source;     // index into the input, -1 for padding
};

// The k largest entries in descending order, zero-padded when the input is
// shorter than k. Ties go to the lowest source index. Throws on k < 1.
TopK sorted_topk(std::span<const double> v, int k);

// Routes each output gradient back to its source position (accumulating).
void sorted_topk_backward(const TopK& topk, std::span<const double> grad_values,
                          std::span<double> grad_input);

// ---------------------------------------------------------------------------
// Parameters, gradients and optimization

struct NamedParam {
  std::string name;
  Dense2* value;
};
using ParamList = std::vector<NamedParam>;

// Registry of a model's parameters paired with gradient buffers of the same
// shapes. Owned by a single training loop.
class GradTape {
 public:
  GradTape(ParamList params, ParamList grads);

  std::size_t size() const { return params_.size(); }
  const std::string& name(std::size_t i) const { return params_[i].name; }
  Dense2& value(std::size_t i) { return *params_[i].value; }
  const Dense2& value(std::size_t i) const { return *params_[i].value; }
  Dense2& grad(std::size_t i) { return *grads_[i].value; }
  std::size_t total_count() const;

  void zero_grad();

 private:
  ParamList params_;
  ParamList grads_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(const GradTape& tape, AdamConfig config);
  // One update from the gradients currently held in the tape.
  void step(GradTape& tape);

 private:
  AdamConfig config_;
  long steps_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

// Fills a matrix with N(0, scale^2) draws.
void fill_normal(Dense2& m, double scale, std::mt19937_64& rng);

// Computes the loss and accumulates its gradient into the tape's buffers.
using LossWithGradient = std::function<double()>;

struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;  // flat index over all parameters
  std::size_t checked = 0;
};

// Central finite differences against the analytic gradient for every scalar
// parameter. Relative error uses max(|analytic|, |numeric|, 1e-6) as the
// denominator. value_fn, when given, computes the same loss without
// gradients and is used for the perturbed evaluations. Throws Error when the
// loss is not finite.
GradientCheck check_gradients(const LossWithGradient& loss_fn, GradTape& tape,
                              double step = 1e-5,
                              const std::function<double()>& value_fn = {});

}  // namespace rcqa
