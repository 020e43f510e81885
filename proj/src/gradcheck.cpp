#include <algorithm>
#include <cmath>

#include "rcqa/error.hpp"
#include "rcqa/numerics.hpp"

namespace rcqa {

namespace {

constexpr double kGradientFloor = 1e-6;

double evaluate(const LossWithGradient& loss_fn, GradTape& tape) {
  tape.zero_grad();
  const double loss = loss_fn();
  if (!std::isfinite(loss)) throw Error("check_gradients: non-finite loss");
  return loss;
}

}  // namespace

GradientCheck check_gradients(const LossWithGradient& loss_fn, GradTape& tape,
                              double step, const std::function<double()>& value_fn) {
  evaluate(loss_fn, tape);
  std::vector<std::vector<double>> analytic;
  for (std::size_t i = 0; i < tape.size(); ++i) {
    auto g = tape.grad(i).values();
    analytic.emplace_back(g.begin(), g.end());
  }

  GradientCheck result;
  std::size_t flat = 0;
  for (std::size_t i = 0; i < tape.size(); ++i) {
    auto w = tape.value(i).values();
    for (std::size_t j = 0; j < w.size(); ++j, ++flat) {
      const double saved = w[j];
      w[j] = saved + step;
      const double up = value_fn ? value_fn() : evaluate(loss_fn, tape);
      w[j] = saved - step;
      const double down = value_fn ? value_fn() : evaluate(loss_fn, tape);
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw Error("check_gradients: non-finite loss");
      }
      w[j] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[i][j];
      // Entries whose true value is zero carry central-difference roundoff
      // of order eps * |loss| / step, so the denominator has a floor.
      const double denom =
          std::max({std::abs(a), std::abs(numeric), kGradientFloor});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_index = flat;
      }
      ++result.checked;
    }
  }
  // Leave the analytic gradient in the tape.
  evaluate(loss_fn, tape);
  return result;
}

}  // namespace rcqa
