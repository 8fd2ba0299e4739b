#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "slac/autodiff.hpp"

namespace slac {

struct AdamOptions {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamOptions options;
  std::int64_t step_count = 0;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;

  AdamState() = default;
  explicit AdamState(AdamOptions opts) : options(opts) {}
};

/// One bias-corrected Adam update of every tensor, then zeroes the gradients.
/// Moments are created lazily on the first step and bound to the tensor order.
void adam_step(std::span<ParamTensor* const> params, AdamState& state);

void zero_grads(std::span<ParamTensor* const> params);

struct GradCheckOptions {
  double eps = 1e-5;
  std::size_t max_coords_per_tensor = 0;  // 0 = every coordinate
  std::uint64_t seed = 0;
};

/// Max over checked coordinates of |analytic - central difference| /
/// max(|analytic|, |cd|, 1e-12). `loss` must build a scalar on the tape it gets.
double finite_diff_check(const std::function<ad::Var(ad::Tape&)>& loss,
                         std::span<ParamTensor* const> params, GradCheckOptions options = {});

/// Stops after `patience` consecutive epochs without a strict decrease of the monitored loss.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  /// Returns true when `loss` is a new minimum.
  bool update(double loss) {
    ++epoch_;
    if (loss < best_) {
      best_ = loss;
      best_epoch_ = epoch_;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }
  bool should_stop() const { return stale_ >= patience_; }
  double best() const { return best_; }
  int best_epoch() const { return best_epoch_; }
  int epoch() const { return epoch_; }

 private:
  int patience_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  int stale_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

}  // namespace slac
