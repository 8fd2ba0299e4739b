#include "slac/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace slac {

void zero_grads(std::span<ParamTensor* const> params) {
  for (auto* p : params) p->zero_grad();
}

void adam_step(std::span<ParamTensor* const> params, AdamState& state) {
  for (auto* p : params)
    if (!p->grad.allFinite()) throw Error("adam_step: non-finite gradient in tensor '" + p->name + "'");
  if (state.first_moment.empty()) {
    for (auto* p : params) {
      state.first_moment.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      state.second_moment.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (state.first_moment.size() != params.size())
    throw Error("adam_step: parameter list changed between steps");

  const auto& o = state.options;
  ++state.step_count;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step_count));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto* p = params[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = o.beta1 * m + (1.0 - o.beta1) * p->grad;
    v = o.beta2 * v + (1.0 - o.beta2) * p->grad.cwiseAbs2();
    p->value.array() -= o.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + o.epsilon);
    p->zero_grad();
  }
}

double finite_diff_check(const std::function<ad::Var(ad::Tape&)>& loss,
                         std::span<ParamTensor* const> params, GradCheckOptions options) {
  zero_grads(params);
  {
    ad::Tape tape;
    auto root = loss(tape);
    tape.backward(root);
  }
  auto evaluate = [&] {
    ad::Tape tape;
    return tape.scalar(loss(tape));
  };

  Rng rng(options.seed);
  double worst = 0.0;
  for (auto* p : params) {
    std::vector<Eigen::Index> coords(static_cast<std::size_t>(p->size()));
    std::iota(coords.begin(), coords.end(), Eigen::Index{0});
    if (options.max_coords_per_tensor > 0 && coords.size() > options.max_coords_per_tensor) {
      shuffle_range(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_tensor);
    }
    for (auto i : coords) {
      double& x = p->value.data()[i];
      const double saved = x;
      x = saved + options.eps;
      const double up = evaluate();
      x = saved - options.eps;
      const double down = evaluate();
      x = saved;
      const double cd = (up - down) / (2.0 * options.eps);
      const double an = p->grad.data()[i];
      const double err = std::abs(an - cd) / std::max({std::abs(an), std::abs(cd), 1e-12});
      worst = std::max(worst, err);
    }
  }
  zero_grads(params);
  return worst;
}

}  // namespace slac
