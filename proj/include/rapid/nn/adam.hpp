#pragma once

#include <cmath>
#include <cstdint>

#include <Eigen/Core>

#include "rapid/core/error.hpp"
#include "rapid/nn/mlp.hpp"

namespace rapid::nn {

enum class Direction { minimize, maximize };

struct OptimizerState {
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
  std::int64_t step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t skipped = 0;  // non-finite gradients rejected

  static OptimizerState for_params(Eigen::Index n, double lr) {
    OptimizerState s;
    s.first_moment = Eigen::VectorXd::Zero(n);
    s.second_moment = Eigen::VectorXd::Zero(n);
    s.learning_rate = lr;
    return s;
  }
};

/// One bias-corrected Adam update in place. Returns false (and counts it) when
/// the gradient is not finite; params are left untouched in that case.
inline bool adam_step(OptimizerState& state, ParamVector& params, const Eigen::VectorXd& grad,
                      Direction direction = Direction::minimize) {
  require(grad.size() == params.size() && state.first_moment.size() == params.size() &&
              state.second_moment.size() == params.size(),
          errc::kShape, "optimizer, parameter and gradient sizes differ");
  if (!grad.allFinite()) {
    ++state.skipped;
    return false;
  }
  const double sign = direction == Direction::minimize ? 1.0 : -1.0;
  ++state.step;
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * (sign * grad);
  state.second_moment = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  params.array() -= state.learning_rate * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + state.epsilon);
  return true;
}

}  // namespace rapid::nn
