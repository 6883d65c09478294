#include "swingid/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace swingid {

void adam_step(Eigen::VectorXd& variables, AdamState& state, const Eigen::VectorXd& grads, double learning_rate) {
  if (grads.size() != variables.size() || state.first.size() != variables.size()) {
    throw std::invalid_argument("adam_step: moment, gradient and variable sizes differ");
  }
  const auto& o = state.options;
  ++state.steps;
  state.first = o.beta1 * state.first + (1.0 - o.beta1) * grads;
  state.second = o.beta2 * state.second + (1.0 - o.beta2) * grads.cwiseAbs2();
  const double t = static_cast<double>(state.steps);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  variables.array() -=
      learning_rate * (state.first.array() / c1) / ((state.second.array() / c2).sqrt() + o.epsilon);
}

}  // namespace swingid
