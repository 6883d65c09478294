#pragma once

#include <Eigen/Dense>

#include <cstdint>

namespace swingid {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First and second moment estimates plus the step counter.
struct AdamState {
  Eigen::VectorXd first;
  Eigen::VectorXd second;
  std::int64_t steps = 0;
  AdamOptions options;

  explicit AdamState(Eigen::Index size, AdamOptions opts = {})
      : first(Eigen::VectorXd::Zero(size)), second(Eigen::VectorXd::Zero(size)), options(opts) {}
};

/// One bias-corrected Adam update of `variables` in place.
void adam_step(Eigen::VectorXd& variables, AdamState& state, const Eigen::VectorXd& grads, double learning_rate);

}  // namespace swingid
