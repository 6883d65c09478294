#pragma once

#include "swingid/model.hpp"
#include "swingid/simulate.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace swingid {

class UkfError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// How the network couples bus angles. `Linear` replaces sin(x) by x and
/// exists so the filter can be checked against a closed-form Kalman filter.
enum class CouplingLaw { Sine, Linear };

struct UkfConfig {
  double alpha = 0.1;
  double beta = 2.0;
  double kappa = 0.0;
  /// Process noise added per prediction step.
  double q_dynamics = 1e-6;
  double q_parameters = 1e-8;
  /// Relative measurement noise; R = max((level * |z|)^2, r_floor) per channel.
  double noise_level = 0.0;
  double r_floor = 1e-6;
  /// Forward Euler sub-steps per measurement interval.
  int substeps = 10;
  /// Initial guesses; empty vectors fall back to `initial_parameter`.
  Eigen::VectorXd initial_inertia;
  Eigen::VectorXd initial_damping;
  double initial_parameter = 0.1;
  /// Initial variances of the state block and of each parameter.
  double initial_state_variance = 1e-6;
  double initial_parameter_variance = 0.01;
  CouplingLaw coupling = CouplingLaw::Sine;

  void validate() const;
};

/// Sigma-point weights for an n-dimensional state.
struct SigmaWeights {
  Eigen::VectorXd mean;
  Eigen::VectorXd covariance;
  double spread = 0.0;  // sqrt(n + lambda)

  static SigmaWeights of(Eigen::Index n, const UkfConfig& cfg);
};

/// Mean and covariance of the augmented state [delta, omega, m, d].
struct Gaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Joint state and parameter filter for one model structure.
class UnscentedFilter {
 public:
  UnscentedFilter(const PowerSystemModel& structure, UkfConfig cfg);

  /// Augmented dimension n_buses + 2 * n_generators + n_buses.
  Eigen::Index dimension() const;
  const SigmaWeights& weights() const { return weights_; }

  /// 2n + 1 sigma points as columns.
  Eigen::MatrixXd sigma_points(const Gaussian& g);
  /// Forward Euler propagation of one augmented state over `dt`.
  Eigen::VectorXd propagate(const Eigen::VectorXd& x, double dt) const;
  /// Angle rate of every bus implied by an augmented state.
  Eigen::VectorXd rates(const Eigen::VectorXd& x) const;

  Gaussian predict(const Gaussian& prior, double dt);
  /// `angle` and `rate` are per-bus values; entries with a false mask are skipped.
  Gaussian update(const Gaussian& predicted, const Eigen::VectorXd& angle, const Eigen::VectorXd& rate,
                  const Mask& angle_mask, const Mask& rate_mask);

  /// Covariance repairs performed so far (symmetric projection plus jitter).
  std::size_t repairs() const { return repairs_; }
  /// Gaussian negative log-likelihood and squared norm of the last innovation.
  double last_innovation_nll() const { return last_nll_; }
  double last_innovation_sse() const { return last_sse_; }

 private:
  Eigen::MatrixXd square_root(Eigen::MatrixXd& cov);
  Eigen::VectorXd coupling(const Eigen::VectorXd& delta) const;

  PowerSystemModel structure_;
  UkfConfig cfg_;
  SigmaWeights weights_;
  std::size_t repairs_ = 0;
  double last_nll_ = 0.0;
  double last_sse_ = 0.0;
};

/// Starting mean and covariance for a measurement set: measured first angles
/// (zero where missing), zero frequencies, configured parameter guesses.
Gaussian initial_belief(const PowerSystemModel& structure, const MeasurementSet& data, const UkfConfig& cfg);

struct UkfStep {
  double t = 0.0;
  Eigen::VectorXd inertia;
  Eigen::VectorXd damping;
  double trace = 0.0;
};

struct UkfReport {
  std::vector<UkfStep> steps;
  Gaussian final_belief;
  /// Final parameter variance above its initial value for some parameter.
  bool converged = true;
  std::vector<std::string> diagnostics;
  std::size_t negative_parameter_steps = 0;
  std::size_t repairs = 0;
  /// Summed over all updates; used to rank configurations without ground truth.
  double innovation_nll = 0.0;
  double innovation_sse = 0.0;

  Eigen::VectorXd final_inertia() const { return steps.back().inertia; }
  Eigen::VectorXd final_damping() const { return steps.back().damping; }
};

/// Update on the first sample, then predict and update on every later one.
/// Errors carry the failing step index. `structure` provides topology and
/// injections; its inertia and damping are never read.
UkfReport replay(const MeasurementSet& data, const PowerSystemModel& structure, const UkfConfig& cfg);

}  // namespace swingid
