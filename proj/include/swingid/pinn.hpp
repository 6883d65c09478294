#pragma once

#include "swingid/autodiff/tape.hpp"
#include "swingid/model.hpp"
#include "swingid/simulate.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace swingid {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NetworkConfig {
  std::vector<int> hidden{30, 30};
  /// Network input is time_scale * t.
  double time_scale = 1.0;
  /// Multiply output k by a per-bus amplitude taken from the data, so the
  /// raw network works at order one even when angles are small.
  bool output_scaling = false;

  static NetworkConfig standard() { return {}; }
  /// Smaller network used for the slow system.
  static NetworkConfig reduced() { return {{10, 10}, 1.0, false}; }
  void validate() const;
};

/// The part of the model treated as known during estimation.
struct KnownStructure {
  std::vector<BusKind> kinds;
  Eigen::MatrixXd connectivity;
  Eigen::VectorXd injection;

  static KnownStructure of(const PowerSystemModel& model);
  std::size_t n_buses() const { return kinds.size(); }
  std::size_t n_generators() const;
};

double softplus(double x);
double inverse_softplus(double y);

/// Fully connected tanh network u(t) with one output per bus, plus the
/// trainable inertia and damping estimates (softplus of free variables).
class PinnEstimator {
 public:
  PinnEstimator(KnownStructure structure, std::vector<Eigen::MatrixXd> weights, std::vector<Eigen::VectorXd> biases,
                Eigen::VectorXd inertia_free, Eigen::VectorXd damping_free, double time_scale = 1.0,
                Eigen::VectorXd output_scale = {});

  /// Xavier-uniform weights, zero biases, parameters at `initial_parameter`.
  /// `output_scale` is used only when cfg.output_scaling is set.
  static PinnEstimator initialize(const KnownStructure& structure, const NetworkConfig& cfg, std::uint64_t seed,
                                  double initial_parameter = 0.1, const Eigen::VectorXd& output_scale = {});

  struct Output {
    Eigen::VectorXd u;
    Eigen::VectorXd u_dot;
    Eigen::VectorXd u_ddot;
  };

  /// Network value and its first two time derivatives at `t`.
  Output forward(double t) const;

  Eigen::VectorXd inertia() const;
  Eigen::VectorXd damping() const;

  /// All trainable variables, ordered W1, b1, ..., W_out, b_out, m_free, d_free.
  Eigen::VectorXd pack() const;
  void unpack(const Eigen::VectorXd& theta);
  Eigen::Index variable_count() const;

  const KnownStructure& structure() const { return structure_; }
  const std::vector<Eigen::MatrixXd>& weights() const { return weights_; }
  const std::vector<Eigen::VectorXd>& biases() const { return biases_; }
  const Eigen::VectorXd& inertia_free() const { return inertia_free_; }
  const Eigen::VectorXd& damping_free() const { return damping_free_; }
  double time_scale() const { return time_scale_; }
  /// Fixed per-bus output multipliers (all ones when scaling is off).
  const Eigen::VectorXd& output_scale() const { return output_scale_; }
  std::vector<int> layer_sizes() const;

 private:
  KnownStructure structure_;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
  Eigen::VectorXd inertia_free_;
  Eigen::VectorXd damping_free_;
  double time_scale_;
  Eigen::VectorXd output_scale_;
};

/// Per-bus amplitude of the measured angles, falling back to rate * window
/// for buses with no angle samples and to the median of the other buses for
/// buses with no samples at all. Never below 1e-6.
Eigen::VectorXd output_amplitudes(const MeasurementSet& data);

/// Mean over samples of the masked squared angle and rate errors.
double measurement_loss(const PinnEstimator& est, const MeasurementSet& data);
/// Mean over collocation points of the summed squared swing residuals.
double physics_loss(const PinnEstimator& est, const std::vector<double>& collocation_times);

/// One mini-batch worth of loss inputs.
struct LossBatch {
  std::vector<std::size_t> measurement_rows;
  std::vector<double> collocation_times;
};

struct LossEvaluation {
  double measurement = 0.0;
  double physics = 0.0;
  double total = 0.0;
  /// d(total)/d(pack()); empty unless requested.
  Eigen::VectorXd gradient;
};

/// L_z + physics_weight * L_c over a batch, recorded on a tape. Each term is
/// averaged over the batch members of its kind and absent when it has none.
LossEvaluation evaluate_loss(const PinnEstimator& est, const MeasurementSet& data, const LossBatch& batch,
                             double physics_weight, bool with_gradient);

struct TrainingSchedule {
  std::vector<std::size_t> batch_sizes{200, 400, 800, 2000, 4000};
  std::vector<std::size_t> epochs_per_stage{100, 200, 400, 1000, 4000};
  std::size_t collocation_per_measurement = 20;
  double learning_rate = 1e-3;
  std::size_t restart_count = 20;
  std::uint64_t seed = 0;
  double physics_weight = 1.0;
  double initial_parameter = 0.1;
  /// Worker threads for restarts; 0 uses the hardware concurrency.
  std::size_t threads = 0;

  static TrainingSchedule standard() { return {}; }
  /// Shortened schedule tuned for system A.
  static TrainingSchedule fast_a();
  std::size_t total_epochs() const;
  void validate() const;
};

struct LossRecord {
  std::size_t epoch = 0;
  double measurement = 0.0;
  double physics = 0.0;
};

struct RestartResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string failure;
  Eigen::VectorXd inertia;
  Eigen::VectorXd damping;
  std::vector<LossRecord> losses;
  /// Per epoch [m_hat..., d_hat...] after the epoch's last step.
  std::vector<Eigen::VectorXd> parameter_trace;
  std::optional<PinnEstimator> estimator;
};

struct EstimationReport {
  std::vector<RestartResult> restarts;
  double wall_seconds = 0.0;

  /// |estimate - truth| / truth per restart (rows) and parameter (columns,
  /// m then d). Failed restarts give NaN rows.
  Eigen::MatrixXd relative_errors(const Eigen::VectorXd& true_inertia, const Eigen::VectorXd& true_damping) const;
};

/// `N_c` equally spaced points covering [0, window].
std::vector<double> collocation_grid(double window, std::size_t count);

/// Called after every epoch of every restart. Must be safe to call
/// concurrently for different restarts.
using EpochObserver = std::function<void(std::size_t restart, std::size_t epoch, const PinnEstimator&)>;

/// Trains `restart_count` independent estimators.
EstimationReport train(const KnownStructure& structure, const MeasurementSet& data, const NetworkConfig& cfg,
                       const TrainingSchedule& sched, const EpochObserver& observer = {});

/// Single restart with an explicit seed; throws TrainingError on a
/// non-finite loss.
RestartResult train_single(const KnownStructure& structure, const MeasurementSet& data, const NetworkConfig& cfg,
                           const TrainingSchedule& sched, std::uint64_t seed,
                           const std::function<void(std::size_t, const PinnEstimator&)>& on_epoch = {});

}  // namespace swingid
