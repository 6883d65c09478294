#pragma once

#include "swingid/model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace swingid {

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Densely sampled solution. Rows are time samples, columns buses. `omega`
/// holds the angle rate of every bus (load rates from the algebraic relation).
struct Trajectory {
  std::vector<double> times;
  Eigen::MatrixXd delta;
  Eigen::MatrixXd omega;

  std::size_t size() const { return times.size(); }
  std::size_t n_buses() const { return static_cast<std::size_t>(delta.cols()); }
  /// Row of the sample at time `t`; throws if `t` is not on the grid.
  std::size_t index_of(double t) const;
};

struct IntegrateOptions {
  /// Upper bound on the RK4 step. Zero selects min(output_step, m_min / 20).
  double max_step = 0.0;
};

/// Fixed-step classical RK4 with output every `output_step`.
Trajectory integrate(const PowerSystemModel& model, const SystemState& initial, double horizon,
                     double output_step, const IntegrateOptions& options = {});

/// RK4 step actually used by `integrate` for the given settings.
double internal_step(const PowerSystemModel& model, double output_step, const IntegrateOptions& options = {});

enum class NoiseKind { None, Gaussian, Uniform };

std::string to_string(NoiseKind kind);
NoiseKind parse_noise_kind(const std::string& name);

struct NoiseSpec {
  NoiseKind kind = NoiseKind::None;
  /// Fraction of the measured value, e.g. 0.05.
  double level = 0.0;
  std::uint64_t seed = 0;
  /// Scale by 1 instead of |value|.
  bool additive = false;
};

enum class MaskScenario { Full, RandomHalf, BusSubset, AnglesOnly, FrequenciesOnly };

std::string to_string(MaskScenario scenario);
MaskScenario parse_mask_scenario(const std::string& name);

struct MaskSpec {
  MaskScenario scenario = MaskScenario::Full;
  /// Zero-based buses kept by BusSubset.
  std::vector<std::size_t> buses{0, 2};
  double keep_probability = 0.5;
  std::uint64_t seed = 0;
};

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Noisy PMU-style samples. Unavailable entries hold NaN and must not be read.
struct MeasurementSet {
  std::vector<double> times;
  Eigen::MatrixXd z;
  Eigen::MatrixXd z_dot;
  Mask angle_mask;
  Mask rate_mask;

  std::size_t size() const { return times.size(); }
  std::size_t n_buses() const { return static_cast<std::size_t>(z.cols()); }
  std::size_t available_count() const;
  /// Samples with t < window.
  MeasurementSet truncated(double window) const;
};

/// Picks every sample on a `cadence` grid starting at t = 0 and ending
/// before the last trajectory time, then applies noise and the mask.
MeasurementSet sample_measurements(const Trajectory& traj, double cadence, const NoiseSpec& noise,
                                   const MaskSpec& mask);

void write_csv(std::ostream& out, const Trajectory& traj);
void write_csv(std::ostream& out, const MeasurementSet& data);
/// Reads either CSV. Empty fields become unavailable entries.
MeasurementSet read_measurements_csv(std::istream& in);
Trajectory read_trajectory_csv(std::istream& in);

}  // namespace swingid
