#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace swingid {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Second-order (generator) or first-order frequency-dependent (load) bus.
enum class BusKind { Generator, Load };

enum class SystemId { A, B, C };

std::string to_string(BusKind kind);
std::string to_string(SystemId id);
SystemId parse_system_id(const std::string& name);

/// Immutable multi-bus swing-equation model.
///
/// Inertia is stored only for generator buses, in bus order. Connectivity
/// holds a_kj = B_kj V_k V_j and must be symmetric, nonnegative, zero on the
/// diagonal and describe a connected graph.
class PowerSystemModel {
 public:
  PowerSystemModel(std::vector<BusKind> kinds, Eigen::VectorXd inertia, Eigen::VectorXd damping,
                   Eigen::MatrixXd connectivity, Eigen::VectorXd injection);

  std::size_t n_buses() const { return kinds_.size(); }
  std::size_t n_generators() const { return generator_buses_.size(); }

  const std::vector<BusKind>& kinds() const { return kinds_; }
  BusKind kind(std::size_t bus) const { return kinds_.at(bus); }
  bool is_generator(std::size_t bus) const { return kinds_.at(bus) == BusKind::Generator; }

  /// Bus indices of the generators, ascending.
  const std::vector<std::size_t>& generator_buses() const { return generator_buses_; }
  /// Position of `bus` within the generator list, or -1 for a load bus.
  int generator_slot(std::size_t bus) const { return generator_slot_.at(bus); }

  const Eigen::VectorXd& inertia() const { return inertia_; }
  const Eigen::VectorXd& damping() const { return damping_; }
  const Eigen::MatrixXd& connectivity() const { return connectivity_; }
  const Eigen::VectorXd& injection() const { return injection_; }

  PowerSystemModel with_injection(Eigen::VectorXd injection) const;
  PowerSystemModel with_parameters(Eigen::VectorXd inertia, Eigen::VectorXd damping) const;

 private:
  std::vector<BusKind> kinds_;
  Eigen::VectorXd inertia_;
  Eigen::VectorXd damping_;
  Eigen::MatrixXd connectivity_;
  Eigen::VectorXd injection_;
  std::vector<std::size_t> generator_buses_;
  std::vector<int> generator_slot_;
};

/// delta: angle per bus [rad]; omega: frequency deviation per generator [rad/s].
struct SystemState {
  Eigen::VectorXd delta;
  Eigen::VectorXd omega;

  static SystemState zero(const PowerSystemModel& model);
};

/// The 4-bus, 2-generator test network with one of the three parameter sets.
PowerSystemModel preset(SystemId id);

/// Electrical power leaving each bus: sum_j a_kj sin(delta_k - delta_j).
Eigen::VectorXd coupling(const PowerSystemModel& model, const Eigen::VectorXd& delta);

/// Swing-equation residual per bus. `dd_delta` holds accelerations of the
/// generator buses only.
Eigen::VectorXd residual(const PowerSystemModel& model, const Eigen::VectorXd& delta,
                         const Eigen::VectorXd& d_delta, const Eigen::VectorXd& dd_delta);

/// Time derivative of the explicit first-order form.
SystemState vector_field(const PowerSystemModel& model, const SystemState& state);

/// Angle rate of every bus: omega on generators, the algebraic load relation
/// on loads.
Eigen::VectorXd bus_rates(const PowerSystemModel& model, const SystemState& state);

struct EquilibriumOptions {
  double tolerance = 1e-10;
  int max_iterations = 100;
};

/// Steady state angles with bus 0 pinned to `initial_guess[0]`.
///
/// Damped Newton on the residual with zero rates. Requires sum(P) = 0.
Eigen::VectorXd solve_equilibrium(const PowerSystemModel& model, const Eigen::VectorXd& initial_guess,
                                  const EquilibriumOptions& options = {});

}  // namespace swingid
