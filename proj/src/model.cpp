#include "swingid/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace swingid {

namespace {

void require(bool condition, const std::string& message) {
  if (!condition) throw ModelError(message);
}

bool is_connected(const Eigen::MatrixXd& a) {
  const auto n = a.rows();
  if (n == 0) return false;
  std::vector<bool> seen(n, false);
  std::vector<Eigen::Index> stack{0};
  seen[0] = true;
  while (!stack.empty()) {
    const auto k = stack.back();
    stack.pop_back();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!seen[j] && a(k, j) > 0.0) {
        seen[j] = true;
        stack.push_back(j);
      }
    }
  }
  return std::all_of(seen.begin(), seen.end(), [](bool s) { return s; });
}

}  // namespace

std::string to_string(BusKind kind) { return kind == BusKind::Generator ? "generator" : "load"; }

std::string to_string(SystemId id) {
  switch (id) {
    case SystemId::A: return "A";
    case SystemId::B: return "B";
    case SystemId::C: return "C";
  }
  return "?";
}

SystemId parse_system_id(const std::string& name) {
  if (name == "A" || name == "a") return SystemId::A;
  if (name == "B" || name == "b") return SystemId::B;
  if (name == "C" || name == "c") return SystemId::C;
  throw ModelError("unknown system preset '" + name + "'");
}

PowerSystemModel::PowerSystemModel(std::vector<BusKind> kinds, Eigen::VectorXd inertia,
                                   Eigen::VectorXd damping, Eigen::MatrixXd connectivity,
                                   Eigen::VectorXd injection)
    : kinds_(std::move(kinds)),
      inertia_(std::move(inertia)),
      damping_(std::move(damping)),
      connectivity_(std::move(connectivity)),
      injection_(std::move(injection)) {
  const auto n = static_cast<Eigen::Index>(kinds_.size());
  require(n > 0, "model needs at least one bus");
  generator_slot_.assign(kinds_.size(), -1);
  for (std::size_t k = 0; k < kinds_.size(); ++k) {
    if (kinds_[k] == BusKind::Generator) {
      generator_slot_[k] = static_cast<int>(generator_buses_.size());
      generator_buses_.push_back(k);
    }
  }
  const auto n_gen = static_cast<Eigen::Index>(generator_buses_.size());

  std::ostringstream msg;
  if (inertia_.size() != n_gen) {
    msg << "m has " << inertia_.size() << " entries, expected one per generator (" << n_gen << ")";
    throw ModelError(msg.str());
  }
  if (damping_.size() != n) {
    msg << "d has " << damping_.size() << " entries, expected " << n;
    throw ModelError(msg.str());
  }
  if (injection_.size() != n) {
    msg << "P has " << injection_.size() << " entries, expected " << n;
    throw ModelError(msg.str());
  }
  if (connectivity_.rows() != n || connectivity_.cols() != n) {
    msg << "a must be " << n << "x" << n;
    throw ModelError(msg.str());
  }
  require(inertia_.allFinite() && damping_.allFinite() && connectivity_.allFinite() && injection_.allFinite(),
          "model contains non-finite values");
  require((inertia_.array() > 0.0).all(), "m must be positive on every generator bus");
  require((damping_.array() > 0.0).all(), "d must be positive on every bus");
  for (Eigen::Index k = 0; k < n; ++k) {
    require(connectivity_(k, k) == 0.0, "a must have a zero diagonal");
    for (Eigen::Index j = 0; j < n; ++j) {
      require(connectivity_(k, j) >= 0.0, "a must be nonnegative");
      require(connectivity_(k, j) == connectivity_(j, k), "a must be symmetric");
    }
  }
  require(is_connected(connectivity_), "a must describe a connected network");
}

PowerSystemModel PowerSystemModel::with_injection(Eigen::VectorXd injection) const {
  return PowerSystemModel(kinds_, inertia_, damping_, connectivity_, std::move(injection));
}

PowerSystemModel PowerSystemModel::with_parameters(Eigen::VectorXd inertia, Eigen::VectorXd damping) const {
  return PowerSystemModel(kinds_, std::move(inertia), std::move(damping), connectivity_, injection_);
}

SystemState SystemState::zero(const PowerSystemModel& model) {
  return {Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.n_buses())),
          Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.n_generators()))};
}

PowerSystemModel preset(SystemId id) {
  struct Table {
    double m1, m2, d1, d2, d3, d4, a13, a14, a23, a24, a34;
  };
  Table t{};
  switch (id) {
    case SystemId::A: t = {0.3, 0.2, 0.15, 0.3, 0.25, 0.25, 0.5, 1.2, 1.4, 0.8, 0.1}; break;
    case SystemId::B: t = {0.02, 0.03, 0.01, 0.015, 0.02, 0.04, 0.5, 1.2, 1.0, 0.8, 0.1}; break;
    case SystemId::C: t = {5.2, 4.0, 3.8, 4.3, 10.5, 8.3, 2.5, 2.2, 2.0, 4.8, 0.7}; break;
  }
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(4, 4);
  auto link = [&a](int i, int j, double v) {
    a(i, j) = v;
    a(j, i) = v;
  };
  link(0, 2, t.a13);
  link(0, 3, t.a14);
  link(1, 2, t.a23);
  link(1, 3, t.a24);
  link(2, 3, t.a34);
  return PowerSystemModel({BusKind::Generator, BusKind::Generator, BusKind::Load, BusKind::Load},
                          Eigen::Vector2d(t.m1, t.m2), Eigen::Vector4d(t.d1, t.d2, t.d3, t.d4), a,
                          Eigen::Vector4d(0.1, 0.2, -0.1, -0.2));
}

Eigen::VectorXd coupling(const PowerSystemModel& model, const Eigen::VectorXd& delta) {
  const auto n = static_cast<Eigen::Index>(model.n_buses());
  if (delta.size() != n) throw ModelError("delta dimension does not match the model");
  const auto& a = model.connectivity();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (a(k, j) != 0.0) out(k) += a(k, j) * std::sin(delta(k) - delta(j));
    }
  }
  return out;
}

Eigen::VectorXd residual(const PowerSystemModel& model, const Eigen::VectorXd& delta,
                         const Eigen::VectorXd& d_delta, const Eigen::VectorXd& dd_delta) {
  const auto n = static_cast<Eigen::Index>(model.n_buses());
  if (d_delta.size() != n || dd_delta.size() != static_cast<Eigen::Index>(model.n_generators())) {
    throw ModelError("residual: derivative dimensions do not match the model");
  }
  Eigen::VectorXd r = model.damping().cwiseProduct(d_delta) + coupling(model, delta) - model.injection();
  for (std::size_t g = 0; g < model.n_generators(); ++g) {
    const auto bus = static_cast<Eigen::Index>(model.generator_buses()[g]);
    r(bus) += model.inertia()(static_cast<Eigen::Index>(g)) * dd_delta(static_cast<Eigen::Index>(g));
  }
  return r;
}

Eigen::VectorXd bus_rates(const PowerSystemModel& model, const SystemState& state) {
  if (state.omega.size() != static_cast<Eigen::Index>(model.n_generators())) {
    throw ModelError("omega dimension does not match the generator count");
  }
  const Eigen::VectorXd net = model.injection() - coupling(model, state.delta);
  Eigen::VectorXd rates(net.size());
  for (std::size_t k = 0; k < model.n_buses(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    const int g = model.generator_slot(k);
    rates(i) = g >= 0 ? state.omega(g) : net(i) / model.damping()(i);
  }
  return rates;
}

SystemState vector_field(const PowerSystemModel& model, const SystemState& state) {
  if (state.omega.size() != static_cast<Eigen::Index>(model.n_generators())) {
    throw ModelError("omega dimension does not match the generator count");
  }
  const Eigen::VectorXd net = model.injection() - coupling(model, state.delta);
  SystemState rate;
  rate.delta.resize(net.size());
  rate.omega.resize(state.omega.size());
  for (std::size_t k = 0; k < model.n_buses(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    const int g = model.generator_slot(k);
    if (g >= 0) {
      const double m = model.inertia()(g);
      if (m == 0.0) throw ModelError("zero inertia on a generator bus");
      rate.delta(i) = state.omega(g);
      rate.omega(g) = (net(i) - model.damping()(i) * state.omega(g)) / m;
    } else {
      rate.delta(i) = net(i) / model.damping()(i);
    }
  }
  return rate;
}

Eigen::VectorXd solve_equilibrium(const PowerSystemModel& model, const Eigen::VectorXd& initial_guess,
                                  const EquilibriumOptions& options) {
  const auto n = static_cast<Eigen::Index>(model.n_buses());
  if (initial_guess.size() != n) throw ModelError("equilibrium guess dimension does not match the model");
  const double total = model.injection().sum();
  if (std::abs(total) > 1e-12) {
    std::ostringstream msg;
    msg << "no zero-frequency steady state: sum of injections is " << total;
    throw ModelError(msg.str());
  }

  const auto& a = model.connectivity();
  auto mismatch = [&](const Eigen::VectorXd& delta) {
    return Eigen::VectorXd(coupling(model, delta) - model.injection());
  };

  Eigen::VectorXd delta = initial_guess;
  Eigen::VectorXd f = mismatch(delta);
  double norm = f.lpNorm<Eigen::Infinity>();
  if (n == 1) return delta;

  for (int iter = 0; iter < options.max_iterations && norm >= options.tolerance; ++iter) {
    // Jacobian of the coupling term; row/column 0 dropped to pin the reference.
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == k || a(k, j) == 0.0) continue;
        const double c = a(k, j) * std::cos(delta(k) - delta(j));
        jac(k, k) += c;
        jac(k, j) -= c;
      }
    }
    const Eigen::VectorXd step =
        jac.bottomRightCorner(n - 1, n - 1).fullPivLu().solve(-f.tail(n - 1));

    double scale = 1.0;
    for (int halving = 0; halving < 30; ++halving, scale *= 0.5) {
      Eigen::VectorXd trial = delta;
      trial.tail(n - 1) += scale * step;
      const Eigen::VectorXd trial_f = mismatch(trial);
      const double trial_norm = trial_f.lpNorm<Eigen::Infinity>();
      if (trial_norm < norm || halving == 29) {
        delta = trial;
        f = trial_f;
        norm = trial_norm;
        break;
      }
    }
  }
  if (!(norm < options.tolerance)) {
    std::ostringstream msg;
    msg << "equilibrium solver did not converge; final residual max-norm " << norm;
    throw ModelError(msg.str());
  }
  return delta;
}

}  // namespace swingid
