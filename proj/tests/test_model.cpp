#include "swingid/model.hpp"
#include "swingid/simulate.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

using namespace swingid;
using Catch::Approx;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

}  // namespace

TEST_CASE("presets match the published table") {
  const auto a = preset(SystemId::A);
  CHECK(a.inertia() == vec({0.3, 0.2}));
  CHECK(a.damping() == vec({0.15, 0.3, 0.25, 0.25}));
  CHECK(a.injection() == vec({0.1, 0.2, -0.1, -0.2}));
  MatrixXd conn = MatrixXd::Zero(4, 4);
  conn(0, 2) = 0.5;
  conn(0, 3) = 1.2;
  conn(1, 2) = 1.4;
  conn(1, 3) = 0.8;
  conn(2, 3) = 0.1;
  conn = MatrixXd(conn + conn.transpose());
  CHECK(a.connectivity() == conn);
  CHECK(a.kinds() == std::vector<BusKind>{BusKind::Generator, BusKind::Generator, BusKind::Load, BusKind::Load});

  const auto b = preset(SystemId::B);
  CHECK(b.inertia() == vec({0.02, 0.03}));
  CHECK(b.damping() == vec({0.01, 0.015, 0.02, 0.04}));

  const auto c = preset(SystemId::C);
  CHECK(c.inertia() == vec({5.2, 4.0}));
  CHECK(c.connectivity()(2, 3) == 0.7);
  CHECK(c.connectivity()(3, 2) == 0.7);

  for (auto id : {SystemId::A, SystemId::B, SystemId::C}) {
    const auto m = preset(id);
    CHECK(m.connectivity() == m.connectivity().transpose());
  }
}

TEST_CASE("system ids parse case-insensitively") {
  CHECK(parse_system_id("a") == SystemId::A);
  CHECK(parse_system_id("C") == SystemId::C);
  CHECK_THROWS(parse_system_id("D"));
}

TEST_CASE("model construction validates its invariants") {
  const auto a = preset(SystemId::A);
  MatrixXd asym = a.connectivity();
  asym(0, 2) = 0.6;
  CHECK_THROWS_AS(PowerSystemModel(a.kinds(), a.inertia(), a.damping(), asym, a.injection()), ModelError);
  MatrixXd diag = a.connectivity();
  diag(1, 1) = 0.3;
  CHECK_THROWS_AS(PowerSystemModel(a.kinds(), a.inertia(), a.damping(), diag, a.injection()), ModelError);
  MatrixXd split = MatrixXd::Zero(4, 4);
  split(0, 1) = split(1, 0) = 1.0;
  split(2, 3) = split(3, 2) = 1.0;
  CHECK_THROWS_AS(PowerSystemModel(a.kinds(), a.inertia(), a.damping(), split, a.injection()), ModelError);
  CHECK_THROWS_AS(PowerSystemModel(a.kinds(), vec({0.3, 0.0}), a.damping(), a.connectivity(), a.injection()), ModelError);
  CHECK_THROWS_AS(PowerSystemModel(a.kinds(), a.inertia(), vec({0.1, 0.1, -0.1, 0.1}), a.connectivity(), a.injection()),
                  ModelError);
  CHECK_THROWS_AS(PowerSystemModel(a.kinds(), vec({0.3}), a.damping(), a.connectivity(), a.injection()), ModelError);
}

TEST_CASE("residual examples") {
  const auto a = preset(SystemId::A);
  const VectorXd r0 = residual(a, VectorXd::Zero(4), VectorXd::Zero(4), VectorXd::Zero(2));
  CHECK((r0 - vec({-0.1, -0.2, 0.1, 0.2})).cwiseAbs().maxCoeff() < 1e-15);

  const VectorXd r1 = residual(a, vec({0.1, 0, 0, 0}), VectorXd::Zero(4), VectorXd::Zero(2));
  CHECK(r1(0) == Approx(0.5 * std::sin(0.1) + 1.2 * std::sin(0.1) - 0.1).epsilon(1e-14));

  CHECK_THROWS(residual(a, VectorXd::Zero(3), VectorXd::Zero(4), VectorXd::Zero(2)));
  CHECK_THROWS(residual(a, VectorXd::Zero(4), VectorXd::Zero(4), VectorXd::Zero(4)));
}

TEST_CASE("vector field examples") {
  const auto a = preset(SystemId::A);
  const SystemState d = vector_field(a, SystemState::zero(a));
  CHECK(d.delta(0) == 0.0);
  CHECK(d.delta(1) == 0.0);
  CHECK(d.delta(2) == Approx(-0.4));
  CHECK(d.delta(3) == Approx(-0.8));

  const auto b = preset(SystemId::B);
  CHECK(vector_field(b, SystemState::zero(b)).omega(0) == Approx(5.0));

  CHECK_THROWS(vector_field(a, SystemState{VectorXd::Zero(4), VectorXd::Zero(3)}));
}

TEST_CASE("vector field substituted into the residual vanishes") {
  // Generator acceleration is omega-dot; the residual needs no load accelerations.
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto id : {SystemId::A, SystemId::B, SystemId::C}) {
    const auto model = preset(id);
    for (int trial = 0; trial < 50; ++trial) {
      SystemState s{VectorXd::NullaryExpr(4, [&] { return u(rng); }), VectorXd::NullaryExpr(2, [&] { return u(rng); })};
      const SystemState rate = vector_field(model, s);
      const VectorXd r = residual(model, s.delta, rate.delta, rate.omega);
      CHECK(r.cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("equilibrium of the zero-injection system is flat") {
  const auto a = preset(SystemId::A).with_injection(VectorXd::Zero(4));
  CHECK(solve_equilibrium(a, VectorXd::Zero(4)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("equilibrium solver meets the residual tolerance and the long-run oracle") {
  for (auto id : {SystemId::A, SystemId::C}) {
    const auto model = preset(id);
    const VectorXd eq = solve_equilibrium(model, VectorXd::Zero(4));
    CHECK(eq(0) == 0.0);
    CHECK(residual(model, eq, VectorXd::Zero(4), VectorXd::Zero(2)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(vector_field(model, SystemState{eq, VectorXd::Zero(2)}).delta.cwiseAbs().maxCoeff() < 1e-10);

    // The simulation keeps its own angle reference, so compare differences.
    const auto traj = integrate(model, SystemState::zero(model), 200.0, 0.1);
    const VectorXd last = traj.delta.bottomRows(1).transpose();
    const VectorXd aligned = last.array() - last(0);
    CHECK((aligned - eq).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(traj.omega.bottomRows(1).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("equilibrium solver rejects unbalanced injections") {
  const auto a = preset(SystemId::A).with_injection(vec({0.1, 0.2, -0.1, 0.0}));
  CHECK_THROWS_AS(solve_equilibrium(a, VectorXd::Zero(4)), ModelError);
}

TEST_CASE("equilibrium solver reports non-convergence") {
  // Injections beyond the network's transfer capacity have no steady state.
  const auto a = preset(SystemId::A).with_injection(vec({5.0, 5.0, -5.0, -5.0}));
  CHECK_THROWS_AS(solve_equilibrium(a, VectorXd::Zero(4)), ModelError);
}
