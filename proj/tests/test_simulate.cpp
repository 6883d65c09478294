#include "swingid/model.hpp"
#include "swingid/simulate.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

using namespace swingid;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double delta_at_end(const PowerSystemModel& m, double step) {
  IntegrateOptions opt;
  opt.max_step = step;
  return integrate(m, SystemState::zero(m), 2.0, 0.1, opt).delta(20, 1);
}

std::string to_csv(const MeasurementSet& data) {
  std::ostringstream out;
  write_csv(out, data);
  return out.str();
}

}  // namespace

TEST_CASE("zero injection stays at rest") {
  const auto a = preset(SystemId::A).with_injection(VectorXd::Zero(4));
  const auto traj = integrate(a, SystemState::zero(a), 2.0, 0.01);
  CHECK(traj.size() == 201);
  CHECK(traj.times.front() == 0.0);
  CHECK(traj.delta.cwiseAbs().maxCoeff() == 0.0);
  CHECK(traj.omega.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("integrate validates its arguments") {
  const auto a = preset(SystemId::A);
  CHECK_THROWS(integrate(a, SystemState::zero(a), -1.0, 0.01));
  CHECK_THROWS(integrate(a, SystemState::zero(a), 2.0, 0.03));
  // Load bus 4 of system A: 0.25 / (1.2 + 0.8 + 0.1) / 20 < 0.01.
  CHECK(internal_step(a, 0.01) == 0.005);
  const double hb = internal_step(preset(SystemId::B), 0.01);
  CHECK(hb <= 0.02 / 20);
  CHECK(std::abs(0.01 / hb - std::round(0.01 / hb)) < 1e-9);
}

TEST_CASE("RK4 converges at fourth order under step halving") {
  const auto a = preset(SystemId::A);
  const double h0 = 0.025;
  double prev_diff = 0.0;
  std::vector<double> orders;
  double coarse = delta_at_end(a, h0);
  for (int i = 1; i <= 4; ++i) {
    const double fine = delta_at_end(a, h0 / std::pow(2.0, i));
    const double diff = std::abs(fine - coarse);
    if (i > 1) orders.push_back(std::log2(prev_diff / diff));
    prev_diff = diff;
    coarse = fine;
  }
  REQUIRE(orders.size() == 3);
  for (double p : orders) CHECK(p >= 3.7);
}

TEST_CASE("default step meets the halving accuracy contract") {
  const auto a = preset(SystemId::A);
  const auto ref = integrate(a, SystemState::zero(a), 2.0, 0.01);
  IntegrateOptions half;
  half.max_step = internal_step(a, 0.01) / 2;
  const auto fine = integrate(a, SystemState::zero(a), 2.0, 0.01, half);
  CHECK((ref.delta - fine.delta).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("system A angle of bus 2 at t = 2 s regression") {
  // Frozen from a Richardson-extrapolated step-halving sequence.
  const auto a = preset(SystemId::A);
  const auto traj = integrate(a, SystemState::zero(a), 2.0, 0.01);
  CHECK(std::abs(traj.delta(200, 1) - 0.0559401694882566) < 1e-9);
}

TEST_CASE("trajectory satisfies the swing equations at interior samples") {
  const auto a = preset(SystemId::A);
  const auto traj = integrate(a, SystemState::zero(a), 2.0, 0.001);
  const double h = 0.001;
  for (std::size_t i = 1; i + 1 < traj.size(); i += 50) {
    const auto r = static_cast<Eigen::Index>(i);
    const VectorXd d_delta = (traj.delta.row(r + 1) - traj.delta.row(r - 1)).transpose() / (2 * h);
    const VectorXd dd = (traj.delta.row(r + 1) - 2 * traj.delta.row(r) + traj.delta.row(r - 1)).transpose() / (h * h);
    const VectorXd res = residual(a, traj.delta.row(r).transpose(), d_delta, dd.head(2));
    CHECK(res.cwiseAbs().maxCoeff() < 1e-5);
    // Stored load rates come from the algebraic relation.
    CHECK((traj.omega.row(r).transpose() - d_delta).cwiseAbs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("damped systems come to rest") {
  for (auto id : {SystemId::A, SystemId::C}) {
    const auto m = preset(id);
    const auto traj = integrate(m, SystemState::zero(m), 200.0, 0.5);
    CHECK(traj.omega.bottomRows(1).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("noiseless full measurements reproduce the trajectory") {
  const auto a = preset(SystemId::A);
  const auto traj = integrate(a, SystemState::zero(a), 2.0, 0.01);
  const auto data = sample_measurements(traj, 0.01, {}, {});
  REQUIRE(data.size() == 200);
  CHECK(data.times.back() == traj.times[199]);
  CHECK(data.z == traj.delta.topRows(200));
  CHECK(data.z_dot == traj.omega.topRows(200));
  CHECK(data.available_count() == 1600);

  const auto coarse = sample_measurements(traj, 0.05, {}, {});
  CHECK(coarse.size() == 40);
  CHECK(coarse.z.row(3) == traj.delta.row(15));
  CHECK_THROWS(sample_measurements(traj, 0.015, {}, {}));
}

TEST_CASE("zero-level noise is a no-op") {
  const auto a = preset(SystemId::A);
  const auto traj = integrate(a, SystemState::zero(a), 2.0, 0.01);
  const auto clean = sample_measurements(traj, 0.01, {}, {});
  for (auto kind : {NoiseKind::Gaussian, NoiseKind::Uniform}) {
    const auto noisy = sample_measurements(traj, 0.01, {kind, 0.0, 17, false}, {});
    CHECK(noisy.z == clean.z);
    CHECK(noisy.z_dot == clean.z_dot);
  }
}

TEST_CASE("noise is multiplicative, bounded and seeded") {
  const auto a = preset(SystemId::A);
  const auto traj = integrate(a, SystemState::zero(a), 2.0, 0.01);
  const auto clean = sample_measurements(traj, 0.01, {}, {});
  const auto u = sample_measurements(traj, 0.01, {NoiseKind::Uniform, 0.05, 3, false}, {});
  CHECK(((u.z - clean.z).array().abs() <= 0.05 * clean.z.array().abs() + 1e-18).all());
  CHECK(u.z(0, 0) == clean.z(0, 0));  // zero true value receives zero noise

  const auto g1 = sample_measurements(traj, 0.01, {NoiseKind::Gaussian, 0.02, 11, false}, {});
  const auto g2 = sample_measurements(traj, 0.01, {NoiseKind::Gaussian, 0.02, 11, false}, {});
  const auto g3 = sample_measurements(traj, 0.01, {NoiseKind::Gaussian, 0.02, 12, false}, {});
  CHECK(to_csv(g1) == to_csv(g2));
  CHECK(to_csv(g1) != to_csv(g3));

  // Relative deviations have roughly the requested spread.
  const Eigen::ArrayXXd rel = ((g1.z - clean.z).array() / clean.z.array()).bottomRows(150);
  const double sd = std::sqrt(rel.square().mean());
  CHECK(sd > 0.018);
  CHECK(sd < 0.022);
}

TEST_CASE("random-half mask keeps a binomial share of entries") {
  const auto a = preset(SystemId::A);
  const auto traj = integrate(a, SystemState::zero(a), 2.0, 0.01);
  MaskSpec spec;
  spec.scenario = MaskScenario::RandomHalf;
  spec.seed = 42;
  const auto data = sample_measurements(traj, 0.01, {}, spec);
  // Binomial(1600, 0.5): mean 800, sd 20, 99% interval about +-2.576 sd.
  const double n = static_cast<double>(data.available_count());
  CHECK(std::abs(n - 800.0) <= 2.576 * 20.0);
  for (Eigen::Index r = 0; r < data.z.rows(); ++r) {
    for (Eigen::Index k = 0; k < 4; ++k) {
      CHECK(data.angle_mask(r, k) == std::isfinite(data.z(r, k)));
      CHECK(data.rate_mask(r, k) == std::isfinite(data.z_dot(r, k)));
    }
  }
  CHECK(to_csv(data) == to_csv(sample_measurements(traj, 0.01, {}, spec)));
}

TEST_CASE("structured mask scenarios") {
  const auto a = preset(SystemId::A);
  const auto traj = integrate(a, SystemState::zero(a), 2.0, 0.01);
  MaskSpec spec;
  spec.scenario = MaskScenario::BusSubset;
  auto data = sample_measurements(traj, 0.01, {}, spec);
  CHECK(data.angle_mask.col(0).all());
  CHECK(!data.angle_mask.col(1).any());
  CHECK(data.rate_mask.col(2).all());
  CHECK(!data.rate_mask.col(3).any());

  spec.scenario = MaskScenario::AnglesOnly;
  data = sample_measurements(traj, 0.01, {}, spec);
  CHECK(data.angle_mask.all());
  CHECK(!data.rate_mask.any());

  spec.scenario = MaskScenario::FrequenciesOnly;
  data = sample_measurements(traj, 0.01, {}, spec);
  CHECK(!data.angle_mask.any());
  CHECK(data.rate_mask.all());

  CHECK(parse_mask_scenario("A") == MaskScenario::RandomHalf);
  CHECK(parse_mask_scenario("angles-only") == MaskScenario::AnglesOnly);
  CHECK_THROWS(parse_mask_scenario("E"));
}

TEST_CASE("measurement CSV round-trips exactly, including missing entries") {
  const auto a = preset(SystemId::A);
  const auto traj = integrate(a, SystemState::zero(a), 2.0, 0.01);
  MaskSpec spec;
  spec.scenario = MaskScenario::RandomHalf;
  const auto data = sample_measurements(traj, 0.01, {NoiseKind::Gaussian, 0.01, 1, false}, spec);
  const std::string text = to_csv(data);
  CHECK(text.rfind("t,delta_1,delta_2,delta_3,delta_4,omega_1,omega_2,omega_3,omega_4\n", 0) == 0);
  std::istringstream in(text);
  const auto back = read_measurements_csv(in);
  CHECK(to_csv(back) == text);
  CHECK(back.times == data.times);
  CHECK((back.angle_mask == data.angle_mask).all());

  std::ostringstream tout;
  write_csv(tout, traj);
  std::istringstream tin(tout.str());
  const auto tback = read_trajectory_csv(tin);
  CHECK(tback.delta == traj.delta);
  CHECK(tback.omega == traj.omega);
}

TEST_CASE("truncation keeps samples inside the window") {
  const auto a = preset(SystemId::A);
  const auto data = sample_measurements(integrate(a, SystemState::zero(a), 2.0, 0.01), 0.01, {}, {});
  CHECK(data.truncated(0.5).size() == 50);
  CHECK(data.truncated(0.2).size() == 20);
}
