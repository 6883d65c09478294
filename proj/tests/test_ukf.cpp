#include "swingid/ukf.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

using namespace swingid;
using Catch::Approx;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MeasurementSet clean_data(SystemId id) {
  const auto m = preset(id);
  return sample_measurements(integrate(m, SystemState::zero(m), 2.0, 0.01), 0.01, {}, {});
}

MatrixXd random_spd(Eigen::Index n, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  const MatrixXd a = MatrixXd::NullaryExpr(n, n, [&] { return z(rng); });
  return scale * (a * a.transpose() / static_cast<double>(n) + 0.1 * MatrixXd::Identity(n, n));
}

// Closed-form Kalman filter for the linear-coupling model with known
// parameters. Dynamic state y = [delta, omega_gen].
struct LinearKalman {
  MatrixXd f;  // transition over one measurement interval
  VectorXd c;  // affine offset
  MatrixXd h;  // all bus angles then all bus rates
  VectorXd e;

  LinearKalman(const PowerSystemModel& m, double dt, int substeps) {
    const Eigen::Index n = 4, g = 2;
    const MatrixXd lap = MatrixXd(m.connectivity().rowwise().sum().asDiagonal()) - m.connectivity();
    MatrixXd a = MatrixXd::Zero(n + g, n + g);
    VectorXd b = VectorXd::Zero(n + g);
    h = MatrixXd::Zero(2 * n, n + g);
    e = VectorXd::Zero(2 * n);
    h.topLeftCorner(n, n).setIdentity();
    for (Eigen::Index k = 0; k < n; ++k) {
      const int slot = m.generator_slot(static_cast<std::size_t>(k));
      if (slot >= 0) {
        a(k, n + slot) = 1.0;
        a.row(n + slot).head(n) = -lap.row(k) / m.inertia()(slot);
        a(n + slot, n + slot) = -m.damping()(k) / m.inertia()(slot);
        b(n + slot) = m.injection()(k) / m.inertia()(slot);
        h(n + k, n + slot) = 1.0;
      } else {
        a.row(k).head(n) = -lap.row(k) / m.damping()(k);
        b(k) = m.injection()(k) / m.damping()(k);
        h.row(n + k).head(n) = -lap.row(k) / m.damping()(k);
        e(n + k) = m.injection()(k) / m.damping()(k);
      }
    }
    const double step = dt / substeps;
    const MatrixXd one = MatrixXd::Identity(n + g, n + g) + step * a;
    f = MatrixXd::Identity(n + g, n + g);
    c = VectorXd::Zero(n + g);
    for (int i = 0; i < substeps; ++i) {
      f = one * f;
      c = one * c + step * b;
    }
  }
};

}  // namespace

TEST_CASE("mean weights sum to one and covariance weights differ only by the prior term") {
  for (double alpha : {0.1, 0.5, 1.0}) {
    UkfConfig cfg;
    cfg.alpha = alpha;
    const auto w = SigmaWeights::of(12, cfg);
    CHECK(w.mean.size() == 25);
    CHECK(w.mean.sum() == Approx(1.0).epsilon(1e-12));
    CHECK(w.covariance.sum() - (1.0 - alpha * alpha + cfg.beta) == Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("sigma points recombine to the original mean and covariance") {
  const auto m = preset(SystemId::A);
  UnscentedFilter filter(m, UkfConfig{});
  REQUIRE(filter.dimension() == 12);
  Gaussian g{VectorXd::LinSpaced(12, 0.1, 1.2), random_spd(12, 4, 0.01)};
  const MatrixXd pts = filter.sigma_points(g);
  REQUIRE(pts.cols() == 25);
  const auto& w = filter.weights();
  const VectorXd mean = pts * w.mean;
  const MatrixXd dev = pts.colwise() - mean;
  const MatrixXd cov = dev * w.covariance.asDiagonal() * dev.transpose();
  CHECK((mean - g.mean).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((cov - g.cov).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("prediction from an equilibrium with true parameters does not drift") {
  const auto m = preset(SystemId::A);
  UkfConfig cfg;
  cfg.q_dynamics = 0.0;
  cfg.q_parameters = 0.0;
  UnscentedFilter filter(m, cfg);
  Gaussian g;
  g.mean = VectorXd::Zero(12);
  g.mean.head(4) = solve_equilibrium(m, VectorXd::Zero(4));
  g.mean.segment(6, 2) = m.inertia();
  g.mean.tail(4) = m.damping();
  g.cov = 1e-14 * MatrixXd::Identity(12, 12);
  for (int i = 0; i < 20; ++i) g = filter.predict(g, 0.01);
  CHECK((g.mean.head(4) - solve_equilibrium(m, VectorXd::Zero(4))).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(g.mean.segment(4, 2).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("with linear coupling the filter equals the closed-form Kalman filter") {
  const auto m = preset(SystemId::A);
  UkfConfig cfg;
  cfg.coupling = CouplingLaw::Linear;
  cfg.q_parameters = 0.0;
  cfg.q_dynamics = 1e-5;
  cfg.r_floor = 1e-4;
  UnscentedFilter filter(m, cfg);
  const LinearKalman kf(m, 0.01, cfg.substeps);

  Gaussian u;
  u.mean = VectorXd::Zero(12);
  u.mean.head(6) << 0.01, -0.02, 0.03, 0.0, 0.05, -0.01;
  u.mean.segment(6, 2) = m.inertia();
  u.mean.tail(4) = m.damping();
  u.cov = MatrixXd::Zero(12, 12);
  u.cov.topLeftCorner(6, 6) = random_spd(6, 9, 1e-3);
  VectorXd x = u.mean.head(6);
  MatrixXd p = u.cov.topLeftCorner(6, 6);

  std::mt19937_64 rng(1);
  std::normal_distribution<double> z(0.0, 0.01);
  const Mask all = Mask::Constant(4, 1, true);
  double worst = 0.0;
  for (int step = 0; step < 10; ++step) {
    u = filter.predict(u, 0.01);
    x = kf.f * x + kf.c;
    p = kf.f * p * kf.f.transpose() + 1e-5 * MatrixXd::Identity(6, 6);
    worst = std::max({worst, (u.mean.head(6) - x).cwiseAbs().maxCoeff(), (u.cov.topLeftCorner(6, 6) - p).cwiseAbs().maxCoeff()});

    const VectorXd meas = kf.h * x + kf.e + VectorXd::NullaryExpr(8, [&] { return z(rng); });
    u = filter.update(u, meas.head(4), meas.tail(4), all, all);
    const MatrixXd s = kf.h * p * kf.h.transpose() + 1e-4 * MatrixXd::Identity(8, 8);
    const MatrixXd gain = p * kf.h.transpose() * s.inverse();
    x = x + gain * (meas - kf.h * x - kf.e);
    p = p - gain * s * gain.transpose();
    worst = std::max({worst, (u.mean.head(6) - x).cwiseAbs().maxCoeff(), (u.cov.topLeftCorner(6, 6) - p).cwiseAbs().maxCoeff()});
    CHECK((u.mean.tail(6) - (VectorXd(6) << m.inertia(), m.damping()).finished()).cwiseAbs().maxCoeff() < 1e-12);
  }
  INFO("worst deviation " << worst);
  CHECK(worst < 1e-8);
}

TEST_CASE("uninformative measurements leave the prior unchanged") {
  const auto m = preset(SystemId::A);
  UkfConfig cfg;
  cfg.r_floor = 1e12;
  UnscentedFilter filter(m, cfg);
  const auto data = clean_data(SystemId::A);
  const Gaussian prior = filter.predict(initial_belief(m, data, cfg), 0.01);
  const Mask all = Mask::Constant(4, 1, true);
  const Gaussian post = filter.update(prior, data.z.row(1).transpose(), data.z_dot.row(1).transpose(), all, all);
  CHECK((post.mean - prior.mean).cwiseAbs().maxCoeff() <= 1e-6 * prior.mean.cwiseAbs().maxCoeff());
  CHECK((post.cov - prior.cov).cwiseAbs().maxCoeff() <= 1e-6 * prior.cov.cwiseAbs().maxCoeff());
}

TEST_CASE("exact angle measurements pin the angle estimates") {
  const auto m = preset(SystemId::A);
  UkfConfig cfg;
  cfg.r_floor = 1e-16;
  UnscentedFilter filter(m, cfg);
  const auto data = clean_data(SystemId::A);
  const Gaussian prior = filter.predict(initial_belief(m, data, cfg), 0.01);
  const Mask all = Mask::Constant(4, 1, true), none = Mask::Constant(4, 1, false);
  const Gaussian post = filter.update(prior, data.z.row(1).transpose(), data.z_dot.row(1).transpose(), all, none);
  CHECK((post.mean.head(4) - data.z.row(1).transpose()).cwiseAbs().maxCoeff() < 1e-6);
  CHECK_THROWS_AS(filter.update(prior, data.z.row(1).transpose(), data.z_dot.row(1).transpose(), none, none), UkfError);
}

TEST_CASE("replay output has one row per measurement and symmetric covariances") {
  const auto data = clean_data(SystemId::A);
  const auto rep = replay(data, preset(SystemId::A), UkfConfig{});
  REQUIRE(rep.steps.size() == data.size());
  CHECK(rep.steps.front().t == 0.0);
  CHECK(rep.steps.back().t == data.times.back());
  const MatrixXd& p = rep.final_belief.cov;
  CHECK((p - p.transpose()).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(std::isfinite(rep.innovation_nll));

  const auto again = replay(data, preset(SystemId::A), UkfConfig{});
  CHECK(again.final_belief.mean == rep.final_belief.mean);
  CHECK(again.steps.back().trace == rep.steps.back().trace);
}

TEST_CASE("replay recovers system C with small process noise") {
  UkfConfig cfg;
  cfg.initial_parameter = 3.0;
  cfg.initial_parameter_variance = 10.0;
  cfg.r_floor = 1e-8;
  cfg.q_dynamics = 1e-10;
  const auto c = preset(SystemId::C);
  const auto rep = replay(clean_data(SystemId::C), c, cfg);
  CHECK(rep.converged);
  const VectorXd err_m = (rep.final_inertia() - c.inertia()).cwiseQuotient(c.inertia()).cwiseAbs();
  const VectorXd err_d = (rep.final_damping() - c.damping()).cwiseQuotient(c.damping()).cwiseAbs();
  CHECK(err_m.maxCoeff() < 0.02);
  CHECK(err_d.maxCoeff() < 0.02);
}

TEST_CASE("replay on the fast system fails visibly with defaults") {
  const auto b = preset(SystemId::B);
  const auto rep = replay(clean_data(SystemId::B), b, UkfConfig{});
  const VectorXd err_m = (rep.final_inertia() - b.inertia()).cwiseQuotient(b.inertia()).cwiseAbs();
  CHECK((!rep.converged || err_m.maxCoeff() > 0.5));
  CHECK(rep.negative_parameter_steps > 0);
  CHECK(!rep.diagnostics.empty());
}

TEST_CASE("replay reports the failing step") {
  auto data = clean_data(SystemId::A);
  data.times[5] = data.times[4];
  try {
    replay(data, preset(SystemId::A), UkfConfig{});
    FAIL("expected an error");
  } catch (const UkfError& e) {
    CHECK(std::string(e.what()).find("step 5") != std::string::npos);
  }
}

TEST_CASE("replay works with partial channels") {
  const auto a = preset(SystemId::A);
  MaskSpec spec;
  spec.scenario = MaskScenario::AnglesOnly;
  const auto data = sample_measurements(integrate(a, SystemState::zero(a), 2.0, 0.01), 0.01, {}, spec);
  const auto rep = replay(data, a, UkfConfig{});
  CHECK(rep.steps.size() == 200);
  CHECK(rep.final_belief.mean.allFinite());
}

TEST_CASE("ukf config validation") {
  UkfConfig cfg;
  cfg.alpha = 0.0;
  CHECK_THROWS(cfg.validate());
  cfg = UkfConfig{};
  cfg.substeps = 0;
  CHECK_THROWS(cfg.validate());
  cfg = UkfConfig{};
  cfg.initial_inertia = VectorXd::Ones(3);
  CHECK_THROWS(initial_belief(preset(SystemId::A), clean_data(SystemId::A), cfg));
}
