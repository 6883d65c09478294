#include "swingid/ukf.hpp"

#include <cmath>
#include <sstream>

namespace swingid {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void UkfConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("ukf alpha must lie in (0, 1]");
  if (!(q_dynamics >= 0.0 && q_parameters >= 0.0)) throw std::invalid_argument("ukf process noise must be nonnegative");
  if (!(noise_level >= 0.0) || !(r_floor > 0.0)) throw std::invalid_argument("ukf measurement noise must be positive");
  if (substeps < 1) throw std::invalid_argument("ukf substeps must be at least 1");
  if (!(initial_state_variance >= 0.0 && initial_parameter_variance >= 0.0)) {
    throw std::invalid_argument("ukf initial variances must be nonnegative");
  }
}

SigmaWeights SigmaWeights::of(Eigen::Index n, const UkfConfig& cfg) {
  const double nd = static_cast<double>(n);
  const double lambda = cfg.alpha * cfg.alpha * (nd + cfg.kappa) - nd;
  SigmaWeights w;
  w.spread = std::sqrt(nd + lambda);
  w.mean = VectorXd::Constant(2 * n + 1, 0.5 / (nd + lambda));
  w.covariance = w.mean;
  w.mean(0) = lambda / (nd + lambda);
  w.covariance(0) = w.mean(0) + 1.0 - cfg.alpha * cfg.alpha + cfg.beta;
  return w;
}

UnscentedFilter::UnscentedFilter(const PowerSystemModel& structure, UkfConfig cfg)
    : structure_(structure), cfg_(std::move(cfg)) {
  cfg_.validate();
  weights_ = SigmaWeights::of(dimension(), cfg_);
}

Eigen::Index UnscentedFilter::dimension() const {
  return static_cast<Eigen::Index>(2 * structure_.n_buses() + 2 * structure_.n_generators());
}

MatrixXd UnscentedFilter::square_root(MatrixXd& cov) {
  Eigen::LLT<MatrixXd> llt(cov);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  // Semidefinite matrices (e.g. frozen parameters) use the symmetric
  // eigendecomposition; any square root gives valid sigma points.
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
  const double scale = std::max(1e-300, eig.eigenvalues().cwiseAbs().maxCoeff());
  if (eig.info() == Eigen::Success && eig.eigenvalues().minCoeff() >= -1e-12 * scale) {
    return eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  }
  ++repairs_;
  cov = 0.5 * (cov + cov.transpose());
  cov.diagonal().array() += 1e-9;
  Eigen::LLT<MatrixXd> retry(cov);
  if (retry.info() != Eigen::Success) throw UkfError("covariance is not positive definite after repair");
  return retry.matrixL();
}

MatrixXd UnscentedFilter::sigma_points(const Gaussian& g) {
  MatrixXd cov = g.cov;
  const MatrixXd root = weights_.spread * square_root(cov);
  const Eigen::Index n = dimension();
  MatrixXd pts(n, 2 * n + 1);
  pts.col(0) = g.mean;
  for (Eigen::Index i = 0; i < n; ++i) {
    pts.col(1 + i) = g.mean + root.col(i);
    pts.col(1 + n + i) = g.mean - root.col(i);
  }
  return pts;
}

VectorXd UnscentedFilter::coupling(const VectorXd& delta) const {
  if (cfg_.coupling == CouplingLaw::Sine) return swingid::coupling(structure_, delta);
  const MatrixXd& a = structure_.connectivity();
  return a.rowwise().sum().cwiseProduct(delta) - a * delta;
}

VectorXd UnscentedFilter::rates(const VectorXd& x) const {
  const auto n = static_cast<Eigen::Index>(structure_.n_buses());
  const auto g = static_cast<Eigen::Index>(structure_.n_generators());
  const VectorXd delta = x.head(n);
  const VectorXd flow = coupling(delta);
  VectorXd r(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const int slot = structure_.generator_slot(static_cast<std::size_t>(k));
    r(k) = slot >= 0 ? x(n + slot) : (structure_.injection()(k) - flow(k)) / x(n + 2 * g + k);
  }
  return r;
}

VectorXd UnscentedFilter::propagate(const VectorXd& x0, double dt) const {
  const auto n = static_cast<Eigen::Index>(structure_.n_buses());
  const auto g = static_cast<Eigen::Index>(structure_.n_generators());
  const double h = dt / cfg_.substeps;
  VectorXd x = x0;
  const auto m = x0.segment(n + g, g);
  const auto d = x0.segment(n + 2 * g, n);
  for (int s = 0; s < cfg_.substeps; ++s) {
    const VectorXd flow = coupling(x.head(n));
    VectorXd dx = VectorXd::Zero(x.size());
    for (Eigen::Index k = 0; k < n; ++k) {
      const int slot = structure_.generator_slot(static_cast<std::size_t>(k));
      const double p = structure_.injection()(k) - flow(k);
      if (slot >= 0) {
        const double w = x(n + slot);
        dx(k) = w;
        dx(n + slot) = (p - d(k) * w) / m(slot);
      } else {
        dx(k) = p / d(k);
      }
    }
    x += h * dx;
  }
  return x;
}

Gaussian UnscentedFilter::predict(const Gaussian& prior, double dt) {
  if (!(dt > 0.0)) throw UkfError("prediction step must be positive");
  const MatrixXd pts = sigma_points(prior);
  MatrixXd moved(pts.rows(), pts.cols());
  for (Eigen::Index i = 0; i < pts.cols(); ++i) moved.col(i) = propagate(pts.col(i), dt);
  if (!moved.allFinite()) throw UkfError("sigma point propagation produced non-finite values");

  Gaussian out;
  out.mean = moved * weights_.mean;
  const MatrixXd dev = moved.colwise() - out.mean;
  out.cov = dev * weights_.covariance.asDiagonal() * dev.transpose();
  const auto n = static_cast<Eigen::Index>(structure_.n_buses());
  const auto g = static_cast<Eigen::Index>(structure_.n_generators());
  out.cov.diagonal().head(n + g).array() += cfg_.q_dynamics;
  out.cov.diagonal().tail(n + g).array() += cfg_.q_parameters;
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

Gaussian UnscentedFilter::update(const Gaussian& predicted, const VectorXd& angle, const VectorXd& rate,
                                 const Mask& angle_mask, const Mask& rate_mask) {
  const auto n = static_cast<Eigen::Index>(structure_.n_buses());
  std::vector<Eigen::Index> angle_rows, rate_rows;
  for (Eigen::Index k = 0; k < n; ++k) {
    if (angle_mask(k)) angle_rows.push_back(k);
    if (rate_mask(k)) rate_rows.push_back(k);
  }
  const auto m = static_cast<Eigen::Index>(angle_rows.size() + rate_rows.size());
  if (m == 0) throw UkfError("update needs at least one available channel");

  VectorXd z(m), r(m);
  auto noise = [&](double v) { return std::max(std::pow(cfg_.noise_level * v, 2), cfg_.r_floor); };
  Eigen::Index row = 0;
  for (const auto k : angle_rows) {
    z(row) = angle(k);
    r(row++) = noise(angle(k));
  }
  for (const auto k : rate_rows) {
    z(row) = rate(k);
    r(row++) = noise(rate(k));
  }

  const MatrixXd pts = sigma_points(predicted);
  MatrixXd zs(m, pts.cols());
  for (Eigen::Index i = 0; i < pts.cols(); ++i) {
    const VectorXd w = rates(pts.col(i));
    row = 0;
    for (const auto k : angle_rows) zs(row++, i) = pts(k, i);
    for (const auto k : rate_rows) zs(row++, i) = w(k);
  }
  const VectorXd z_mean = zs * weights_.mean;
  const MatrixXd dz = zs.colwise() - z_mean;
  const MatrixXd dx = pts.colwise() - predicted.mean;
  MatrixXd s = dz * weights_.covariance.asDiagonal() * dz.transpose();
  s.diagonal() += r;
  const MatrixXd cross = dx * weights_.covariance.asDiagonal() * dz.transpose();

  Eigen::LDLT<MatrixXd> solver(s);
  if (solver.info() != Eigen::Success || !(solver.vectorD().array() > 0.0).all()) {
    throw UkfError("innovation covariance is singular");
  }
  const VectorXd innovation = z - z_mean;
  last_sse_ = innovation.squaredNorm();
  last_nll_ = 0.5 * (innovation.dot(solver.solve(innovation)) + solver.vectorD().array().log().sum() +
                     static_cast<double>(m) * std::log(2.0 * M_PI));
  const MatrixXd gain = solver.solve(cross.transpose()).transpose();
  Gaussian out;
  out.mean = predicted.mean + gain * innovation;
  out.cov = predicted.cov - gain * s * gain.transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

Gaussian initial_belief(const PowerSystemModel& structure, const MeasurementSet& data, const UkfConfig& cfg) {
  const auto n = static_cast<Eigen::Index>(structure.n_buses());
  const auto g = static_cast<Eigen::Index>(structure.n_generators());
  auto guess = [&](const VectorXd& v, Eigen::Index size, const char* name) {
    if (v.size() == 0) return VectorXd(VectorXd::Constant(size, cfg.initial_parameter));
    if (v.size() != size) throw std::invalid_argument(std::string("ukf initial ") + name + " has the wrong size");
    return v;
  };
  Gaussian b;
  b.mean = VectorXd::Zero(2 * n + 2 * g);
  if (data.size() > 0) {
    for (Eigen::Index k = 0; k < n; ++k) {
      if (data.angle_mask(0, k)) b.mean(k) = data.z(0, k);
      const int slot = structure.generator_slot(static_cast<std::size_t>(k));
      if (slot >= 0 && data.rate_mask(0, k)) b.mean(n + slot) = data.z_dot(0, k);
    }
  }
  b.mean.segment(n + g, g) = guess(cfg.initial_inertia, g, "inertia");
  b.mean.tail(n) = guess(cfg.initial_damping, n, "damping");
  b.cov = MatrixXd::Zero(b.mean.size(), b.mean.size());
  b.cov.diagonal().head(n + g).setConstant(cfg.initial_state_variance);
  b.cov.diagonal().tail(n + g).setConstant(cfg.initial_parameter_variance);
  return b;
}

UkfReport replay(const MeasurementSet& data, const PowerSystemModel& structure, const UkfConfig& cfg) {
  if (data.size() == 0) throw UkfError("replay needs at least one sample");
  if (data.n_buses() != structure.n_buses()) throw UkfError("measurement and model bus counts differ");
  UnscentedFilter filter(structure, cfg);
  const auto n = static_cast<Eigen::Index>(structure.n_buses());
  const auto g = static_cast<Eigen::Index>(structure.n_generators());

  Gaussian belief = initial_belief(structure, data, cfg);
  const VectorXd initial_var = belief.cov.diagonal().tail(n + g);
  UkfReport report;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    try {
      if (i > 0) {
        const double dt = data.times[i] - data.times[i - 1];
        if (!(dt > 0.0)) throw UkfError("measurement times must increase");
        belief = filter.predict(belief, dt);
      }
      const Mask am = data.angle_mask.row(r).transpose();
      const Mask rm = data.rate_mask.row(r).transpose();
      if (am.any() || rm.any()) {
        belief = filter.update(belief, data.z.row(r).transpose(), data.z_dot.row(r).transpose(), am, rm);
        report.innovation_nll += filter.last_innovation_nll();
        report.innovation_sse += filter.last_innovation_sse();
      }
    } catch (const UkfError& e) {
      std::ostringstream msg;
      msg << "step " << i << ": " << e.what();
      throw UkfError(msg.str());
    }
    const VectorXd params = belief.mean.tail(n + g);
    if ((params.array() <= 0.0).any()) {
      if (report.negative_parameter_steps++ == 0) {
        std::ostringstream msg;
        msg << "non-positive parameter estimate first seen at step " << i;
        report.diagnostics.push_back(msg.str());
      }
    }
    report.steps.push_back({data.times[i], params.head(g), params.tail(n), belief.cov.trace()});
  }
  const VectorXd final_var = belief.cov.diagonal().tail(n + g);
  report.converged = (final_var.array() <= initial_var.array()).all() && belief.mean.allFinite();
  if (!report.converged) report.diagnostics.push_back("parameter variance exceeds its initial value");
  report.repairs = filter.repairs();
  if (report.repairs) report.diagnostics.push_back("covariance repaired " + std::to_string(report.repairs) + " times");
  report.final_belief = std::move(belief);
  return report;
}

}  // namespace swingid
