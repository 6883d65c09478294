#include "swingid/simulate.hpp"

#include "swingid/csv.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

namespace swingid {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Number of `step`-sized intervals in `span`; throws unless it divides evenly.
std::size_t whole_steps(double span, double step, const char* what) {
  const double ratio = span / step;
  const double rounded = std::round(ratio);
  if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-9 * std::max(1.0, ratio)) {
    std::ostringstream msg;
    msg << what << ": " << step << " does not divide " << span;
    throw SimulationError(msg.str());
  }
  return static_cast<std::size_t>(rounded);
}

struct Rk4Stepper {
  const PowerSystemModel& model;

  SystemState advance(const SystemState& x, double h) const {
    auto axpy = [](const SystemState& s, double c, const SystemState& k) {
      return SystemState{s.delta + c * k.delta, s.omega + c * k.omega};
    };
    const SystemState k1 = vector_field(model, x);
    const SystemState k2 = vector_field(model, axpy(x, 0.5 * h, k1));
    const SystemState k3 = vector_field(model, axpy(x, 0.5 * h, k2));
    const SystemState k4 = vector_field(model, axpy(x, h, k3));
    return {x.delta + (h / 6.0) * (k1.delta + 2.0 * k2.delta + 2.0 * k3.delta + k4.delta),
            x.omega + (h / 6.0) * (k1.omega + 2.0 * k2.omega + 2.0 * k3.omega + k4.omega)};
  }
};

}  // namespace

std::size_t Trajectory::index_of(double t) const {
  const auto it = std::lower_bound(times.begin(), times.end(), t - 1e-9);
  if (it == times.end() || std::abs(*it - t) > 1e-9) {
    std::ostringstream msg;
    msg << "time " << t << " is not on the trajectory grid";
    throw SimulationError(msg.str());
  }
  return static_cast<std::size_t>(it - times.begin());
}

double internal_step(const PowerSystemModel& model, double output_step, const IntegrateOptions& options) {
  double h = output_step;
  if (options.max_step > 0.0) {
    h = std::min(h, options.max_step);
  } else {
    if (model.n_generators() > 0) h = std::min(h, model.inertia().minCoeff() / 20.0);
    // Same resolution for the load time constants d_k / sum_j a_kj.
    for (std::size_t k = 0; k < model.n_buses(); ++k) {
      if (model.is_generator(k)) continue;
      const double stiffness = model.connectivity().row(static_cast<Eigen::Index>(k)).sum();
      h = std::min(h, model.damping()(static_cast<Eigen::Index>(k)) / stiffness / 20.0);
    }
  }
  // Round to a whole number of sub-steps per output interval.
  const auto substeps = static_cast<std::size_t>(std::ceil(output_step / h - 1e-9));
  return output_step / static_cast<double>(substeps);
}

Trajectory integrate(const PowerSystemModel& model, const SystemState& initial, double horizon,
                     double output_step, const IntegrateOptions& options) {
  if (!(horizon > 0.0) || !(output_step > 0.0)) throw SimulationError("horizon and output step must be positive");
  if (initial.delta.size() != static_cast<Eigen::Index>(model.n_buses()) ||
      initial.omega.size() != static_cast<Eigen::Index>(model.n_generators())) {
    throw SimulationError("initial state dimension does not match the model");
  }
  const std::size_t outputs = whole_steps(horizon, output_step, "integrate");
  const double h = internal_step(model, output_step, options);
  const auto substeps = static_cast<std::size_t>(std::llround(output_step / h));

  const auto n = static_cast<Eigen::Index>(model.n_buses());
  Trajectory traj;
  traj.times.resize(outputs + 1);
  traj.delta.resize(static_cast<Eigen::Index>(outputs + 1), n);
  traj.omega.resize(static_cast<Eigen::Index>(outputs + 1), n);

  const Rk4Stepper stepper{model};
  SystemState x = initial;
  auto store = [&](std::size_t row) {
    const auto r = static_cast<Eigen::Index>(row);
    traj.times[row] = static_cast<double>(row) * output_step;
    traj.delta.row(r) = x.delta.transpose();
    traj.omega.row(r) = bus_rates(model, x).transpose();
  };
  store(0);
  for (std::size_t out = 1; out <= outputs; ++out) {
    for (std::size_t s = 0; s < substeps; ++s) x = stepper.advance(x, h);
    if (!x.delta.allFinite() || !x.omega.allFinite()) {
      std::ostringstream msg;
      msg << "integration diverged before t = " << static_cast<double>(out) * output_step;
      throw SimulationError(msg.str());
    }
    store(out);
  }
  return traj;
}

std::string to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::None: return "none";
    case NoiseKind::Gaussian: return "gaussian";
    case NoiseKind::Uniform: return "uniform";
  }
  return "?";
}

NoiseKind parse_noise_kind(const std::string& name) {
  if (name == "none") return NoiseKind::None;
  if (name == "gaussian") return NoiseKind::Gaussian;
  if (name == "uniform") return NoiseKind::Uniform;
  throw SimulationError("unknown noise kind '" + name + "'");
}

std::string to_string(MaskScenario scenario) {
  switch (scenario) {
    case MaskScenario::Full: return "full";
    case MaskScenario::RandomHalf: return "random-half";
    case MaskScenario::BusSubset: return "bus-subset";
    case MaskScenario::AnglesOnly: return "angles-only";
    case MaskScenario::FrequenciesOnly: return "frequencies-only";
  }
  return "?";
}

MaskScenario parse_mask_scenario(const std::string& name) {
  if (name == "full") return MaskScenario::Full;
  if (name == "random-half" || name == "A") return MaskScenario::RandomHalf;
  if (name == "bus-subset" || name == "B") return MaskScenario::BusSubset;
  if (name == "angles-only" || name == "C") return MaskScenario::AnglesOnly;
  if (name == "frequencies-only" || name == "D") return MaskScenario::FrequenciesOnly;
  throw SimulationError("unknown mask scenario '" + name + "'");
}

std::size_t MeasurementSet::available_count() const {
  return static_cast<std::size_t>(angle_mask.count() + rate_mask.count());
}

MeasurementSet MeasurementSet::truncated(double window) const {
  std::size_t keep = 0;
  while (keep < times.size() && times[keep] < window - 1e-9) ++keep;
  const auto rows = static_cast<Eigen::Index>(keep);
  MeasurementSet out;
  out.times.assign(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(keep));
  out.z = z.topRows(rows);
  out.z_dot = z_dot.topRows(rows);
  out.angle_mask = angle_mask.topRows(rows);
  out.rate_mask = rate_mask.topRows(rows);
  return out;
}

MeasurementSet sample_measurements(const Trajectory& traj, double cadence, const NoiseSpec& noise,
                                   const MaskSpec& mask) {
  if (traj.size() < 2) throw SimulationError("trajectory too short to sample");
  const double output_step = traj.times[1] - traj.times[0];
  const std::size_t stride = whole_steps(cadence, output_step, "sample_measurements: cadence");
  if (noise.level < 0.0) throw SimulationError("noise level must be nonnegative");

  const std::size_t count = (traj.size() - 1 + stride - 1) / stride;
  const auto rows = static_cast<Eigen::Index>(count);
  const auto n = traj.delta.cols();

  MeasurementSet data;
  data.times.resize(count);
  data.z.resize(rows, n);
  data.z_dot.resize(rows, n);
  for (std::size_t i = 0; i < count; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const auto src = static_cast<Eigen::Index>(i * stride);
    data.times[i] = traj.times[i * stride];
    data.z.row(r) = traj.delta.row(src);
    data.z_dot.row(r) = traj.omega.row(src);
  }

  if (noise.kind != NoiseKind::None && noise.level > 0.0) {
    std::mt19937_64 rng(noise.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(-1.0, 1.0);
    auto corrupt = [&](double& v) {
      const double scale = noise.level * (noise.additive ? 1.0 : std::abs(v));
      v += scale * (noise.kind == NoiseKind::Gaussian ? gauss(rng) : uniform(rng));
    };
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index k = 0; k < n; ++k) corrupt(data.z(r, k));
      for (Eigen::Index k = 0; k < n; ++k) corrupt(data.z_dot(r, k));
    }
  }

  data.angle_mask = Mask::Constant(rows, n, true);
  data.rate_mask = Mask::Constant(rows, n, true);
  switch (mask.scenario) {
    case MaskScenario::Full: break;
    case MaskScenario::RandomHalf: {
      std::mt19937_64 rng(mask.seed);
      std::bernoulli_distribution keep(mask.keep_probability);
      for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index k = 0; k < n; ++k) data.angle_mask(r, k) = keep(rng);
        for (Eigen::Index k = 0; k < n; ++k) data.rate_mask(r, k) = keep(rng);
      }
      break;
    }
    case MaskScenario::BusSubset: {
      for (Eigen::Index k = 0; k < n; ++k) {
        const bool kept = std::find(mask.buses.begin(), mask.buses.end(), static_cast<std::size_t>(k)) !=
                          mask.buses.end();
        data.angle_mask.col(k).setConstant(kept);
        data.rate_mask.col(k).setConstant(kept);
      }
      break;
    }
    case MaskScenario::AnglesOnly: data.rate_mask.setConstant(false); break;
    case MaskScenario::FrequenciesOnly: data.angle_mask.setConstant(false); break;
  }
  data.z = data.angle_mask.select(data.z, kNaN);
  data.z_dot = data.rate_mask.select(data.z_dot, kNaN);
  return data;
}

namespace {

void write_header(std::ostream& out, Eigen::Index n) {
  out << "t";
  for (Eigen::Index k = 1; k <= n; ++k) out << ",delta_" << k;
  for (Eigen::Index k = 1; k <= n; ++k) out << ",omega_" << k;
  out << '\n';
}

struct ParsedTable {
  std::vector<double> times;
  Eigen::MatrixXd delta;
  Eigen::MatrixXd omega;
};

ParsedTable parse_state_csv(std::istream& in) {
  const auto table = csv::read(in);
  if (table.header.empty() || table.header[0] != "t" || (table.header.size() - 1) % 2 != 0) {
    throw SimulationError("state CSV must start with 't' followed by delta_k and omega_k columns");
  }
  const auto n = static_cast<Eigen::Index>((table.header.size() - 1) / 2);
  for (Eigen::Index k = 0; k < n; ++k) {
    if (table.header[1 + k] != "delta_" + std::to_string(k + 1) ||
        table.header[1 + n + k] != "omega_" + std::to_string(k + 1)) {
      throw SimulationError("unexpected state CSV header");
    }
  }
  ParsedTable parsed;
  const auto rows = static_cast<Eigen::Index>(table.rows.size());
  parsed.delta.resize(rows, n);
  parsed.omega.resize(rows, n);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = table.rows[static_cast<std::size_t>(r)];
    if (!row[0]) throw SimulationError("state CSV row without a time stamp");
    parsed.times.push_back(*row[0]);
    for (Eigen::Index k = 0; k < n; ++k) {
      parsed.delta(r, k) = row[1 + k].value_or(kNaN);
      parsed.omega(r, k) = row[1 + n + k].value_or(kNaN);
    }
  }
  return parsed;
}

}  // namespace

void write_csv(std::ostream& out, const Trajectory& traj) {
  write_header(out, traj.delta.cols());
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out << csv::format(traj.times[i]);
    for (Eigen::Index k = 0; k < traj.delta.cols(); ++k) out << ',' << csv::format(traj.delta(r, k));
    for (Eigen::Index k = 0; k < traj.omega.cols(); ++k) out << ',' << csv::format(traj.omega(r, k));
    out << '\n';
  }
}

void write_csv(std::ostream& out, const MeasurementSet& data) {
  write_header(out, data.z.cols());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out << csv::format(data.times[i]);
    for (Eigen::Index k = 0; k < data.z.cols(); ++k) {
      out << ',';
      if (data.angle_mask(r, k)) out << csv::format(data.z(r, k));
    }
    for (Eigen::Index k = 0; k < data.z_dot.cols(); ++k) {
      out << ',';
      if (data.rate_mask(r, k)) out << csv::format(data.z_dot(r, k));
    }
    out << '\n';
  }
}

MeasurementSet read_measurements_csv(std::istream& in) {
  auto parsed = parse_state_csv(in);
  MeasurementSet data;
  data.times = std::move(parsed.times);
  data.angle_mask = parsed.delta.array().isFinite();
  data.rate_mask = parsed.omega.array().isFinite();
  data.z = std::move(parsed.delta);
  data.z_dot = std::move(parsed.omega);
  return data;
}

Trajectory read_trajectory_csv(std::istream& in) {
  auto parsed = parse_state_csv(in);
  if (!parsed.delta.allFinite() || !parsed.omega.allFinite()) {
    throw SimulationError("trajectory CSV has missing entries");
  }
  return {std::move(parsed.times), std::move(parsed.delta), std::move(parsed.omega)};
}

}  // namespace swingid
