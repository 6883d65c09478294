#include "swingid/pinn.hpp"

#include "swingid/adam.hpp"
#include "swingid/autodiff/jet.hpp"
#include "swingid/seed.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace swingid {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void NetworkConfig::validate() const {
  if (hidden.empty()) throw std::invalid_argument("network needs at least one hidden layer");
  for (const int n : hidden) {
    if (n < 1) throw std::invalid_argument("every hidden layer needs at least one neuron");
  }
  if (!(time_scale > 0.0)) throw std::invalid_argument("time_scale must be positive");
}

KnownStructure KnownStructure::of(const PowerSystemModel& model) {
  return {model.kinds(), model.connectivity(), model.injection()};
}

std::size_t KnownStructure::n_generators() const {
  return static_cast<std::size_t>(std::count(kinds.begin(), kinds.end(), BusKind::Generator));
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double inverse_softplus(double y) {
  if (!(y > 0.0)) throw std::invalid_argument("inverse_softplus: argument must be positive");
  return y > 30.0 ? y : std::log(std::expm1(y));
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

VectorXd softplus(const VectorXd& x) { return x.unaryExpr([](double v) { return swingid::softplus(v); }); }

// Generator selection: row k has a one in the column of bus k's generator slot.
MatrixXd generator_selector(const KnownStructure& s) {
  MatrixXd sel = MatrixXd::Zero(static_cast<Eigen::Index>(s.n_buses()), static_cast<Eigen::Index>(s.n_generators()));
  Eigen::Index g = 0;
  for (std::size_t k = 0; k < s.n_buses(); ++k) {
    if (s.kinds[k] == BusKind::Generator) sel(static_cast<Eigen::Index>(k), g++) = 1.0;
  }
  return sel;
}

// Branch incidence (one row per connected pair k<j) and the weighted
// transpose that maps branch flows back onto buses.
struct Branches {
  MatrixXd incidence;
  MatrixXd weighted_transpose;
};

Branches branches_of(const KnownStructure& s) {
  const auto n = static_cast<Eigen::Index>(s.n_buses());
  std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
  for (Eigen::Index k = 0; k < n; ++k) {
    for (Eigen::Index j = k + 1; j < n; ++j) {
      if (s.connectivity(k, j) != 0.0) pairs.emplace_back(k, j);
    }
  }
  Branches b;
  b.incidence = MatrixXd::Zero(static_cast<Eigen::Index>(pairs.size()), n);
  b.weighted_transpose = MatrixXd::Zero(n, static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t e = 0; e < pairs.size(); ++e) {
    const auto [k, j] = pairs[e];
    const auto row = static_cast<Eigen::Index>(e);
    const double a = s.connectivity(k, j);
    b.incidence(row, k) = 1.0;
    b.incidence(row, j) = -1.0;
    b.weighted_transpose(k, row) = a;
    b.weighted_transpose(j, row) = -a;
  }
  return b;
}

// Network variables recorded on a tape.
struct TapeNetwork {
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;
  ad::Var inertia;
  ad::Var damping;
};

TapeNetwork record_variables(ad::Tape& tape, const PinnEstimator& est) {
  TapeNetwork net;
  for (std::size_t l = 0; l < est.weights().size(); ++l) {
    net.weights.push_back(tape.variable(est.weights()[l]));
    net.biases.push_back(tape.variable(est.biases()[l]));
  }
  net.inertia = tape.variable(est.inertia());
  net.damping = tape.variable(est.damping());
  return net;
}

ad::Var record_forward(ad::Tape& tape, const TapeNetwork& net, const std::vector<double>& times,
                       const PinnEstimator& est) {
  const double time_scale = est.time_scale();
  const Eigen::RowVectorXd t = Eigen::Map<const Eigen::RowVectorXd>(times.data(), static_cast<Eigen::Index>(times.size()));
  ad::JetMatrix input;
  input.value = time_scale * t;
  input.d1 = MatrixXd::Constant(1, t.size(), time_scale);
  input.d2 = MatrixXd::Zero(1, t.size());
  ad::Var y = tape.constant(std::move(input));
  const std::size_t layers = net.weights.size();
  for (std::size_t l = 0; l < layers; ++l) {
    y = tape.add_col(tape.matmul(net.weights[l], y), net.biases[l]);
    if (l + 1 < layers) y = tape.tanh(y);
  }
  if ((est.output_scale().array() != 1.0).any()) y = tape.mul_col(y, tape.constant(MatrixXd(est.output_scale())));
  return y;
}

ad::Var record_measurement_loss(ad::Tape& tape, const TapeNetwork& net, const PinnEstimator& est,
                                const MeasurementSet& data, const std::vector<std::size_t>& rows) {
  std::vector<double> times;
  times.reserve(rows.size());
  for (const auto r : rows) times.push_back(data.times.at(r));
  const auto n = static_cast<Eigen::Index>(data.n_buses());
  const auto cols = static_cast<Eigen::Index>(rows.size());
  MatrixXd z = MatrixXd::Zero(n, cols), z_dot = MatrixXd::Zero(n, cols);
  MatrixXd angle_mask = MatrixXd::Zero(n, cols), rate_mask = MatrixXd::Zero(n, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    const auto r = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(c)]);
    for (Eigen::Index k = 0; k < n; ++k) {
      if (data.angle_mask(r, k)) {
        angle_mask(k, c) = 1.0;
        z(k, c) = data.z(r, k);
      }
      if (data.rate_mask(r, k)) {
        rate_mask(k, c) = 1.0;
        z_dot(k, c) = data.z_dot(r, k);
      }
    }
  }
  const ad::Var u = record_forward(tape, net, times, est);
  const ad::Var angle_err = tape.mul(tape.sub(tape.constant(z), tape.component(u, 0)), tape.constant(angle_mask));
  const ad::Var rate_err = tape.mul(tape.sub(tape.constant(z_dot), tape.component(u, 1)), tape.constant(rate_mask));
  const ad::Var total = tape.add(tape.sum(tape.square(angle_err)), tape.sum(tape.square(rate_err)));
  return tape.scale(total, 1.0 / static_cast<double>(rows.size()));
}

ad::Var record_physics_loss(ad::Tape& tape, const TapeNetwork& net, const PinnEstimator& est,
                            const std::vector<double>& times) {
  const auto& s = est.structure();
  const Branches br = branches_of(s);
  const ad::Var u = record_forward(tape, net, times, est);
  const ad::Var angle = tape.component(u, 0);
  const ad::Var rate = tape.component(u, 1);
  const ad::Var accel = tape.component(u, 2);
  const ad::Var inertia_per_bus = tape.matmul(tape.constant(generator_selector(s)), net.inertia);
  const ad::Var flows = tape.matmul(tape.constant(br.weighted_transpose),
                                    tape.sin(tape.matmul(tape.constant(br.incidence), angle)));
  ad::Var f = tape.add(tape.mul_col(accel, inertia_per_bus), tape.mul_col(rate, net.damping));
  f = tape.add_col(tape.add(f, flows), tape.constant(MatrixXd(-s.injection)));
  return tape.scale(tape.sum(tape.square(f)), 1.0 / static_cast<double>(times.size()));
}

}  // namespace

PinnEstimator::PinnEstimator(KnownStructure structure, std::vector<MatrixXd> weights, std::vector<VectorXd> biases,
                             VectorXd inertia_free, VectorXd damping_free, double time_scale, VectorXd output_scale)
    : structure_(std::move(structure)),
      weights_(std::move(weights)),
      biases_(std::move(biases)),
      inertia_free_(std::move(inertia_free)),
      damping_free_(std::move(damping_free)),
      time_scale_(time_scale),
      output_scale_(std::move(output_scale)) {
  if (output_scale_.size() == 0) output_scale_ = VectorXd::Ones(static_cast<Eigen::Index>(structure_.n_buses()));
  if (output_scale_.size() != static_cast<Eigen::Index>(structure_.n_buses()) || !(output_scale_.array() > 0.0).all()) {
    throw std::invalid_argument("estimator output scale must hold one positive value per bus");
  }
  if (weights_.size() < 2 || weights_.size() != biases_.size()) {
    throw std::invalid_argument("estimator needs at least one hidden layer and one bias per layer");
  }
  Eigen::Index fan_in = 1;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    if (weights_[l].cols() != fan_in || biases_[l].size() != weights_[l].rows()) {
      throw std::invalid_argument("estimator layer " + std::to_string(l + 1) + " has inconsistent dimensions");
    }
    fan_in = weights_[l].rows();
  }
  if (fan_in != static_cast<Eigen::Index>(structure_.n_buses())) {
    throw std::invalid_argument("estimator output layer must have one neuron per bus");
  }
  if (inertia_free_.size() != static_cast<Eigen::Index>(structure_.n_generators()) ||
      damping_free_.size() != static_cast<Eigen::Index>(structure_.n_buses())) {
    throw std::invalid_argument("estimator parameter vectors do not match the structure");
  }
}

PinnEstimator PinnEstimator::initialize(const KnownStructure& structure, const NetworkConfig& cfg, std::uint64_t seed,
                                        double initial_parameter, const VectorXd& output_scale) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::vector<int> sizes{1};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(static_cast<int>(structure.n_buses()));
  std::vector<MatrixXd> weights;
  std::vector<VectorXd> biases;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const double bound = std::sqrt(6.0 / static_cast<double>(sizes[l] + sizes[l + 1]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    MatrixXd w(sizes[l + 1], sizes[l]);
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = dist(rng);
    }
    weights.push_back(std::move(w));
    biases.push_back(VectorXd::Zero(sizes[l + 1]));
  }
  const double free = inverse_softplus(initial_parameter);
  return PinnEstimator(structure, std::move(weights), std::move(biases),
                       VectorXd::Constant(static_cast<Eigen::Index>(structure.n_generators()), free),
                       VectorXd::Constant(static_cast<Eigen::Index>(structure.n_buses()), free), cfg.time_scale,
                       cfg.output_scaling ? output_scale : VectorXd());
}

PinnEstimator::Output PinnEstimator::forward(double t) const {
  using ad::Jet2;
  std::vector<Jet2> y{Jet2(time_scale_ * t, time_scale_, 0.0)};
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const auto& w = weights_[l];
    std::vector<Jet2> next(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      Jet2 acc(biases_[l](i));
      for (Eigen::Index j = 0; j < w.cols(); ++j) acc += w(i, j) * y[static_cast<std::size_t>(j)];
      next[static_cast<std::size_t>(i)] = l + 1 < weights_.size() ? ad::tanh(acc) : acc;
    }
    y = std::move(next);
  }
  Output out{VectorXd(y.size()), VectorXd(y.size()), VectorXd(y.size())};
  for (std::size_t k = 0; k < y.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    out.u(i) = output_scale_(i) * y[k].value;
    out.u_dot(i) = output_scale_(i) * y[k].d1;
    out.u_ddot(i) = output_scale_(i) * y[k].d2;
  }
  return out;
}

VectorXd PinnEstimator::inertia() const { return softplus(inertia_free_); }
VectorXd PinnEstimator::damping() const { return softplus(damping_free_); }

std::vector<int> PinnEstimator::layer_sizes() const {
  std::vector<int> sizes{1};
  for (const auto& w : weights_) sizes.push_back(static_cast<int>(w.rows()));
  return sizes;
}

Eigen::Index PinnEstimator::variable_count() const {
  Eigen::Index n = inertia_free_.size() + damping_free_.size();
  for (std::size_t l = 0; l < weights_.size(); ++l) n += weights_[l].size() + biases_[l].size();
  return n;
}

VectorXd PinnEstimator::pack() const {
  VectorXd theta(variable_count());
  Eigen::Index pos = 0;
  auto put = [&](const auto& m) {
    theta.segment(pos, m.size()) = Eigen::Map<const VectorXd>(m.data(), m.size());
    pos += m.size();
  };
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    put(weights_[l]);
    put(biases_[l]);
  }
  put(inertia_free_);
  put(damping_free_);
  return theta;
}

void PinnEstimator::unpack(const VectorXd& theta) {
  if (theta.size() != variable_count()) throw std::invalid_argument("unpack: wrong variable count");
  Eigen::Index pos = 0;
  auto take = [&](auto& m) {
    Eigen::Map<VectorXd>(m.data(), m.size()) = theta.segment(pos, m.size());
    pos += m.size();
  };
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    take(weights_[l]);
    take(biases_[l]);
  }
  take(inertia_free_);
  take(damping_free_);
}

LossEvaluation evaluate_loss(const PinnEstimator& est, const MeasurementSet& data, const LossBatch& batch,
                             double physics_weight, bool with_gradient) {
  if (batch.measurement_rows.empty() && batch.collocation_times.empty()) {
    throw std::invalid_argument("evaluate_loss: empty batch");
  }
  ad::Tape tape;
  const TapeNetwork net = record_variables(tape, est);
  LossEvaluation result;
  std::optional<ad::Var> total;
  if (!batch.measurement_rows.empty()) {
    const ad::Var lz = record_measurement_loss(tape, net, est, data, batch.measurement_rows);
    result.measurement = lz.value()(0, 0);
    total = lz;
  }
  if (!batch.collocation_times.empty() && physics_weight != 0.0) {
    const ad::Var lc = record_physics_loss(tape, net, est, batch.collocation_times);
    result.physics = lc.value()(0, 0);
    const ad::Var weighted = tape.scale(lc, physics_weight);
    total = total ? tape.add(*total, weighted) : weighted;
  }
  result.total = result.measurement + physics_weight * result.physics;
  if (!with_gradient) return result;

  result.gradient = VectorXd::Zero(est.variable_count());
  if (!total) return result;
  const auto grads = tape.gradient(*total);
  Eigen::Index pos = 0;
  // Variables were recorded in pack() order; inertia and damping were recorded
  // as softplus outputs and need the chain rule back to the free variables.
  const std::size_t last = grads.size() - 2;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    VectorXd g = Eigen::Map<const VectorXd>(grads[i].data(), grads[i].size());
    if (i >= last) {
      const VectorXd& free = i == last ? est.inertia_free() : est.damping_free();
      g = g.cwiseProduct(free.unaryExpr([](double v) { return sigmoid(v); }));
    }
    result.gradient.segment(pos, g.size()) = g;
    pos += g.size();
  }
  return result;
}

double measurement_loss(const PinnEstimator& est, const MeasurementSet& data) {
  if (data.size() == 0) throw std::invalid_argument("measurement_loss: empty measurement set");
  LossBatch batch;
  batch.measurement_rows.resize(data.size());
  std::iota(batch.measurement_rows.begin(), batch.measurement_rows.end(), std::size_t{0});
  return evaluate_loss(est, data, batch, 0.0, false).measurement;
}

double physics_loss(const PinnEstimator& est, const std::vector<double>& collocation_times) {
  if (collocation_times.empty()) throw std::invalid_argument("physics_loss: empty collocation set");
  LossBatch batch;
  batch.collocation_times = collocation_times;
  return evaluate_loss(est, MeasurementSet{}, batch, 1.0, false).physics;
}

TrainingSchedule TrainingSchedule::fast_a() {
  TrainingSchedule s;
  s.batch_sizes = {200, 800, 4000};
  s.epochs_per_stage = {100, 300, 1500};
  s.collocation_per_measurement = 10;
  s.learning_rate = 2e-3;
  return s;
}

std::size_t TrainingSchedule::total_epochs() const {
  return std::accumulate(epochs_per_stage.begin(), epochs_per_stage.end(), std::size_t{0});
}

void TrainingSchedule::validate() const {
  if (batch_sizes.empty() || batch_sizes.size() != epochs_per_stage.size()) {
    throw std::invalid_argument("schedule: batch_sizes and epochs must be non-empty and of equal length");
  }
  for (const auto b : batch_sizes) {
    if (b == 0) throw std::invalid_argument("schedule: batch sizes must be positive");
  }
  if (!(learning_rate > 0.0)) throw std::invalid_argument("schedule: learning_rate must be positive");
  if (restart_count == 0) throw std::invalid_argument("schedule: restart_count must be positive");
  if (physics_weight < 0.0) throw std::invalid_argument("schedule: physics_weight must be nonnegative");
  if (!(initial_parameter > 0.0)) throw std::invalid_argument("schedule: initial_parameter must be positive");
}

std::vector<double> collocation_grid(double window, std::size_t count) {
  std::vector<double> t(count);
  if (count == 1) {
    t[0] = 0.0;
    return t;
  }
  for (std::size_t i = 0; i < count; ++i) t[i] = window * static_cast<double>(i) / static_cast<double>(count - 1);
  return t;
}

MatrixXd EstimationReport::relative_errors(const VectorXd& true_inertia, const VectorXd& true_damping) const {
  const auto n_m = true_inertia.size();
  MatrixXd errors(static_cast<Eigen::Index>(restarts.size()), n_m + true_damping.size());
  for (std::size_t r = 0; r < restarts.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    const auto& res = restarts[r];
    if (!res.ok) {
      errors.row(row).setConstant(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    errors.row(row).head(n_m) = ((res.inertia - true_inertia).cwiseAbs().cwiseQuotient(true_inertia)).transpose();
    errors.row(row).tail(true_damping.size()) =
        ((res.damping - true_damping).cwiseAbs().cwiseQuotient(true_damping)).transpose();
  }
  return errors;
}

namespace {

// Training churns through same-sized multi-megabyte temporaries; keeping
// them on the heap instead of fresh mmap pages halves the step time on glibc.
void keep_large_allocations_on_heap() {
#ifdef __GLIBC__
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 1024 * 1024 * 1024);
  });
#endif
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double data_window(const MeasurementSet& data) {
  if (data.size() == 0) throw std::invalid_argument("train: empty measurement set");
  if (data.size() == 1) return data.times[0];
  return data.times.back() + (data.times[1] - data.times[0]);
}

}  // namespace

VectorXd output_amplitudes(const MeasurementSet& data) {
  const auto n = static_cast<Eigen::Index>(data.n_buses());
  const double window = data.size() ? data_window(data) : 0.0;
  VectorXd amp = VectorXd::Zero(n);
  std::vector<bool> known(static_cast<std::size_t>(n), false);
  for (Eigen::Index k = 0; k < n; ++k) {
    double angle = 0.0, rate = 0.0;
    bool has_angle = false, has_rate = false;
    for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(data.size()); ++r) {
      if (data.angle_mask(r, k)) {
        angle = std::max(angle, std::abs(data.z(r, k)));
        has_angle = true;
      }
      if (data.rate_mask(r, k)) {
        rate = std::max(rate, std::abs(data.z_dot(r, k)));
        has_rate = true;
      }
    }
    if (has_angle && angle > 0.0) {
      amp(k) = angle;
    } else if (has_rate && rate > 0.0) {
      amp(k) = rate * window;
    }
    known[static_cast<std::size_t>(k)] = amp(k) > 0.0;
  }
  std::vector<double> seen;
  for (Eigen::Index k = 0; k < n; ++k) {
    if (known[static_cast<std::size_t>(k)]) seen.push_back(amp(k));
  }
  const double fallback = seen.empty() ? 1.0 : median(seen);
  for (Eigen::Index k = 0; k < n; ++k) {
    if (!known[static_cast<std::size_t>(k)]) amp(k) = fallback;
  }
  return amp.cwiseMax(1e-6);
}

RestartResult train_single(const KnownStructure& structure, const MeasurementSet& data, const NetworkConfig& cfg,
                           const TrainingSchedule& sched, std::uint64_t seed,
                           const std::function<void(std::size_t, const PinnEstimator&)>& on_epoch) {
  sched.validate();
  cfg.validate();
  if (data.n_buses() != structure.n_buses()) throw std::invalid_argument("train: data and structure bus counts differ");
  for (std::size_t i = 1; i < data.size(); ++i) {
    if (!(data.times[i] > data.times[i - 1])) throw std::invalid_argument("train: measurement times must increase");
  }
  if (data.times.front() < 0.0) throw std::invalid_argument("train: measurement window must start at t >= 0");
  keep_large_allocations_on_heap();
  const double window = data_window(data);
  const auto collocation = collocation_grid(window, sched.collocation_per_measurement * data.size());

  RestartResult result;
  result.seed = seed;
  std::mt19937_64 rng(derive_seed(seed, {1}));
  PinnEstimator est = PinnEstimator::initialize(structure, cfg, derive_seed(seed, {0}), sched.initial_parameter,
                                                cfg.output_scaling ? output_amplitudes(data) : VectorXd());
  VectorXd theta = est.pack();
  AdamState adam(theta.size());

  const std::size_t n_meas = data.size();
  std::vector<std::size_t> points(n_meas + collocation.size());
  std::iota(points.begin(), points.end(), std::size_t{0});

  std::size_t epoch = 0;
  for (std::size_t stage = 0; stage < sched.batch_sizes.size(); ++stage) {
    const std::size_t n_batches = std::max<std::size_t>(1, points.size() / sched.batch_sizes[stage]);
    for (std::size_t e = 0; e < sched.epochs_per_stage[stage]; ++e, ++epoch) {
      std::shuffle(points.begin(), points.end(), rng);
      double lz_sum = 0.0, lc_sum = 0.0;
      std::size_t lz_count = 0, lc_count = 0;
      for (std::size_t b = 0; b < n_batches; ++b) {
        const std::size_t begin = b * points.size() / n_batches;
        const std::size_t end = (b + 1) * points.size() / n_batches;
        LossBatch batch;
        for (std::size_t i = begin; i < end; ++i) {
          if (points[i] < n_meas) {
            batch.measurement_rows.push_back(points[i]);
          } else {
            batch.collocation_times.push_back(collocation[points[i] - n_meas]);
          }
        }
        std::sort(batch.measurement_rows.begin(), batch.measurement_rows.end());
        std::sort(batch.collocation_times.begin(), batch.collocation_times.end());
        const LossEvaluation loss = evaluate_loss(est, data, batch, sched.physics_weight, true);
        if (!std::isfinite(loss.total) || !loss.gradient.allFinite()) {
          std::ostringstream msg;
          msg << "non-finite loss at epoch " << epoch;
          throw TrainingError(msg.str());
        }
        lz_sum += loss.measurement * static_cast<double>(batch.measurement_rows.size());
        lz_count += batch.measurement_rows.size();
        lc_sum += loss.physics * static_cast<double>(batch.collocation_times.size());
        lc_count += batch.collocation_times.size();
        adam_step(theta, adam, loss.gradient, sched.learning_rate);
        est.unpack(theta);
      }
      result.losses.push_back({epoch, lz_count ? lz_sum / static_cast<double>(lz_count) : 0.0,
                               lc_count ? lc_sum / static_cast<double>(lc_count) : 0.0});
      VectorXd params(est.inertia_free().size() + est.damping_free().size());
      params << est.inertia(), est.damping();
      result.parameter_trace.push_back(std::move(params));
      if (on_epoch) on_epoch(epoch, est);
    }
  }
  result.ok = true;
  result.inertia = est.inertia();
  result.damping = est.damping();
  result.estimator = std::move(est);
  return result;
}

EstimationReport train(const KnownStructure& structure, const MeasurementSet& data, const NetworkConfig& cfg,
                       const TrainingSchedule& sched, const EpochObserver& observer) {
  sched.validate();
  const auto start = std::chrono::steady_clock::now();
  EstimationReport report;
  report.restarts.resize(sched.restart_count);

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t r = next++; r < sched.restart_count; r = next++) {
      const std::uint64_t seed = derive_seed(sched.seed, {r});
      std::function<void(std::size_t, const PinnEstimator&)> hook;
      if (observer) hook = [&observer, r](std::size_t epoch, const PinnEstimator& est) { observer(r, epoch, est); };
      try {
        report.restarts[r] = train_single(structure, data, cfg, sched, seed, hook);
      } catch (const TrainingError& e) {
        report.restarts[r].seed = seed;
        report.restarts[r].ok = false;
        report.restarts[r].failure = e.what();
      }
    }
  };
  std::size_t threads = sched.threads ? sched.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, sched.restart_count);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace swingid
