#pragma once

#include "swingid/io.hpp"
#include "swingid/model.hpp"
#include "swingid/pinn.hpp"
#include "swingid/simulate.hpp"
#include "swingid/ukf.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace swingid {

/// One system under study: a preset name ("A", "B", "C", or "C'" for C with
/// the reduced network) or a model loaded from a file.
struct SystemChoice {
  std::string label;
  PowerSystemModel model;
  NetworkConfig network;
};

struct ExperimentSpec {
  std::vector<SystemChoice> systems;
  double window = 2.0;
  double cadence = 0.01;
  NoiseSpec noise;
  MaskSpec mask;
  NetworkConfig network;
  TrainingSchedule schedule;
  /// "standard", "fast-A" or "custom".
  std::string schedule_preset = "standard";
  UkfConfig ukf;
  /// Per-system UKF overrides keyed by label.
  std::map<std::string, UkfConfig> ukf_by_system;
  bool run_ukf = true;
  /// Replace the UKF config by the best one of the built-in sweep.
  bool ukf_sweep = false;
  std::size_t restarts = 20;
  std::filesystem::path out = "runs";
  std::uint64_t seed = 0;

  std::vector<double> noise_levels{0.0, 0.01, 0.02, 0.05};
  std::vector<NoiseKind> noise_kinds{NoiseKind::Gaussian, NoiseKind::Uniform};
  std::vector<double> windows{0.2, 0.5, 2.0};
  std::vector<std::size_t> collocation_multipliers{0, 1, 5, 20};
  /// Data study: scale batch sizes with each cell's point count so every cell
  /// gets the optimizer steps of the full-window run ("proportional"), or keep
  /// them as scheduled ("fixed").
  std::string data_batch_scaling = "proportional";
  /// Epochs at which the convergence trace stores network snapshots.
  std::vector<std::size_t> snapshot_epochs;
  /// Grid spacing of the true trajectory used to score state approximation.
  double state_grid_step = 0.005;

  /// The source document (plus CLI seed override); hashed into the manifest.
  io::json document;

  /// Throws ConfigError naming the offending field. Relative model paths
  /// resolve against `base_dir`.
  static ExperimentSpec from_json(const io::json& doc, const std::filesystem::path& base_dir = ".");
  static ExperimentSpec read(const std::filesystem::path& path);
  void validate() const;

  const SystemChoice& system() const { return systems.front(); }
  UkfConfig ukf_for(const std::string& label) const;
  /// Training schedule with the restart count and derived seed applied.
  TrainingSchedule training_schedule() const;
  std::uint64_t noise_seed() const;
  std::uint64_t mask_seed() const;
};

struct DataSet {
  Trajectory truth;
  MeasurementSet measurements;
};

/// Simulates `model` from rest over `window` and samples it with the spec's
/// cadence, noise and mask.
DataSet make_data(const ExperimentSpec& spec, const PowerSystemModel& model);
DataSet make_data(const ExperimentSpec& spec, const PowerSystemModel& model, const NoiseSpec& noise,
                  const MaskSpec& mask);

/// Relative errors per restart and method, grouped into cells.
class ScoreTable {
 public:
  struct Row {
    std::string cell;
    std::string method;
    std::size_t restart = 0;
    /// m then d; NaN for failed restarts.
    Eigen::VectorXd errors;
  };

  struct Summary {
    std::string cell;
    std::string method;
    std::string parameter;
    std::size_t n = 0;
    double median = 0, q1 = 0, q3 = 0, min = 0, max = 0, whisker_low = 0, whisker_high = 0;
  };

  explicit ScoreTable(std::vector<std::string> parameter_names);

  void add(std::string cell, std::string method, std::size_t restart, Eigen::VectorXd errors);
  void add_pinn(const std::string& cell, const EstimationReport& report, const PowerSystemModel& truth);
  void add_ukf(const std::string& cell, const UkfReport& report, const PowerSystemModel& truth);
  void merge(const ScoreTable& other);

  const std::vector<Row>& rows() const { return rows_; }
  const std::vector<std::string>& parameter_names() const { return names_; }
  std::vector<std::string> cells() const;

  /// Finite errors of one parameter column in a cell.
  std::vector<double> column(const std::string& cell, const std::string& method, std::size_t parameter) const;
  Eigen::VectorXd medians(const std::string& cell, const std::string& method) const;
  Eigen::VectorXd best(const std::string& cell, const std::string& method) const;
  std::vector<Summary> summarize() const;

  void write_errors_csv(std::ostream& out) const;
  void write_summary_csv(std::ostream& out) const;
  /// Boxplot per cell and parameter; UKF rows are drawn as diamonds.
  std::string render_svg(const std::string& title) const;

  /// Wall-clock seconds per cell; kept out of the CSVs so reruns stay byte-identical.
  std::map<std::string, double> wall_seconds;

 private:
  std::vector<std::string> names_;
  std::vector<Row> rows_;
};

/// Quartiles by linear interpolation between order statistics.
double quantile(std::vector<double> sorted_or_not, double q);

struct SweepEntry {
  UkfConfig config;
  double innovation_nll = 0.0;
  bool ok = false;
  std::string failure;
};

/// Fixed grid over initial guess, initial parameter variance, R floor and
/// state process noise, ranked by summed innovation NLL. Uses no ground truth.
std::vector<SweepEntry> sweep_ukf(const MeasurementSet& data, const PowerSystemModel& structure,
                                  const UkfConfig& base);

/// `rank,initial_parameter,initial_parameter_variance,r_floor,q_dynamics,innovation_nll,ok`
void write_sweep_csv(std::ostream& out, const std::vector<SweepEntry>& sweep);

/// m1.. for generators, then d1.. for every bus.
std::vector<std::string> parameter_names(const PowerSystemModel& model);

/// Largest |u_k(t) - delta_k(t)| over the truth samples inside the data window.
double state_error(const PinnEstimator& est, const Trajectory& truth, double window);

struct AccuracyResult {
  ScoreTable table;
  std::map<std::string, EstimationReport> pinn;
  std::map<std::string, UkfReport> ukf;
  std::map<std::string, DataSet> data;
};

AccuracyResult run_accuracy_study(const ExperimentSpec& spec);
ScoreTable run_noise_study(const ExperimentSpec& spec);
ScoreTable run_data_study(const ExperimentSpec& spec);
/// Batch sizes rescaled from `reference_points` to `points`, at least 1 each.
std::vector<std::size_t> scaled_batch_sizes(const std::vector<std::size_t>& batch_sizes, std::size_t points,
                                            std::size_t reference_points);
ScoreTable run_masking_study(const ExperimentSpec& spec);

struct ConvergenceTrace {
  /// Per restart: epoch rows [m..., d..., state_error].
  std::vector<Eigen::MatrixXd> pinn;
  std::vector<std::vector<LossRecord>> losses;
  UkfReport ukf;
  /// (epoch, network angles on the truth grid) for restart 0.
  std::vector<std::pair<std::size_t, Eigen::MatrixXd>> snapshots;
  DataSet data;
  /// First epoch with state error < 0.01 rad and first with all parameter
  /// errors < 10%, for restart 0; nullopt when never reached.
  std::optional<std::size_t> state_epoch;
  std::optional<std::size_t> parameter_epoch;
};

ConvergenceTrace run_convergence_trace(const ExperimentSpec& spec);

/// Runs `name` and writes its CSVs, SVG and manifest under spec.out.
void run_study(const std::string& name, const ExperimentSpec& spec);
/// Re-renders SVGs from the errors CSVs found in `dir`.
void render_plots(const std::filesystem::path& dir);

/// Writes manifest.json: spec hash, seed, versions and timings.
void write_manifest(const ExperimentSpec& spec, const std::string& command, const io::json& timings,
                    const io::json& extra = io::json::object());

/// FNV-1a 64-bit over the bytes of `text`.
std::uint64_t fnv1a(const std::string& text);

/// Command line entry point; returns 0, 1 (invalid input) or 2 (runtime failure).
int run_cli(int argc, const char* const* argv);

}  // namespace swingid
