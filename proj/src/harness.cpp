#include "swingid/harness.hpp"

#include "swingid/csv.hpp"
#include "swingid/seed.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#ifndef SWINGID_VERSION
#define SWINGID_VERSION "unknown"
#endif

namespace swingid {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using io::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Typed access to one JSON object; every error names the dotted field path and
// unknown keys are rejected by finish().
class Fields {
 public:
  Fields(const json& doc, std::string where) : doc_(doc), where_(std::move(where)) {
    if (!doc_.is_object()) throw ConfigError(label() + " must be a JSON object");
  }

  std::string name(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  bool has(const std::string& key) {
    seen_.insert(key);
    return doc_.contains(key);
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return doc_.at(key);
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const json& v = doc_.at(key);
    if (!v.is_number()) throw ConfigError("field '" + name(key) + "' must be a number");
    return v.get<double>();
  }

  std::size_t count(const std::string& key, std::size_t fallback) {
    if (!has(key)) return fallback;
    return as_count(doc_.at(key), name(key));
  }

  bool flag(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = doc_.at(key);
    if (!v.is_boolean()) throw ConfigError("field '" + name(key) + "' must be true or false");
    return v.get<bool>();
  }

  std::string text(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const json& v = doc_.at(key);
    if (!v.is_string()) throw ConfigError("field '" + name(key) + "' must be a string");
    return v.get<std::string>();
  }

  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) {
    if (!has(key)) return fallback;
    const json& v = doc_.at(key);
    if (!v.is_array()) throw ConfigError("field '" + name(key) + "' must be an array of numbers");
    std::vector<double> out;
    for (const auto& x : v) {
      if (!x.is_number()) throw ConfigError("field '" + name(key) + "' must be an array of numbers");
      out.push_back(x.get<double>());
    }
    return out;
  }

  std::vector<std::size_t> counts(const std::string& key, std::vector<std::size_t> fallback) {
    if (!has(key)) return fallback;
    const json& v = doc_.at(key);
    if (!v.is_array()) throw ConfigError("field '" + name(key) + "' must be an array of counts");
    std::vector<std::size_t> out;
    for (const auto& x : v) out.push_back(as_count(x, name(key)));
    return out;
  }

  std::vector<std::string> texts(const std::string& key, std::vector<std::string> fallback) {
    if (!has(key)) return fallback;
    const json& v = doc_.at(key);
    if (v.is_string()) return {v.get<std::string>()};
    if (!v.is_array()) throw ConfigError("field '" + name(key) + "' must be a string or an array of strings");
    std::vector<std::string> out;
    for (const auto& x : v) {
      if (!x.is_string()) throw ConfigError("field '" + name(key) + "' must be an array of strings");
      out.push_back(x.get<std::string>());
    }
    return out;
  }

  void finish() const {
    for (auto it = doc_.begin(); it != doc_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown field '" + name(it.key()) + "'");
    }
  }

 private:
  std::string label() const { return where_.empty() ? "config" : "field '" + where_ + "'"; }

  static std::size_t as_count(const json& v, const std::string& field) {
    if (!v.is_number_integer() && !v.is_number_unsigned()) {
      throw ConfigError("field '" + field + "' must be a nonnegative integer");
    }
    if (v.is_number_integer() && v.get<long long>() < 0) {
      throw ConfigError("field '" + field + "' must be a nonnegative integer");
    }
    return v.get<std::size_t>();
  }

  const json& doc_;
  std::string where_;
  std::set<std::string> seen_;
};

// Runs `fn` and rethrows library validation errors as ConfigError naming `field`.
template <typename Fn>
auto as_config(const std::string& field, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("field '" + field + "': " + e.what());
  }
}

VectorXd to_eigen(const std::vector<double>& v) {
  return v.empty() ? VectorXd() : Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

NetworkConfig parse_network(const json& doc, NetworkConfig cfg) {
  Fields f(doc, "network");
  if (f.has("hidden")) {
    cfg.hidden.clear();
    for (const auto h : f.counts("hidden", {})) cfg.hidden.push_back(static_cast<int>(h));
  }
  cfg.time_scale = f.number("time_scale", cfg.time_scale);
  cfg.output_scaling = f.flag("output_scaling", cfg.output_scaling);
  f.finish();
  as_config("network", [&] { cfg.validate(); return 0; });
  return cfg;
}

TrainingSchedule preset_schedule(const std::string& name, const std::string& field) {
  if (name == "standard") return TrainingSchedule::standard();
  if (name == "fast-A") return TrainingSchedule::fast_a();
  throw ConfigError("field '" + field + "' must be \"standard\" or \"fast-A\", got \"" + name + "\"");
}

TrainingSchedule parse_schedule(const json& doc, std::string& preset) {
  if (doc.is_string()) {
    preset = doc.get<std::string>();
    return preset_schedule(preset, "schedule");
  }
  Fields f(doc, "schedule");
  preset = f.text("preset", "standard");
  TrainingSchedule s = preset_schedule(preset, "schedule.preset");
  const bool customized = doc.size() > (doc.contains("preset") ? 1u : 0u);
  s.batch_sizes = f.counts("batch_sizes", s.batch_sizes);
  s.epochs_per_stage = f.counts("epochs_per_stage", s.epochs_per_stage);
  s.collocation_per_measurement = f.count("collocation_per_measurement", s.collocation_per_measurement);
  s.learning_rate = f.number("learning_rate", s.learning_rate);
  s.physics_weight = f.number("physics_weight", s.physics_weight);
  s.initial_parameter = f.number("initial_parameter", s.initial_parameter);
  s.threads = f.count("threads", s.threads);
  f.finish();
  if (customized) preset = "custom";
  as_config("schedule", [&] { s.validate(); return 0; });
  return s;
}

UkfConfig parse_ukf(const json& doc, UkfConfig cfg, const std::string& where) {
  Fields f(doc, where);
  cfg.alpha = f.number("alpha", cfg.alpha);
  cfg.beta = f.number("beta", cfg.beta);
  cfg.kappa = f.number("kappa", cfg.kappa);
  cfg.q_dynamics = f.number("q_dynamics", cfg.q_dynamics);
  cfg.q_parameters = f.number("q_parameters", cfg.q_parameters);
  cfg.noise_level = f.number("noise_level", cfg.noise_level);
  cfg.r_floor = f.number("r_floor", cfg.r_floor);
  cfg.substeps = static_cast<int>(f.count("substeps", static_cast<std::size_t>(cfg.substeps)));
  cfg.initial_inertia = to_eigen(f.numbers("initial_inertia", {}));
  cfg.initial_damping = to_eigen(f.numbers("initial_damping", {}));
  cfg.initial_parameter = f.number("initial_parameter", cfg.initial_parameter);
  cfg.initial_state_variance = f.number("initial_state_variance", cfg.initial_state_variance);
  cfg.initial_parameter_variance = f.number("initial_parameter_variance", cfg.initial_parameter_variance);
  const std::string coupling = f.text("coupling", cfg.coupling == CouplingLaw::Sine ? "sine" : "linear");
  if (coupling == "sine") {
    cfg.coupling = CouplingLaw::Sine;
  } else if (coupling == "linear") {
    cfg.coupling = CouplingLaw::Linear;
  } else {
    throw ConfigError("field '" + f.name("coupling") + "' must be \"sine\" or \"linear\"");
  }
  f.finish();
  as_config(where, [&] { cfg.validate(); return 0; });
  return cfg;
}

json ukf_to_json(const UkfConfig& c) {
  json j = {{"alpha", c.alpha},
            {"beta", c.beta},
            {"kappa", c.kappa},
            {"q_dynamics", c.q_dynamics},
            {"q_parameters", c.q_parameters},
            {"noise_level", c.noise_level},
            {"r_floor", c.r_floor},
            {"substeps", c.substeps},
            {"initial_parameter", c.initial_parameter},
            {"initial_state_variance", c.initial_state_variance},
            {"initial_parameter_variance", c.initial_parameter_variance},
            {"coupling", c.coupling == CouplingLaw::Sine ? "sine" : "linear"}};
  if (c.initial_inertia.size()) j["initial_inertia"] = std::vector<double>(c.initial_inertia.begin(), c.initial_inertia.end());
  if (c.initial_damping.size()) j["initial_damping"] = std::vector<double>(c.initial_damping.begin(), c.initial_damping.end());
  return j;
}

SystemChoice preset_choice(const std::string& label, const NetworkConfig& network) {
  if (label == "C'") {
    NetworkConfig reduced = network;
    reduced.hidden = NetworkConfig::reduced().hidden;
    return {label, preset(SystemId::C), reduced};
  }
  try {
    return {label, preset(parse_system_id(label)), network};
  } catch (const std::exception&) {
    throw ConfigError("field 'systems' has unknown system '" + label + "'; expected A, B, C or C'");
  }
}

std::string file_label(const std::string& label) {
  std::string out;
  for (const char c : label) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') {
      out += c;
    } else if (c == '\'') {
      out += "prime";
    } else {
      out += '_';
    }
  }
  return out;
}

VectorXd truth_vector(const PowerSystemModel& model) {
  VectorXd t(model.inertia().size() + model.damping().size());
  t << model.inertia(), model.damping();
  return t;
}

std::string level_cell(NoiseKind kind, double level) {
  if (kind == NoiseKind::None || level == 0.0) return "noiseless";
  return to_string(kind) + "-" + csv::format(level);
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void write_file(const std::filesystem::path& path, const std::string& text) { io::write_text_file(path.string(), text); }

template <typename Writer>
void write_stream(const std::filesystem::path& path, Writer&& writer) {
  std::ostringstream out;
  writer(out);
  write_file(path, out.str());
}

void write_table(const std::filesystem::path& dir, const std::string& stem, const ScoreTable& table,
                 const std::string& title) {
  write_stream(dir / (stem + "_errors.csv"), [&](std::ostream& o) { table.write_errors_csv(o); });
  write_stream(dir / (stem + "_summary.csv"), [&](std::ostream& o) { table.write_summary_csv(o); });
  write_file(dir / (stem + ".svg"), table.render_svg(title));
}

json timings_of(const ScoreTable& table, double total) {
  json t = {{"total_seconds", total}};
  for (const auto& [cell, secs] : table.wall_seconds) t["cells"][cell] = secs;
  return t;
}

}  // namespace

// ---------------------------------------------------------------- spec

ExperimentSpec ExperimentSpec::from_json(const json& doc, const std::filesystem::path& base_dir) {
  ExperimentSpec spec;
  Fields f(doc, "");
  spec.document = doc;

  if (f.has("network")) spec.network = parse_network(f.raw("network"), spec.network);

  const bool has_model = f.has("model_file");
  const bool has_system = f.has("system") || f.has("systems");
  if (has_model && has_system) throw ConfigError("fields 'model_file' and 'system' are mutually exclusive");
  if (has_model) {
    const std::filesystem::path rel = f.text("model_file", "");
    const std::filesystem::path path = rel.is_absolute() ? rel : base_dir / rel;
    if (!std::filesystem::exists(path)) throw ConfigError("field 'model_file': file '" + path.string() + "' not found");
    spec.systems.push_back({f.text("label", path.stem().string()), io::read_model_file(path.string()), spec.network});
  } else {
    std::vector<std::string> labels = f.texts("systems", {});
    if (f.has("system")) {
      if (!labels.empty()) throw ConfigError("fields 'system' and 'systems' are mutually exclusive");
      labels = f.texts("system", {});
    }
    if (labels.empty()) labels = {"A"};
    for (const auto& l : labels) spec.systems.push_back(preset_choice(l, spec.network));
    f.has("label");
  }

  spec.window = f.number("window", spec.window);
  spec.cadence = f.number("cadence", spec.cadence);

  if (f.has("noise")) {
    Fields n(f.raw("noise"), "noise");
    spec.noise.kind = as_config("noise.kind", [&] { return parse_noise_kind(n.text("kind", "none")); });
    spec.noise.level = n.number("level", 0.0);
    spec.noise.additive = n.flag("additive", false);
    n.finish();
  }
  if (f.has("mask")) {
    const json& m = f.raw("mask");
    if (m.is_string()) {
      spec.mask.scenario = as_config("mask", [&] { return parse_mask_scenario(m.get<std::string>()); });
    } else {
      Fields mf(m, "mask");
      spec.mask.scenario = as_config("mask.scenario", [&] { return parse_mask_scenario(mf.text("scenario", "full")); });
      spec.mask.buses = mf.counts("buses", spec.mask.buses);
      spec.mask.keep_probability = mf.number("keep_probability", spec.mask.keep_probability);
      mf.finish();
    }
  }

  if (f.has("schedule")) spec.schedule = parse_schedule(f.raw("schedule"), spec.schedule_preset);
  if (f.has("ukf")) spec.ukf = parse_ukf(f.raw("ukf"), spec.ukf, "ukf");
  if (f.has("ukf_by_system")) {
    const json& by = f.raw("ukf_by_system");
    if (!by.is_object()) throw ConfigError("field 'ukf_by_system' must be an object keyed by system label");
    for (auto it = by.begin(); it != by.end(); ++it) {
      spec.ukf_by_system[it.key()] = parse_ukf(it.value(), spec.ukf, "ukf_by_system." + it.key());
    }
  }
  spec.run_ukf = f.flag("run_ukf", spec.run_ukf);
  spec.ukf_sweep = f.flag("ukf_sweep", spec.ukf_sweep);
  spec.restarts = f.count("restarts", spec.restarts);
  spec.out = f.text("out", spec.out.string());
  spec.seed = f.count("seed", spec.seed);

  spec.noise_levels = f.numbers("noise_levels", spec.noise_levels);
  if (f.has("noise_kinds")) {
    spec.noise_kinds.clear();
    for (const auto& k : f.texts("noise_kinds", {})) {
      spec.noise_kinds.push_back(as_config("noise_kinds", [&] { return parse_noise_kind(k); }));
    }
  }
  spec.windows = f.numbers("windows", spec.windows);
  spec.collocation_multipliers = f.counts("collocation_multipliers", spec.collocation_multipliers);
  spec.snapshot_epochs = f.counts("snapshot_epochs", spec.snapshot_epochs);
  spec.state_grid_step = f.number("state_grid_step", spec.state_grid_step);
  spec.data_batch_scaling = f.text("data_batch_scaling", spec.data_batch_scaling);
  f.finish();
  spec.validate();
  return spec;
}

ExperimentSpec ExperimentSpec::read(const std::filesystem::path& path) {
  return from_json(io::read_json_file(path.string()), path.parent_path());
}

void ExperimentSpec::validate() const {
  if (systems.empty()) throw ConfigError("field 'systems' must name at least one system");
  if (!(cadence > 0.0)) throw ConfigError("field 'cadence' must be positive");
  if (!(window >= 2.0 * cadence)) throw ConfigError("field 'window' must cover at least two cadence intervals");
  if (!(noise.level >= 0.0 && noise.level <= 0.1)) throw ConfigError("field 'noise.level' must lie in [0, 0.1]");
  if (noise.kind == NoiseKind::None && noise.level != 0.0) {
    throw ConfigError("field 'noise.kind' must be set when 'noise.level' is nonzero");
  }
  if (!(mask.keep_probability >= 0.0 && mask.keep_probability <= 1.0)) {
    throw ConfigError("field 'mask.keep_probability' must lie in [0, 1]");
  }
  for (const auto b : mask.buses) {
    for (const auto& s : systems) {
      if (b >= s.model.n_buses()) throw ConfigError("field 'mask.buses' names a bus outside the model");
    }
  }
  if (restarts == 0) throw ConfigError("field 'restarts' must be positive");
  for (const double l : noise_levels) {
    if (!(l >= 0.0 && l <= 0.05)) throw ConfigError("field 'noise_levels' entries must lie in [0, 0.05]");
  }
  for (const double w : windows) {
    if (!(w > 0.0 && w <= window)) throw ConfigError("field 'windows' entries must lie in (0, window]");
    if (!(w >= 2.0 * cadence)) throw ConfigError("field 'windows' entries must cover two cadence intervals");
  }
  if (!(state_grid_step > 0.0)) throw ConfigError("field 'state_grid_step' must be positive");
  if (data_batch_scaling != "proportional" && data_batch_scaling != "fixed") {
    throw ConfigError("field 'data_batch_scaling' must be \"proportional\" or \"fixed\"");
  }
}

UkfConfig ExperimentSpec::ukf_for(const std::string& label) const {
  const auto it = ukf_by_system.find(label);
  return it == ukf_by_system.end() ? ukf : it->second;
}

TrainingSchedule ExperimentSpec::training_schedule() const {
  TrainingSchedule s = schedule;
  s.restart_count = restarts;
  s.seed = derive_seed(seed, {1});
  return s;
}

std::uint64_t ExperimentSpec::noise_seed() const { return derive_seed(seed, {2}); }
std::uint64_t ExperimentSpec::mask_seed() const { return derive_seed(seed, {3}); }

// ---------------------------------------------------------------- data

DataSet make_data(const ExperimentSpec& spec, const PowerSystemModel& model) {
  return make_data(spec, model, spec.noise, spec.mask);
}

DataSet make_data(const ExperimentSpec& spec, const PowerSystemModel& model, const NoiseSpec& noise,
                  const MaskSpec& mask) {
  const double sub = std::max(1.0, std::round(spec.cadence / spec.state_grid_step));
  DataSet out;
  out.truth = integrate(model, SystemState::zero(model), spec.window, spec.cadence / sub);
  NoiseSpec n = noise;
  n.seed = spec.noise_seed();
  MaskSpec m = mask;
  m.seed = spec.mask_seed();
  out.measurements = sample_measurements(out.truth, spec.cadence, n, m);
  return out;
}

// ---------------------------------------------------------------- scoring

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

ScoreTable::ScoreTable(std::vector<std::string> parameter_names) : names_(std::move(parameter_names)) {}

void ScoreTable::add(std::string cell, std::string method, std::size_t restart, VectorXd errors) {
  if (errors.size() != static_cast<Eigen::Index>(names_.size())) {
    throw std::invalid_argument("ScoreTable: error vector size does not match parameter count");
  }
  for (const double e : errors) {
    if (e < 0.0) throw std::invalid_argument("ScoreTable: relative errors must be nonnegative");
  }
  rows_.push_back({std::move(cell), std::move(method), restart, std::move(errors)});
}

void ScoreTable::add_pinn(const std::string& cell, const EstimationReport& report, const PowerSystemModel& truth) {
  const MatrixXd err = report.relative_errors(truth.inertia(), truth.damping());
  for (Eigen::Index r = 0; r < err.rows(); ++r) add(cell, "pinn", static_cast<std::size_t>(r), err.row(r).transpose());
  wall_seconds[cell] += report.wall_seconds;
}

void ScoreTable::add_ukf(const std::string& cell, const UkfReport& report, const PowerSystemModel& truth) {
  VectorXd est(truth.inertia().size() + truth.damping().size());
  if (report.steps.empty()) {
    est.setConstant(kNaN);
  } else {
    est << report.final_inertia(), report.final_damping();
  }
  add(cell, "ukf", 0, (est - truth_vector(truth)).cwiseAbs().cwiseQuotient(truth_vector(truth)));
}

void ScoreTable::merge(const ScoreTable& other) {
  if (other.names_ != names_) throw std::invalid_argument("ScoreTable: cannot merge tables with different parameters");
  rows_.insert(rows_.end(), other.rows_.begin(), other.rows_.end());
  for (const auto& [cell, secs] : other.wall_seconds) wall_seconds[cell] += secs;
}

std::vector<std::string> ScoreTable::cells() const {
  std::vector<std::string> out;
  for (const auto& r : rows_) {
    if (std::find(out.begin(), out.end(), r.cell) == out.end()) out.push_back(r.cell);
  }
  return out;
}

std::vector<double> ScoreTable::column(const std::string& cell, const std::string& method,
                                       std::size_t parameter) const {
  std::vector<double> out;
  for (const auto& r : rows_) {
    if (r.cell != cell || r.method != method) continue;
    const double e = r.errors(static_cast<Eigen::Index>(parameter));
    if (std::isfinite(e)) out.push_back(e);
  }
  return out;
}

VectorXd ScoreTable::medians(const std::string& cell, const std::string& method) const {
  VectorXd m(static_cast<Eigen::Index>(names_.size()));
  for (std::size_t p = 0; p < names_.size(); ++p) m(static_cast<Eigen::Index>(p)) = quantile(column(cell, method, p), 0.5);
  return m;
}

VectorXd ScoreTable::best(const std::string& cell, const std::string& method) const {
  VectorXd b(static_cast<Eigen::Index>(names_.size()));
  for (std::size_t p = 0; p < names_.size(); ++p) {
    const auto col = column(cell, method, p);
    b(static_cast<Eigen::Index>(p)) = col.empty() ? kNaN : *std::min_element(col.begin(), col.end());
  }
  return b;
}

std::vector<ScoreTable::Summary> ScoreTable::summarize() const {
  std::vector<Summary> out;
  std::vector<std::pair<std::string, std::string>> groups;
  for (const auto& r : rows_) {
    const std::pair<std::string, std::string> key{r.cell, r.method};
    if (std::find(groups.begin(), groups.end(), key) == groups.end()) groups.push_back(key);
  }
  for (const auto& [cell, method] : groups) {
    for (std::size_t p = 0; p < names_.size(); ++p) {
      auto col = column(cell, method, p);
      Summary s;
      s.cell = cell;
      s.method = method;
      s.parameter = names_[p];
      s.n = col.size();
      if (col.empty()) {
        s.median = s.q1 = s.q3 = s.min = s.max = s.whisker_low = s.whisker_high = kNaN;
      } else {
        std::sort(col.begin(), col.end());
        s.median = quantile(col, 0.5);
        s.q1 = quantile(col, 0.25);
        s.q3 = quantile(col, 0.75);
        s.min = col.front();
        s.max = col.back();
        const double iqr = s.q3 - s.q1;
        s.whisker_low = *std::find_if(col.begin(), col.end(), [&](double v) { return v >= s.q1 - 1.5 * iqr; });
        s.whisker_high = *std::find_if(col.rbegin(), col.rend(), [&](double v) { return v <= s.q3 + 1.5 * iqr; });
      }
      out.push_back(s);
    }
  }
  return out;
}

void ScoreTable::write_errors_csv(std::ostream& out) const {
  out << "cell,method,restart";
  for (const auto& n : names_) out << ',' << n;
  out << '\n';
  for (const auto& r : rows_) {
    out << r.cell << ',' << r.method << ',' << r.restart;
    for (const double e : r.errors) {
      out << ',';
      if (std::isfinite(e)) out << csv::format(e);
    }
    out << '\n';
  }
}

void ScoreTable::write_summary_csv(std::ostream& out) const {
  out << "cell,method,parameter,n,median,q1,q3,min,max,whisker_low,whisker_high\n";
  auto field = [&](double v) {
    out << ',';
    if (std::isfinite(v)) out << csv::format(v);
  };
  for (const auto& s : summarize()) {
    out << s.cell << ',' << s.method << ',' << s.parameter << ',' << s.n;
    for (const double v : {s.median, s.q1, s.q3, s.min, s.max, s.whisker_low, s.whisker_high}) field(v);
    out << '\n';
  }
}

std::string ScoreTable::render_svg(const std::string& title) const {
  const auto cell_list = cells();
  const double panel_w = std::max(160.0, 60.0 * static_cast<double>(cell_list.size()) + 40.0);
  const double panel_h = 260.0, left = 60.0, top = 50.0, gap = 30.0;
  const std::size_t per_row = 3;
  const std::size_t n_rows = (names_.size() + per_row - 1) / per_row;
  const double width = left + per_row * (panel_w + gap);
  const double height = top + n_rows * (panel_h + 90.0);
  const double lo = -5.0, hi = 1.0;  // log10 relative error range
  auto y_of = [&](double v, double y0) {
    const double l = std::clamp(std::log10(std::max(v, 1e-12)), lo, hi);
    return y0 + panel_h * (hi - l) / (hi - lo);
  };

  std::ostringstream s;
  s << std::fixed << std::setprecision(1);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << left << "\" y=\"24\" font-size=\"15\">" << title
    << " (relative error, log scale; boxes: PINN quartiles, whiskers 1.5 IQR; diamonds: UKF)</text>\n";
  const auto summaries = summarize();
  for (std::size_t p = 0; p < names_.size(); ++p) {
    const double x0 = left + static_cast<double>(p % per_row) * (panel_w + gap);
    const double y0 = top + static_cast<double>(p / per_row) * (panel_h + 90.0);
    s << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << panel_w << "\" height=\"" << panel_h
      << "\" fill=\"none\" stroke=\"#888\"/>\n";
    s << "<text x=\"" << x0 + panel_w / 2 << "\" y=\"" << y0 - 6 << "\" text-anchor=\"middle\">" << names_[p]
      << "</text>\n";
    for (int e = static_cast<int>(lo); e <= static_cast<int>(hi); ++e) {
      const double y = y_of(std::pow(10.0, e), y0);
      s << "<line x1=\"" << x0 << "\" x2=\"" << x0 + panel_w << "\" y1=\"" << y << "\" y2=\"" << y
        << "\" stroke=\"#eee\"/>\n";
      if (p % per_row == 0) s << "<text x=\"" << x0 - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">1e" << e << "</text>\n";
    }
    for (std::size_t c = 0; c < cell_list.size(); ++c) {
      const double cx = x0 + 30.0 + 60.0 * static_cast<double>(c);
      s << "<text x=\"" << cx << "\" y=\"" << y0 + panel_h + 14 << "\" text-anchor=\"end\" transform=\"rotate(-35 " << cx
        << ' ' << y0 + panel_h + 14 << ")\">" << cell_list[c] << "</text>\n";
      for (const auto& sm : summaries) {
        if (sm.cell != cell_list[c] || sm.parameter != names_[p] || sm.n == 0) continue;
        if (sm.method == "pinn") {
          s << "<line x1=\"" << cx << "\" x2=\"" << cx << "\" y1=\"" << y_of(sm.whisker_low, y0) << "\" y2=\""
            << y_of(sm.whisker_high, y0) << "\" stroke=\"#333\"/>\n";
          const double yq3 = y_of(sm.q3, y0), yq1 = y_of(sm.q1, y0);
          s << "<rect x=\"" << cx - 12 << "\" y=\"" << yq3 << "\" width=\"24\" height=\"" << std::max(1.0, yq1 - yq3)
            << "\" fill=\"#9cc3e6\" stroke=\"#333\"/>\n";
          const double ym = y_of(sm.median, y0);
          s << "<line x1=\"" << cx - 12 << "\" x2=\"" << cx + 12 << "\" y1=\"" << ym << "\" y2=\"" << ym
            << "\" stroke=\"#c00\" stroke-width=\"2\"/>\n";
        } else {
          const double y = y_of(sm.median, y0);
          s << "<polygon points=\"" << cx + 18 << ',' << y - 6 << ' ' << cx + 24 << ',' << y << ' ' << cx + 18 << ','
            << y + 6 << ' ' << cx + 12 << ',' << y << "\" fill=\"#e6a23c\" stroke=\"#333\"/>\n";
        }
      }
    }
  }
  s << "</svg>\n";
  return s.str();
}

// ---------------------------------------------------------------- estimation helpers

std::vector<SweepEntry> sweep_ukf(const MeasurementSet& data, const PowerSystemModel& structure,
                                  const UkfConfig& base) {
  std::vector<SweepEntry> entries;
  for (const double guess : {0.1, 1.0, 3.0}) {
    for (const double var : {1.0, 10.0}) {
      for (const double floor : {1e-6, 1e-8}) {
        for (const double q : {1e-6, 1e-8, 1e-10}) {
          SweepEntry e;
          e.config = base;
          e.config.initial_inertia.resize(0);
          e.config.initial_damping.resize(0);
          e.config.initial_parameter = guess;
          e.config.initial_parameter_variance = var;
          e.config.r_floor = floor;
          e.config.q_dynamics = q;
          try {
            const UkfReport r = replay(data, structure, e.config);
            e.innovation_nll = r.innovation_nll;
            e.ok = std::isfinite(r.innovation_nll);
            if (!e.ok) e.failure = "non-finite innovation likelihood";
          } catch (const UkfError& err) {
            e.failure = err.what();
          }
          entries.push_back(std::move(e));
        }
      }
    }
  }
  std::stable_sort(entries.begin(), entries.end(), [](const SweepEntry& a, const SweepEntry& b) {
    if (a.ok != b.ok) return a.ok;
    return a.ok && a.innovation_nll < b.innovation_nll;
  });
  return entries;
}

double state_error(const PinnEstimator& est, const Trajectory& truth, double window) {
  double worst = 0.0;
  for (std::size_t i = 0; i < truth.size() && truth.times[i] <= window + 1e-12; ++i) {
    worst = std::max(worst, (est.forward(truth.times[i]).u - truth.delta.row(static_cast<Eigen::Index>(i)).transpose())
                                .cwiseAbs()
                                .maxCoeff());
  }
  return worst;
}

namespace {

EstimationReport train_checked(const SystemChoice& sys, const MeasurementSet& data, const TrainingSchedule& sched,
                               const EpochObserver& observer = {}) {
  EstimationReport report = train(KnownStructure::of(sys.model), data, sys.network, sched, observer);
  const bool any_ok = std::any_of(report.restarts.begin(), report.restarts.end(), [](const auto& r) { return r.ok; });
  if (!any_ok) {
    throw std::runtime_error("system " + sys.label + ": every restart failed (" + report.restarts.front().failure + ")");
  }
  return report;
}

struct UkfRun {
  UkfReport report;
  UkfConfig config;
  std::vector<SweepEntry> sweep;
  std::string failure;
};

UkfRun run_ukf(const ExperimentSpec& spec, const SystemChoice& sys, const MeasurementSet& data) {
  UkfRun run;
  run.config = spec.ukf_for(sys.label);
  if (spec.ukf_sweep) {
    run.sweep = sweep_ukf(data, sys.model, run.config);
    if (run.sweep.front().ok) run.config = run.sweep.front().config;
  }
  try {
    run.report = replay(data, sys.model, run.config);
  } catch (const UkfError& e) {
    run.failure = e.what();
  }
  return run;
}

}  // namespace

// ---------------------------------------------------------------- studies

std::vector<std::string> parameter_names(const PowerSystemModel& model) {
  std::vector<std::string> names;
  for (std::size_t g = 0; g < model.n_generators(); ++g) names.push_back("m" + std::to_string(g + 1));
  for (std::size_t k = 0; k < model.n_buses(); ++k) names.push_back("d" + std::to_string(k + 1));
  return names;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepEntry>& sweep) {
  out << "rank,initial_parameter,initial_parameter_variance,r_floor,q_dynamics,innovation_nll,ok\n";
  for (std::size_t i = 0; i < sweep.size(); ++i) {
    const auto& e = sweep[i];
    out << i << ',' << csv::format(e.config.initial_parameter) << ',' << csv::format(e.config.initial_parameter_variance)
        << ',' << csv::format(e.config.r_floor) << ',' << csv::format(e.config.q_dynamics) << ',';
    if (e.ok) out << csv::format(e.innovation_nll);
    out << ',' << (e.ok ? 1 : 0) << '\n';
  }
}


AccuracyResult run_accuracy_study(const ExperimentSpec& spec) {
  AccuracyResult result{ScoreTable(parameter_names(spec.system().model)), {}, {}, {}};
  const TrainingSchedule sched = spec.training_schedule();
  for (const auto& sys : spec.systems) {
    DataSet data = make_data(spec, sys.model);
    EstimationReport report = train_checked(sys, data.measurements, sched);
    result.table.add_pinn(sys.label, report, sys.model);
    if (spec.run_ukf) {
      const auto start = std::chrono::steady_clock::now();
      UkfRun ukf = run_ukf(spec, sys, data.measurements);
      result.table.add_ukf(sys.label, ukf.report, sys.model);
      result.table.wall_seconds[sys.label] += seconds_since(start);
      result.ukf.emplace(sys.label, std::move(ukf.report));
    }
    result.pinn.emplace(sys.label, std::move(report));
    result.data.emplace(sys.label, std::move(data));
  }
  return result;
}

ScoreTable run_noise_study(const ExperimentSpec& spec) {
  const SystemChoice& sys = spec.system();
  ScoreTable table(parameter_names(sys.model));
  const TrainingSchedule sched = spec.training_schedule();
  std::set<std::string> done;
  for (const double level : spec.noise_levels) {
    for (const NoiseKind kind : spec.noise_kinds) {
      const std::string cell = level_cell(kind, level);
      if (!done.insert(cell).second) continue;
      NoiseSpec noise = spec.noise;
      noise.kind = level == 0.0 ? NoiseKind::None : kind;
      noise.level = level;
      const DataSet data = make_data(spec, sys.model, noise, spec.mask);
      table.add_pinn(cell, train_checked(sys, data.measurements, sched), sys.model);
    }
  }
  return table;
}

std::vector<std::size_t> scaled_batch_sizes(const std::vector<std::size_t>& batch_sizes, std::size_t points,
                                            std::size_t reference_points) {
  if (reference_points == 0) throw std::invalid_argument("scaled_batch_sizes: zero reference points");
  std::vector<std::size_t> out;
  for (const std::size_t b : batch_sizes) {
    const double scaled = std::round(static_cast<double>(b) * static_cast<double>(points) /
                                     static_cast<double>(reference_points));
    out.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(scaled)));
  }
  return out;
}

ScoreTable run_data_study(const ExperimentSpec& spec) {
  const SystemChoice& sys = spec.system();
  ScoreTable table(parameter_names(sys.model));
  const DataSet full = make_data(spec, sys.model);
  const TrainingSchedule base = spec.training_schedule();
  const std::size_t reference = full.measurements.size() * (1 + base.collocation_per_measurement);
  for (const double window : spec.windows) {
    const MeasurementSet data = full.measurements.truncated(window);
    for (const std::size_t mult : spec.collocation_multipliers) {
      TrainingSchedule sched = base;
      sched.collocation_per_measurement = mult;
      if (spec.data_batch_scaling == "proportional") {
        sched.batch_sizes = scaled_batch_sizes(base.batch_sizes, data.size() * (1 + mult), reference);
      }
      const std::string cell = "w" + csv::format(window) + "-c" + std::to_string(mult);
      table.add_pinn(cell, train_checked(sys, data, sched), sys.model);
    }
  }
  return table;
}

ScoreTable run_masking_study(const ExperimentSpec& spec) {
  const SystemChoice& sys = spec.system();
  ScoreTable table(parameter_names(sys.model));
  const TrainingSchedule sched = spec.training_schedule();
  const std::vector<std::pair<std::string, MaskScenario>> scenarios{{"full", MaskScenario::Full},
                                                                    {"A", MaskScenario::RandomHalf},
                                                                    {"B", MaskScenario::BusSubset},
                                                                    {"C", MaskScenario::AnglesOnly},
                                                                    {"D", MaskScenario::FrequenciesOnly}};
  for (const auto& [cell, scenario] : scenarios) {
    MaskSpec mask = spec.mask;
    mask.scenario = scenario;
    const DataSet data = make_data(spec, sys.model, spec.noise, mask);
    table.add_pinn(cell, train_checked(sys, data.measurements, sched), sys.model);
    if (spec.run_ukf && scenario != MaskScenario::RandomHalf) {
      UkfRun ukf = run_ukf(spec, sys, data.measurements);
      table.add_ukf(cell, ukf.report, sys.model);
    }
  }
  return table;
}

ConvergenceTrace run_convergence_trace(const ExperimentSpec& spec) {
  const SystemChoice& sys = spec.system();
  ConvergenceTrace trace;
  trace.data = make_data(spec, sys.model);
  const TrainingSchedule sched = spec.training_schedule();
  const double window = trace.data.measurements.times.back() + spec.cadence;

  std::vector<std::vector<double>> errors(sched.restart_count);
  std::vector<std::size_t> snaps = spec.snapshot_epochs;
  std::sort(snaps.begin(), snaps.end());
  const auto observer = [&](std::size_t r, std::size_t epoch, const PinnEstimator& est) {
    errors[r].push_back(state_error(est, trace.data.truth, window));
    if (r == 0 && std::binary_search(snaps.begin(), snaps.end(), epoch)) {
      MatrixXd u(static_cast<Eigen::Index>(trace.data.truth.size()), static_cast<Eigen::Index>(sys.model.n_buses()));
      for (std::size_t i = 0; i < trace.data.truth.size(); ++i) {
        u.row(static_cast<Eigen::Index>(i)) = est.forward(trace.data.truth.times[i]).u.transpose();
      }
      trace.snapshots.emplace_back(epoch, std::move(u));
    }
  };
  const EstimationReport report = train_checked(sys, trace.data.measurements, sched, observer);

  const VectorXd truth = truth_vector(sys.model);
  for (std::size_t r = 0; r < report.restarts.size(); ++r) {
    const auto& res = report.restarts[r];
    MatrixXd rows(static_cast<Eigen::Index>(res.parameter_trace.size()), truth.size() + 1);
    for (std::size_t e = 0; e < res.parameter_trace.size(); ++e) {
      rows.row(static_cast<Eigen::Index>(e)) << res.parameter_trace[e].transpose(), errors[r][e];
    }
    trace.pinn.push_back(std::move(rows));
    trace.losses.push_back(res.losses);
  }
  if (!trace.pinn.empty()) {
    const MatrixXd& first = trace.pinn.front();
    for (Eigen::Index e = 0; e < first.rows(); ++e) {
      const double err = first(e, truth.size());
      const VectorXd p = first.row(e).head(truth.size()).transpose();
      const double rel = (p - truth).cwiseAbs().cwiseQuotient(truth).maxCoeff();
      if (!trace.state_epoch && err < 0.01) trace.state_epoch = static_cast<std::size_t>(e);
      if (!trace.parameter_epoch && rel < 0.1) trace.parameter_epoch = static_cast<std::size_t>(e);
    }
  }
  if (spec.run_ukf) trace.ukf = run_ukf(spec, sys, trace.data.measurements).report;
  return trace;
}

// ---------------------------------------------------------------- outputs

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void write_manifest(const ExperimentSpec& spec, const std::string& command, const json& timings, const json& extra) {
  std::ostringstream hash;
  hash << std::hex << std::setw(16) << std::setfill('0') << fnv1a(spec.document.dump());
  json m = {{"command", command},
            {"spec_hash_fnv1a64", hash.str()},
            {"seed", spec.seed},
            {"spec", spec.document},
            {"schedule_preset", spec.schedule_preset},
            {"boxplot", "quartiles by linear interpolation between order statistics; whiskers at the most extreme "
                        "errors within 1.5 IQR of the box; failed restarts are excluded"},
            {"versions",
             {{"swingid", SWINGID_VERSION},
              {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)},
              {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
              {"compiler", __VERSION__}}},
            {"ukf", ukf_to_json(spec.ukf)},
            {"timings", timings}};
  if (spec.schedule_preset == "fast-A") {
    m["schedule_deviations"] =
        "fast-A: batch sizes {200, 800, 4000} with {100, 300, 1500} epochs, 10 collocation points per measurement, "
        "learning rate 2e-3; standard: batch sizes {200, 400, 800, 2000, 4000} with {100, 200, 400, 1000, 4000} "
        "epochs, 20 collocation points per measurement, learning rate 1e-3";
  }
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
  write_file(spec.out / "manifest.json", m.dump(2) + "\n");
}

void run_study(const std::string& name, const ExperimentSpec& spec) {
  std::filesystem::create_directories(spec.out);
  const auto start = std::chrono::steady_clock::now();
  const std::string command = "study " + name;
  if (name == "accuracy") {
    AccuracyResult r = run_accuracy_study(spec);
    write_table(spec.out, "accuracy", r.table, "Accuracy");
    for (const auto& [label, rep] : r.ukf) {
      write_stream(spec.out / ("ukf_" + file_label(label) + ".csv"), [&](std::ostream& o) { io::write_ukf_csv(o, rep); });
    }
    write_manifest(spec, command, timings_of(r.table, seconds_since(start)));
  } else if (name == "noise") {
    const ScoreTable t = run_noise_study(spec);
    write_table(spec.out, "noise", t, "Noise");
    write_manifest(spec, command, timings_of(t, seconds_since(start)));
  } else if (name == "data") {
    const ScoreTable t = run_data_study(spec);
    write_table(spec.out, "data", t, "Data window and collocation");
    write_manifest(spec, command, timings_of(t, seconds_since(start)),
                   {{"data_batch_scaling", spec.data_batch_scaling}});
  } else if (name == "masking") {
    const ScoreTable t = run_masking_study(spec);
    write_table(spec.out, "masking", t, "Incomplete data");
    write_manifest(spec, command, timings_of(t, seconds_since(start)));
  } else if (name == "convergence") {
    const ConvergenceTrace t = run_convergence_trace(spec);
    const auto names = parameter_names(spec.system().model);
    write_stream(spec.out / "pinn_trace.csv", [&](std::ostream& o) {
      o << "restart,epoch";
      for (const auto& n : names) o << ',' << n;
      o << ",state_error\n";
      for (std::size_t r = 0; r < t.pinn.size(); ++r) {
        for (Eigen::Index e = 0; e < t.pinn[r].rows(); ++e) {
          o << r << ',' << e;
          for (const double v : t.pinn[r].row(e)) o << ',' << csv::format(v);
          o << '\n';
        }
      }
    });
    for (std::size_t r = 0; r < t.losses.size(); ++r) {
      write_stream(spec.out / ("loss_r" + std::to_string(r) + ".csv"),
                   [&](std::ostream& o) { io::write_loss_csv(o, t.losses[r]); });
    }
    write_stream(spec.out / "snapshots.csv", [&](std::ostream& o) {
      const auto n = t.data.truth.n_buses();
      o << "epoch,t";
      for (std::size_t k = 0; k < n; ++k) o << ",u" << k + 1;
      for (std::size_t k = 0; k < n; ++k) o << ",delta" << k + 1;
      o << '\n';
      for (const auto& [epoch, u] : t.snapshots) {
        for (Eigen::Index i = 0; i < u.rows(); ++i) {
          o << epoch << ',' << csv::format(t.data.truth.times[static_cast<std::size_t>(i)]);
          for (const double v : u.row(i)) o << ',' << csv::format(v);
          for (const double v : t.data.truth.delta.row(i)) o << ',' << csv::format(v);
          o << '\n';
        }
      }
    });
    if (spec.run_ukf && !t.ukf.steps.empty()) {
      write_stream(spec.out / "ukf_trace.csv", [&](std::ostream& o) { io::write_ukf_csv(o, t.ukf); });
    }
    json extra = {{"state_epoch", t.state_epoch ? json(*t.state_epoch) : json(nullptr)},
                  {"parameter_epoch", t.parameter_epoch ? json(*t.parameter_epoch) : json(nullptr)}};
    write_manifest(spec, command, {{"total_seconds", seconds_since(start)}}, extra);
  } else {
    throw ConfigError("unknown study '" + name + "'; expected accuracy, noise, data, masking or convergence");
  }
}

void render_plots(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ConfigError("plot: directory '" + dir.string() + "' not found");
  std::size_t rendered = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string file = entry.path().filename().string();
    const std::string suffix = "_errors.csv";
    if (file.size() <= suffix.size() || file.compare(file.size() - suffix.size(), suffix.size(), suffix) != 0) continue;
    std::ifstream in(entry.path());
    std::string line;
    std::getline(in, line);
    std::vector<std::string> header;
    {
      std::stringstream ss(line);
      std::string h;
      while (std::getline(ss, h, ',')) header.push_back(h);
    }
    if (header.size() < 4 || header[0] != "cell" || header[1] != "method" || header[2] != "restart") {
      throw std::runtime_error("plot: '" + entry.path().string() + "' is not an errors table");
    }
    ScoreTable table(std::vector<std::string>(header.begin() + 3, header.end()));
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> f;
      std::stringstream ss(line);
      std::string x;
      while (std::getline(ss, x, ',')) f.push_back(x);
      f.resize(header.size());
      VectorXd e(static_cast<Eigen::Index>(header.size() - 3));
      for (std::size_t i = 3; i < header.size(); ++i) {
        e(static_cast<Eigen::Index>(i - 3)) = f[i].empty() ? kNaN : std::stod(f[i]);
      }
      table.add(f[0], f[1], std::stoul(f[2]), e);
    }
    const std::string stem = file.substr(0, file.size() - suffix.size());
    write_file(dir / (stem + ".svg"), table.render_svg(stem));
    ++rendered;
  }
  if (rendered == 0) throw ConfigError("plot: no *_errors.csv tables in '" + dir.string() + "'");
}

}  // namespace swingid
