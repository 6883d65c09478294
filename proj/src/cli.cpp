#include "swingid/harness.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <iostream>
#include <sstream>

namespace swingid {

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& opts, bool config_required = true) {
  auto* c = cmd->add_option("--config", opts.config, "ExperimentSpec JSON file");
  if (config_required) c->required();
  cmd->add_option("--seed", opts.seed, "Override the master seed");
  cmd->add_option("--out", opts.out, "Output directory");
}

ExperimentSpec load(const CommonOptions& opts) {
  ExperimentSpec spec = ExperimentSpec::read(opts.config);
  if (opts.seed) {
    spec.seed = *opts.seed;
    spec.document["seed"] = *opts.seed;
  }
  if (!opts.out.empty()) spec.out = opts.out;
  std::filesystem::create_directories(spec.out);
  return spec;
}

template <typename Writer>
void write(const std::filesystem::path& path, Writer&& writer) {
  std::ostringstream out;
  writer(out);
  io::write_text_file(path.string(), out.str());
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void cmd_simulate(const ExperimentSpec& spec) {
  const auto start = std::chrono::steady_clock::now();
  const SystemChoice& sys = spec.system();
  const DataSet data = make_data(spec, sys.model);
  write(spec.out / "trajectory.csv", [&](std::ostream& o) { write_csv(o, data.truth); });
  write(spec.out / "measurements.csv", [&](std::ostream& o) { write_csv(o, data.measurements); });
  io::write_text_file((spec.out / "model.json").string(), io::model_to_json(sys.model).dump(2) + "\n");
  write_manifest(spec, "simulate", {{"total_seconds", seconds_since(start)}});
}

void cmd_estimate_pinn(const ExperimentSpec& spec) {
  const auto start = std::chrono::steady_clock::now();
  const SystemChoice& sys = spec.system();
  const DataSet data = make_data(spec, sys.model);
  const TrainingSchedule sched = spec.training_schedule();
  const EstimationReport report = train(KnownStructure::of(sys.model), data.measurements, sys.network, sched);

  ScoreTable table(parameter_names(sys.model));
  table.add_pinn(sys.label, report, sys.model);
  write(spec.out / "pinn_errors.csv", [&](std::ostream& o) { table.write_errors_csv(o); });
  write(spec.out / "pinn_summary.csv", [&](std::ostream& o) { table.write_summary_csv(o); });
  io::write_text_file((spec.out / "pinn.svg").string(), table.render_svg("PINN " + sys.label));

  std::filesystem::create_directories(spec.out / "estimators");
  std::size_t failed = 0;
  for (std::size_t r = 0; r < report.restarts.size(); ++r) {
    const auto& res = report.restarts[r];
    if (!res.ok) {
      ++failed;
      std::cerr << "restart " << r << " failed: " << res.failure << '\n';
      continue;
    }
    write(spec.out / ("loss_r" + std::to_string(r) + ".csv"), [&](std::ostream& o) { io::write_loss_csv(o, res.losses); });
    const io::json meta = {{"restart", r},
                           {"seed", res.seed},
                           {"schedule_preset", spec.schedule_preset},
                           {"epochs", res.losses.size()},
                           {"final_L_z", res.losses.back().measurement},
                           {"final_L_c", res.losses.back().physics}};
    io::write_text_file((spec.out / "estimators" / ("restart_" + std::to_string(r) + ".json")).string(),
                        io::estimator_to_json(*res.estimator, meta).dump(2) + "\n");
  }
  if (failed == report.restarts.size()) throw std::runtime_error("every restart failed");
  write_manifest(spec, "estimate-pinn", {{"total_seconds", seconds_since(start)}, {"training_seconds", report.wall_seconds}},
                 {{"failed_restarts", failed}});
}

void cmd_estimate_ukf(const ExperimentSpec& spec) {
  const auto start = std::chrono::steady_clock::now();
  const SystemChoice& sys = spec.system();
  const DataSet data = make_data(spec, sys.model);
  UkfConfig cfg = spec.ukf_for(sys.label);
  io::json extra = io::json::object();
  if (spec.ukf_sweep) {
    const auto sweep = sweep_ukf(data.measurements, sys.model, cfg);
    write(spec.out / "ukf_sweep.csv", [&](std::ostream& o) { write_sweep_csv(o, sweep); });
    if (!sweep.front().ok) throw std::runtime_error("every UKF sweep configuration failed");
    cfg = sweep.front().config;
    extra["selected"] = {{"initial_parameter", cfg.initial_parameter},
                         {"initial_parameter_variance", cfg.initial_parameter_variance},
                         {"r_floor", cfg.r_floor},
                         {"q_dynamics", cfg.q_dynamics}};
  }
  const UkfReport report = replay(data.measurements, sys.model, cfg);
  write(spec.out / "ukf_trace.csv", [&](std::ostream& o) { io::write_ukf_csv(o, report); });
  ScoreTable table(parameter_names(sys.model));
  table.add_ukf(sys.label, report, sys.model);
  write(spec.out / "ukf_errors.csv", [&](std::ostream& o) { table.write_errors_csv(o); });
  for (const auto& d : report.diagnostics) std::cerr << "ukf: " << d << '\n';
  extra["converged"] = report.converged;
  extra["negative_parameter_steps"] = report.negative_parameter_steps;
  extra["covariance_repairs"] = report.repairs;
  write_manifest(spec, "estimate-ukf", {{"total_seconds", seconds_since(start)}}, extra);
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Inertia and damping identification for multi-bus power systems"};
  app.require_subcommand(1);

  CommonOptions sim_opts, pinn_opts, ukf_opts, study_opts;
  auto* sim = app.add_subcommand("simulate", "Simulate the system and write trajectory and measurement CSVs");
  add_common(sim, sim_opts);
  auto* pinn = app.add_subcommand("estimate-pinn", "Train PINN restarts on simulated measurements");
  add_common(pinn, pinn_opts);
  auto* ukf = app.add_subcommand("estimate-ukf", "Replay the unscented Kalman filter on simulated measurements");
  add_common(ukf, ukf_opts);
  auto* study = app.add_subcommand("study", "Run a study: accuracy, noise, data, masking or convergence");
  std::string study_name;
  study->add_option("name", study_name, "Study name")->required();
  add_common(study, study_opts);
  auto* plot = app.add_subcommand("plot", "Re-render SVG boxplots from the error tables in a directory");
  std::string plot_dir;
  plot->add_option("--out", plot_dir, "Directory holding *_errors.csv")->required();

  if (argc > 1 && argv[1][0] != '-') {
    const std::string name = argv[1];
    const auto subs = app.get_subcommands([](const CLI::App*) { return true; });
    if (std::none_of(subs.begin(), subs.end(), [&](const CLI::App* s) { return s->get_name() == name; })) {
      std::cerr << "error: unknown subcommand '" << name << "'\n";
      return 1;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (sim->parsed()) {
      cmd_simulate(load(sim_opts));
    } else if (pinn->parsed()) {
      cmd_estimate_pinn(load(pinn_opts));
    } else if (ukf->parsed()) {
      cmd_estimate_ukf(load(ukf_opts));
    } else if (study->parsed()) {
      run_study(study_name, load(study_opts));
    } else if (plot->parsed()) {
      render_plots(plot_dir);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace swingid
