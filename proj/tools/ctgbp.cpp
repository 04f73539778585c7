// ctgbp: simulate scenarios, run the GBP and Gauss-Newton solvers, sweep the
// tolerance studies and benchmark spline evaluation.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "ctgbp/errors.hpp"
#include "ctgbp/experiment.hpp"
#include "ctgbp/io.hpp"

namespace fs = std::filesystem;
using namespace ctgbp;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitSolver = 3;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> solver;
  std::optional<std::size_t> workers;
  std::optional<std::size_t> max_iters;
  std::optional<double> dropout_nodes;
  std::optional<double> dropout_factors;
  std::optional<std::string> spline;

  void add_solver_flags(CLI::App* cmd) {
    cmd->add_option("--solver", solver, "gbp or nlls");
    cmd->add_option("--workers", workers, "worker threads (does not change results)");
    cmd->add_option("--max-iters", max_iters, "iteration cap");
    cmd->add_option("--dropout-nodes", dropout_nodes, "node dropout probability");
    cmd->add_option("--dropout-factors", dropout_factors, "factor dropout probability");
  }

  void apply_scenario(ExperimentConfig& cfg) const {
    if (seed) cfg.scenario.seed = *seed;
    if (spline) cfg.scenario.spline = parse_spline_kind(*spline);
  }

  void apply_solver(ExperimentConfig& cfg) const {
    if (solver) cfg.solver = parse_solver_kind(*solver);
    if (workers) cfg.gbp.workers = *workers;
    if (max_iters) cfg.gbp.max_iterations = cfg.nlls.max_iterations = *max_iters;
    if (dropout_nodes) cfg.gbp.dropout_nodes = *dropout_nodes;
    if (dropout_factors) cfg.gbp.dropout_factors = *dropout_factors;
    if (cfg.gbp.dropout_nodes > 0.0 || cfg.gbp.dropout_factors > 0.0) cfg.gbp.schedule = Schedule::kDropout;
    cfg.validate();
  }
};

ExperimentConfig config_or_default(const std::string& path) {
  return path.empty() ? ExperimentConfig{} : load_config(path);
}

int cmd_simulate(const std::string& config_path, const std::string& out, const Overrides& ov) {
  ExperimentConfig cfg = config_or_default(config_path);
  ov.apply_scenario(cfg);
  cfg.validate();
  const Scenario s = simulate(cfg.scenario);
  save_scenario(out, s, cfg);
  fmt::print("{}: {} bases, {} absolute, {} visual measurements, {} landmarks\n", out, s.truth.trajectory.size(),
             s.measurements.absolute.size(), s.measurements.visual.size(), s.truth.landmarks.size());
  return 0;
}

int cmd_solve(const std::string& scenario_dir, const std::string& config_path, std::string out,
              const Overrides& ov) {
  ExperimentConfig cfg;
  const Scenario scenario = load_scenario(scenario_dir, cfg);
  if (!config_path.empty()) {
    const ExperimentConfig solver_cfg = load_config(config_path);
    cfg.solver = solver_cfg.solver;
    cfg.gbp = solver_cfg.gbp;
    cfg.nlls = solver_cfg.nlls;
    cfg.loss = solver_cfg.loss;
    cfg.initial_sigma = solver_cfg.initial_sigma;
    cfg.report_tolerance = solver_cfg.report_tolerance;
  }
  ov.apply_solver(cfg);
  if (out.empty()) out = scenario_dir;
  fs::create_directories(out);

  const auto start = std::chrono::steady_clock::now();
  const ExperimentResult r = run_experiment(scenario, cfg);
  const double wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

  const std::string stem = fmt::format("{}_{}", to_string(cfg.solver), to_string(cfg.scenario.setup));
  const fs::path dir(out);
  write_run_record_csv(dir / (stem + "_energy.csv"), r.record);
  write_rmse_csv(dir / (stem + "_rmse.csv"), r.error);
  write_trajectory_csv(dir / (stem + "_estimate.csv"), r.estimate);
  nlohmann::json summary = {{"solver", to_string(cfg.solver)},
                            {"setup", to_string(cfg.scenario.setup)},
                            {"spline", to_string(cfg.scenario.spline)},
                            {"iterations", r.record.iterations()},
                            {"iterations_to_convergence", r.iterations_to_convergence},
                            {"converged", r.record.converged},
                            {"initial_energy", r.record.rows.front().energy},
                            {"final_energy", r.record.final_energy()},
                            {"rmse_rotation", r.error.rotation},
                            {"rmse_translation", r.error.translation},
                            {"factor_failures", r.record.factor_failures},
                            {"jittered", r.record.jittered},
                            {"vacuous", r.record.vacuous},
                            {"failure", r.record.failure},
                            {"wall_ms", wall_ms},
                            {"config", config_to_json(cfg)}};
  write_text(dir / (stem + "_summary.json"), summary.dump(2) + "\n");

  fmt::print("{} {}: {} iterations, energy {:.6g} -> {:.6g}, rmse R {:.3e} rad t {:.3e} m ({:.0f} ms)\n",
             to_string(cfg.solver), to_string(cfg.scenario.setup), r.record.iterations(),
             r.record.rows.front().energy, r.record.final_energy(), r.error.rotation, r.error.translation, wall_ms);
  if (!r.record.failure.empty()) {
    fmt::print(stderr, "solver failure: {}\n", r.record.failure);
    return kExitSolver;
  }
  return 0;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("malformed grid value '" + item + "'");
    }
  }
  return out;
}

int cmd_sweep(const std::string& config_path, const std::string& kind_text, const std::string& grid_text,
              const std::string& out, const Overrides& ov) {
  ExperimentConfig cfg = config_or_default(config_path);
  ov.apply_scenario(cfg);
  ov.apply_solver(cfg);
  if (!kind_text.empty()) cfg.sweep = parse_sweep_kind(kind_text);
  if (!cfg.sweep) throw ConfigError("sweep kind missing (use --kind or a sweep section in the config)");
  if (!grid_text.empty()) cfg.grid = parse_grid(grid_text);
  if (cfg.grid.empty()) cfg.grid = default_grid(*cfg.sweep);
  cfg.validate();

  fs::create_directories(out);
  write_text(fs::path(out) / "config.json", config_to_json(cfg).dump(2) + "\n");
  const std::vector<SweepRow> rows = run_sweep(*cfg.sweep, cfg.grid, cfg);
  write_sweep_csv(fs::path(out) / fmt::format("sweep_{}.csv", to_string(*cfg.sweep)), rows);
  for (const SweepRow& r : rows) {
    fmt::print("{:>12} {:>10g} {:>8}: R {:.3e} t {:.3e} iters {:>3} (conv {:>3}) E {:.6g}{}\n", to_string(r.kind),
               r.value, r.variant, r.rotation_rmse, r.translation_rmse, r.iterations, r.iterations_to_convergence,
               r.final_energy, r.error.empty() ? "" : "  [" + r.error + "]");
  }
  return 0;
}

template <typename Fn>
double median_ns(std::size_t reps, const std::vector<double>& times, Fn&& fn) {
  std::vector<double> samples;
  samples.reserve(reps);
  double sink = 0.0;
  for (std::size_t r = 0; r < reps; ++r) {
    const auto start = std::chrono::steady_clock::now();
    for (double t : times) sink += fn(t);
    const auto stop = std::chrono::steady_clock::now();
    samples.push_back(std::chrono::duration<double, std::nano>(stop - start).count() /
                      static_cast<double>(times.size()));
  }
  if (sink == 42.0) std::cerr << "";
  std::nth_element(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(samples.size() / 2), samples.end());
  return samples[samples.size() / 2];
}

int cmd_bench_spline(std::size_t reps, const std::string& out, const Overrides& ov) {
  if (reps == 0) throw ConfigError("--reps must be positive");
  ExperimentConfig cfg;
  ov.apply_scenario(cfg);
  auto rng = make_rng(cfg.scenario.seed, Stream::kTrajectory);
  const GroundTruth gt = generate_trajectory(cfg.scenario, rng);
  const SplineTrajectory& traj = gt.trajectory;
  std::uniform_real_distribution<double> when(traj.domain_begin(), traj.domain_end() - 1e-6);
  std::vector<double> times(256);
  for (double& t : times) t = when(rng);

  struct Row {
    std::string quantity;
    bool jacobians;
    double ns;
  };
  std::vector<Row> rows;
  rows.push_back({"pose", false, median_ns(reps, times, [&](double t) { return traj.eval_pose(t).translation.x(); })});
  rows.push_back({"pose", true, median_ns(reps, times, [&](double t) {
                    return traj.eval_pose(t).translation.x() +
                           traj.jacobian_wrt_bases(t, JacobianTarget::kPose)[0](0, 0);
                  })});
  rows.push_back({"velocity", false, median_ns(reps, times, [&](double t) {
                    return traj.eval_angular_velocity(t).x() + traj.eval_translation(t, 1).x();
                  })});
  rows.push_back({"velocity", true, median_ns(reps, times, [&](double t) {
                    return traj.eval_angular_velocity(t).x() + traj.eval_translation(t, 1).x() +
                           traj.jacobian_wrt_bases(t, JacobianTarget::kRotation, 1)[0](0, 0) +
                           traj.jacobian_wrt_bases(t, JacobianTarget::kTranslation, 1)[0](0, 0);
                  })});
  rows.push_back({"acceleration", false, median_ns(reps, times, [&](double t) {
                    return traj.eval_angular_acceleration(t).x() + traj.eval_translation(t, 2).x();
                  })});
  rows.push_back({"acceleration", true, median_ns(reps, times, [&](double t) {
                    return traj.eval_angular_acceleration(t).x() + traj.eval_translation(t, 2).x() +
                           traj.jacobian_wrt_bases(t, JacobianTarget::kRotation, 2)[0](0, 0) +
                           traj.jacobian_wrt_bases(t, JacobianTarget::kTranslation, 2)[0](0, 0);
                  })});

  std::string csv = std::string(kCsvVersion) + "\nquantity,jacobians,median_ns\n";
  for (const Row& r : rows) csv += fmt::format("{},{},{:.17g}\n", r.quantity, r.jacobians ? 1 : 0, r.ns);
  if (out.empty()) {
    std::cout << csv;
  } else {
    write_text(out, csv);
    for (const Row& r : rows) fmt::print("{:>12} jac={} {:10.1f} ns\n", r.quantity, r.jacobians ? 1 : 0, r.ns);
  }
  return 0;
}

int cmd_compare(const std::string& a_path, const std::string& b_path) {
  const RunRecord a = read_run_record_csv(a_path);
  const RunRecord b = read_run_record_csv(b_path);
  const std::size_t n = std::max(a.rows.size(), b.rows.size());
  fmt::print("iter,energy_a,energy_b,rel_diff\n");
  for (std::size_t i = 0; i < n; ++i) {
    const double ea = i < a.rows.size() ? a.rows[i].energy : a.final_energy();
    const double eb = i < b.rows.size() ? b.rows[i].energy : b.final_energy();
    fmt::print("{},{:.17g},{:.17g},{:.3e}\n", i, ea, eb, relative_change(ea, eb));
  }
  fmt::print("# iterations: {} vs {}; final relative energy difference {:.3e}\n", a.iterations(), b.iterations(),
             relative_change(a.final_energy(), b.final_energy()));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous-time Gaussian belief propagation experiments"};
  app.require_subcommand(1);
  Overrides ov;
  std::string config_path;
  std::string out;

  auto* simulate_cmd = app.add_subcommand("simulate", "Generate ground truth, initial state and measurements");
  simulate_cmd->add_option("--config", config_path, "experiment config (JSON)");
  simulate_cmd->add_option("--out", out, "output directory")->required();
  simulate_cmd->add_option("--seed", ov.seed, "scenario seed");
  simulate_cmd->add_option("--spline", ov.spline, "bspline or zspline");

  std::string scenario_dir;
  auto* solve_cmd = app.add_subcommand("solve", "Solve a simulated scenario");
  solve_cmd->add_option("scenario", scenario_dir, "scenario directory written by simulate")->required();
  solve_cmd->add_option("--config", config_path, "config whose solver and loss sections override the scenario's");
  solve_cmd->add_option("--out", out, "output directory (default: the scenario directory)");
  ov.add_solver_flags(solve_cmd);

  std::string kind;
  std::string grid;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run a perturbation, noise, dropout or spline sweep");
  sweep_cmd->add_option("--config", config_path, "base experiment config (JSON)");
  sweep_cmd->add_option("--kind", kind, "perturbation, noise, dropout or spline");
  sweep_cmd->add_option("--grid", grid, "comma-separated grid values");
  sweep_cmd->add_option("--out", out, "output directory")->required();
  sweep_cmd->add_option("--seed", ov.seed, "scenario seed");
  sweep_cmd->add_option("--spline", ov.spline, "bspline or zspline");
  ov.add_solver_flags(sweep_cmd);

  std::size_t reps = 200;
  auto* bench_cmd = app.add_subcommand("bench-spline", "Median spline evaluation timings");
  bench_cmd->add_option("--reps", reps, "repetitions");
  bench_cmd->add_option("--out", out, "output CSV (default: stdout)");
  bench_cmd->add_option("--seed", ov.seed, "trajectory seed");
  bench_cmd->add_option("--spline", ov.spline, "bspline or zspline");

  std::string record_a;
  std::string record_b;
  auto* compare_cmd = app.add_subcommand("compare", "Diff two energy telemetry files");
  compare_cmd->add_option("a", record_a, "first RunRecord CSV")->required();
  compare_cmd->add_option("b", record_b, "second RunRecord CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*simulate_cmd) return cmd_simulate(config_path, out, ov);
    if (*solve_cmd) return cmd_solve(scenario_dir, config_path, out, ov);
    if (*sweep_cmd) return cmd_sweep(config_path, kind, grid, out, ov);
    if (*bench_cmd) return cmd_bench_spline(reps, out, ov);
    if (*compare_cmd) return cmd_compare(record_a, record_b);
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kExitConfig;
  } catch (const Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitSolver;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitSolver;
  }
  return 0;
}
