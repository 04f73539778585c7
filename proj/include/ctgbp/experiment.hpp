#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ctgbp/gbp.hpp"
#include "ctgbp/graph.hpp"
#include "ctgbp/nlls.hpp"
#include "ctgbp/robust.hpp"
#include "ctgbp/sim.hpp"

namespace ctgbp {

enum class SolverKind { kGbp, kNlls };
std::string to_string(SolverKind kind);
/// Accepts "gbp" and "nlls". Throws ConfigError otherwise.
SolverKind parse_solver_kind(const std::string& name);

enum class SweepKind { kPerturbation, kNoise, kDropout, kSpline };
std::string to_string(SweepKind kind);
SweepKind parse_sweep_kind(const std::string& name);

struct ExperimentConfig {
  ScenarioSpec scenario;
  SolverKind solver = SolverKind::kGbp;
  SolverConfig gbp;
  NllsConfig nlls;
  LossFunction loss;
  /// Standard deviation of the initial basis beliefs; 0 picks max(perturbation, noise).
  double initial_sigma = 0.0;
  /// Threshold for iterations-to-convergence reporting.
  double report_tolerance = 1e-6;

  std::optional<SweepKind> sweep;
  std::vector<double> grid;

  void validate() const;
};

/// Everything a solve needs: truth for scoring, the initial state and the data.
struct Scenario {
  ScenarioSpec spec;
  GroundTruth truth;
  SplineTrajectory initial;
  MeasurementSet measurements;
};

/// Deterministic from spec.seed; perturbation, trajectory and measurement
/// noise use independent streams.
Scenario simulate(const ScenarioSpec& spec);

struct Problem {
  FactorGraph graph;
  std::vector<NodeId> bases;
  std::vector<NodeId> landmarks;
  std::optional<NodeId> extrinsic;
  double start_time = 0.0;
  double knot_interval = 0.0;
  SplineKind spline = SplineKind::kBSpline;
};

/// Pose bases as variables, one factor per measurement; in the localization
/// setup landmarks are variables anchored by priors at the surveyed map.
Problem build_problem(const Scenario& scenario, const LossFunction& loss, double initial_sigma);

SplineTrajectory extract_trajectory(const Problem& problem);

struct ExperimentResult {
  RunRecord record;
  RmseResult error;
  std::size_t iterations_to_convergence = 0;
  SplineTrajectory estimate;
  std::vector<Vec3> landmarks;
};

ExperimentResult run_experiment(const Scenario& scenario, const ExperimentConfig& config);

struct SweepRow {
  SweepKind kind = SweepKind::kPerturbation;
  double value = 0.0;
  std::string variant;  // solver or spline name
  double rotation_rmse = 0.0;
  double translation_rmse = 0.0;
  std::size_t iterations = 0;
  std::size_t iterations_to_convergence = 0;
  double final_energy = 0.0;
  std::string error;  // non-empty for failed grid points (metrics are NaN)
};

/// perturbation / noise: both solvers per grid value; dropout: GBP with
/// d_n = d_f = value; spline: GBP with both spline kinds (grid ignored).
std::vector<SweepRow> run_sweep(SweepKind kind, const std::vector<double>& grid, const ExperimentConfig& base);

/// Default grids of the tolerance studies.
std::vector<double> default_grid(SweepKind kind);

}  // namespace ctgbp
