#include "ctgbp/experiment.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "ctgbp/errors.hpp"

namespace ctgbp {
namespace {

double initial_sigma_for(const Scenario& scenario, double requested) {
  if (requested > 0.0) return requested;
  const ScenarioSpec& s = scenario.spec;
  // Pixel noise is not commensurate with the basis tangent, so only the
  // absolute setup folds the noise level in.
  const double sigma = s.setup == Setup::kAbsolute ? std::max(s.perturbation, s.noise) : s.perturbation;
  return sigma > 0.0 ? sigma : 1.0;
}

SweepRow failed_row(SweepKind kind, double value, const std::string& variant, const std::string& error) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  SweepRow row;
  row.kind = kind;
  row.value = value;
  row.variant = variant;
  row.rotation_rmse = nan;
  row.translation_rmse = nan;
  row.final_energy = nan;
  row.error = error;
  return row;
}

SweepRow run_point(SweepKind kind, double value, const std::string& variant, const Scenario& scenario,
                   const ExperimentConfig& config) {
  try {
    const ExperimentResult r = run_experiment(scenario, config);
    if (!r.record.failure.empty()) return failed_row(kind, value, variant, r.record.failure);
    SweepRow row;
    row.kind = kind;
    row.value = value;
    row.variant = variant;
    row.rotation_rmse = r.error.rotation;
    row.translation_rmse = r.error.translation;
    row.iterations = r.record.iterations();
    row.iterations_to_convergence = r.iterations_to_convergence;
    row.final_energy = r.record.final_energy();
    return row;
  } catch (const Error& e) {
    return failed_row(kind, value, variant, e.what());
  }
}

}  // namespace

std::string to_string(SolverKind kind) { return kind == SolverKind::kGbp ? "gbp" : "nlls"; }

SolverKind parse_solver_kind(const std::string& name) {
  if (name == "gbp") return SolverKind::kGbp;
  if (name == "nlls") return SolverKind::kNlls;
  throw ConfigError("unknown solver '" + name + "' (expected gbp or nlls)");
}

std::string to_string(SweepKind kind) {
  switch (kind) {
    case SweepKind::kPerturbation:
      return "perturbation";
    case SweepKind::kNoise:
      return "noise";
    case SweepKind::kDropout:
      return "dropout";
    case SweepKind::kSpline:
      break;
  }
  return "spline";
}

SweepKind parse_sweep_kind(const std::string& name) {
  if (name == "perturbation") return SweepKind::kPerturbation;
  if (name == "noise") return SweepKind::kNoise;
  if (name == "dropout") return SweepKind::kDropout;
  if (name == "spline") return SweepKind::kSpline;
  throw ConfigError("unknown sweep '" + name + "' (expected perturbation, noise, dropout or spline)");
}

void ExperimentConfig::validate() const {
  scenario.validate();
  gbp.validate();
  if (nlls.max_iterations == 0) throw ConfigError("max_iters must be positive");
  if (!(initial_sigma >= 0.0)) throw ConfigError("initial_sigma must be non-negative");
  if (!(report_tolerance > 0.0)) throw ConfigError("report_tolerance must be positive");
  if (sweep == SweepKind::kDropout) {
    for (double v : grid) {
      if (!(v >= 0.0 && v < 1.0)) throw ConfigError(fmt::format("dropout grid value {} outside [0, 1)", v));
    }
  }
  if (sweep == SweepKind::kPerturbation || sweep == SweepKind::kNoise) {
    for (double v : grid) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(fmt::format("grid value {} must be >= 0", v));
    }
  }
}

Scenario simulate(const ScenarioSpec& spec) {
  spec.validate();
  auto traj_rng = make_rng(spec.seed, Stream::kTrajectory);
  auto pert_rng = make_rng(spec.seed, Stream::kPerturbation);
  auto meas_rng = make_rng(spec.seed, Stream::kMeasurements);
  GroundTruth truth = generate_trajectory(spec, traj_rng);
  SplineTrajectory initial = perturb_bases(truth.trajectory, spec.perturbation, pert_rng);
  MeasurementSet meas = sample_measurements(truth, spec, meas_rng);
  return {spec, std::move(truth), std::move(initial), std::move(meas)};
}

Problem build_problem(const Scenario& scenario, const LossFunction& loss, double initial_sigma) {
  const SplineTrajectory& init = scenario.initial;
  Problem p;
  p.start_time = init.start_time();
  p.knot_interval = init.knot_interval();
  p.spline = init.kind();

  const double sigma = initial_sigma_for(scenario, initial_sigma);
  const MatX basis_precision = MatX::Identity(6, 6) / (sigma * sigma);
  for (std::size_t i = 0; i < init.size(); ++i) {
    p.bases.push_back(p.graph.add_variable(VariableKind::kPoseBasis, init.basis(i), basis_precision));
  }

  auto window_nodes = [&](std::size_t index) {
    return std::vector<NodeId>{p.bases[index], p.bases[index + 1], p.bases[index + 2], p.bases[index + 3]};
  };

  for (const AbsoluteMeasurement& m : scenario.measurements.absolute) {
    const SegmentLocation loc = init.locate(m.time);
    auto model = std::make_shared<AbsolutePoseModel>(m, SplineSegmentRef{init.blending(), loc.u, p.knot_interval});
    p.graph.add_factor(window_nodes(loc.index), std::move(model), m.sqrt_information, loss);
  }

  if (!scenario.measurements.visual.empty() || scenario.spec.setup == Setup::kLocalization) {
    const double ls = scenario.spec.landmark_prior_sigma;
    const MatX landmark_precision = MatX::Identity(3, 3) / (ls * ls);
    for (const Vec3& l : scenario.truth.landmarks) {
      const NodeId id = p.graph.add_variable(VariableKind::kLandmark, VecX(l), landmark_precision);
      p.graph.add_prior(id, VecX(l), landmark_precision);
      p.landmarks.push_back(id);
    }
    p.extrinsic = p.graph.add_constant(Pose::identity());
    for (const VisualMeasurement& m : scenario.measurements.visual) {
      if (m.landmark >= p.landmarks.size()) {
        throw ConfigError(fmt::format("visual measurement references unknown landmark {}", m.landmark));
      }
      const SegmentLocation loc = init.locate(m.time);
      auto model = std::make_shared<ReprojectionModel>(m, SplineSegmentRef{init.blending(), loc.u, p.knot_interval});
      std::vector<NodeId> nodes = window_nodes(loc.index);
      nodes.push_back(p.landmarks[m.landmark]);
      nodes.push_back(*p.extrinsic);
      p.graph.add_factor(nodes, std::move(model), m.sqrt_information, loss);
    }
  }
  return p;
}

SplineTrajectory extract_trajectory(const Problem& problem) {
  std::vector<Pose> bases;
  bases.reserve(problem.bases.size());
  for (NodeId id : problem.bases) bases.push_back(std::get<Pose>(problem.graph.node(id).mean));
  return SplineTrajectory(problem.start_time, problem.knot_interval, std::move(bases), problem.spline);
}

ExperimentResult run_experiment(const Scenario& scenario, const ExperimentConfig& config) {
  Problem problem = build_problem(scenario, config.loss, config.initial_sigma);
  ExperimentResult out{{}, {}, 0, scenario.initial, {}};
  if (config.solver == SolverKind::kGbp) {
    GbpSolver solver(problem.graph, config.gbp);
    out.record = solver.solve();
  } else {
    out.record = gauss_newton_solve(problem.graph, config.nlls);
  }
  out.estimate = extract_trajectory(problem);
  out.error = rmse(out.estimate, scenario.truth.trajectory);
  out.iterations_to_convergence = iterations_to_convergence(out.record, config.report_tolerance);
  for (NodeId id : problem.landmarks) out.landmarks.push_back(std::get<VecX>(problem.graph.node(id).mean));
  return out;
}

std::vector<double> default_grid(SweepKind kind) {
  switch (kind) {
    case SweepKind::kPerturbation:
    case SweepKind::kNoise:
      return {1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1e0};
    case SweepKind::kDropout:
      return {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    case SweepKind::kSpline:
      break;
  }
  return {};
}

std::vector<SweepRow> run_sweep(SweepKind kind, const std::vector<double>& grid, const ExperimentConfig& base) {
  std::vector<SweepRow> rows;
  auto simulate_or_fail = [&](const ScenarioSpec& spec, double value, const std::string& variant,
                              std::optional<Scenario>& out) {
    try {
      out = simulate(spec);
      return true;
    } catch (const Error& e) {
      rows.push_back(failed_row(kind, value, variant, e.what()));
      return false;
    }
  };

  switch (kind) {
    case SweepKind::kPerturbation:
    case SweepKind::kNoise:
      for (double v : grid) {
        ScenarioSpec spec = base.scenario;
        (kind == SweepKind::kPerturbation ? spec.perturbation : spec.noise) = v;
        std::optional<Scenario> scenario;
        if (!simulate_or_fail(spec, v, "all", scenario)) continue;
        for (SolverKind solver : {SolverKind::kGbp, SolverKind::kNlls}) {
          ExperimentConfig cfg = base;
          cfg.scenario = spec;
          cfg.solver = solver;
          rows.push_back(run_point(kind, v, to_string(solver), *scenario, cfg));
        }
      }
      break;
    case SweepKind::kDropout: {
      std::optional<Scenario> scenario;
      if (!simulate_or_fail(base.scenario, 0.0, "gbp", scenario)) break;
      for (double v : grid) {
        ExperimentConfig cfg = base;
        cfg.solver = SolverKind::kGbp;
        cfg.gbp.schedule = v > 0.0 ? Schedule::kDropout : Schedule::kSynchronous;
        cfg.gbp.dropout_nodes = v;
        cfg.gbp.dropout_factors = v;
        rows.push_back(run_point(kind, v, "gbp", *scenario, cfg));
      }
      break;
    }
    case SweepKind::kSpline:
      for (SplineKind spline : {SplineKind::kBSpline, SplineKind::kZSpline}) {
        ScenarioSpec spec = base.scenario;
        spec.spline = spline;
        std::optional<Scenario> scenario;
        if (!simulate_or_fail(spec, 0.0, to_string(spline), scenario)) continue;
        ExperimentConfig cfg = base;
        cfg.scenario = spec;
        cfg.solver = SolverKind::kGbp;
        rows.push_back(run_point(kind, 0.0, to_string(spline), *scenario, cfg));
      }
      break;
  }
  return rows;
}

}  // namespace ctgbp
