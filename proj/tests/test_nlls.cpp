#include <catch_amalgamated.hpp>

#include <cmath>

#include "ctgbp/errors.hpp"
#include "ctgbp/experiment.hpp"
#include "ctgbp/nlls.hpp"
#include "linear_graph.hpp"
#include "support.hpp"

using namespace ctgbp;
using ctgbp::test::close_rel;

namespace {

Problem absolute_problem(double noise, double perturbation, double duration = 2.0) {
  ScenarioSpec spec;
  spec.noise = noise;
  spec.perturbation = perturbation;
  spec.duration = duration;
  return build_problem(simulate(spec), LossFunction::trivial(), std::max(noise, perturbation));
}

test::LinearProblem linear_chain() {
  test::LinearProblem p;
  for (int i = 0; i < 5; ++i) p.add_node(i % 2 == 0 ? 2 : 3);
  p.add_term({0}, 2);
  for (std::size_t i = 0; i + 1 < 5; ++i) p.add_term({i, i + 1}, 3);
  p.add_term({4, 0}, 4);
  p.add_term({2}, 3);
  return p;
}

}  // namespace

TEST_CASE("a single prior gives its precision as the hessian", "[nlls]") {
  FactorGraph g;
  const Pose mean = test::random_pose();
  const NodeId x = g.add_variable(VariableKind::kPoseBasis, mean, MatX::Identity(6, 6));
  MatX lambda = test::random_vector(36).reshaped(6, 6);
  lambda = lambda * lambda.transpose() + MatX::Identity(6, 6);
  g.add_prior(x, mean, lambda);
  const NormalEquations ne = build_normal_equations(g);
  CHECK(ne.dimension == 6);
  CHECK(close_rel(ne.dense_hessian(), lambda, 1e-10));
  CHECK(ne.gradient.norm() < 1e-12);
  CHECK(ne.energy < 1e-24);
}

TEST_CASE("normal equations of a linear problem", "[nlls]") {
  const test::LinearProblem p = linear_chain();
  const NormalEquations ne = build_normal_equations(p.graph);
  const MatX h = p.hessian();
  REQUIRE(ne.dimension == h.rows());
  CHECK(close_rel(ne.dense_hessian(), h, 1e-12));

  // Gradient equals H x - A^T b, which vanishes at the MAP estimate.
  VecX x(ne.dimension);
  for (std::size_t i = 0; i < p.nodes.size(); ++i) x.segment(ne.offset.at(p.nodes[i].value), p.mean_of(i).size()) = p.mean_of(i);
  const VecX map = p.map_solution();
  CHECK(close_rel(ne.gradient, VecX(h * (x - map)), 1e-10));
}

TEST_CASE("normal equations of the absolute setup", "[nlls]") {
  const Problem p = absolute_problem(1e-2, 1e-2);
  const NormalEquations ne = build_normal_equations(p.graph);
  const MatX h = ne.dense_hessian();
  CHECK(h.rows() == 6 * static_cast<int>(p.bases.size()));
  CHECK((h - h.transpose()).norm() == 0.0);
  CHECK(is_psd(h));
  CHECK(ne.energy == Catch::Approx(p.graph.energy()).epsilon(1e-12));

  // H matches J^T J assembled from a finite-difference Jacobian of the whitened residuals.
  const std::size_t probe = 7;
  const NodeId id = p.bases[probe];
  const int col = ne.offset.at(id.value);
  auto residuals = [&](const VecX& d) {
    FactorGraph g = p.graph;
    g.set_mean(id, boxplus(g.node(id).mean, d));
    VecX out(0);
    for (FactorId f : g.factor_ids()) {
      const VecX r = linearize_factor(g, f).residual;
      out.conservativeResize(out.size() + r.size());
      out.tail(r.size()) = r;
    }
    return out;
  };
  const MatX j = test::numeric_jacobian(residuals, 6);
  CHECK(close_rel(MatX(j.transpose() * j), MatX(h.block(col, col, 6, 6)), 1e-5));
  CHECK(close_rel(VecX(j.transpose() * residuals(VecX::Zero(6))), VecX(ne.gradient.segment(col, 6)), 1e-5));
}

TEST_CASE("gauss newton solves a linear problem in one step", "[nlls]") {
  test::LinearProblem p = linear_chain();
  NllsConfig cfg;
  cfg.damping = Damping::kNone;
  const RunRecord r = gauss_newton_solve(p.graph, cfg);
  CHECK(r.failure.empty());
  REQUIRE(r.rows.size() >= 2);
  CHECK(r.iterations() <= 2);
  for (std::size_t i = 0; i < p.nodes.size(); ++i) CHECK(close_rel(p.mean_of(i), p.map_of(i), 1e-10));
  CHECK(r.rows[1].energy == Catch::Approx(r.final_energy()).epsilon(1e-12));
}

TEST_CASE("damped gauss newton never increases the energy", "[nlls]") {
  Problem p = absolute_problem(1e-2, 0.2);
  NllsConfig cfg;
  const RunRecord r = gauss_newton_solve(p.graph, cfg);
  CHECK(r.failure.empty());
  CHECK(r.converged);
  for (std::size_t k = 1; k < r.rows.size(); ++k) CHECK(r.rows[k].energy <= r.rows[k - 1].energy);

  Problem reference = absolute_problem(1e-2, 0.0);
  const RunRecord from_truth = gauss_newton_solve(reference.graph, cfg);
  CHECK(r.final_energy() == Catch::Approx(from_truth.final_energy()).epsilon(1e-9));
}

TEST_CASE("undamped gauss newton reports a singular system", "[nlls]") {
  test::LinearProblem p;
  p.add_node(3);
  p.add_node(2);
  p.add_term({0, 1}, 2);
  NllsConfig cfg;
  cfg.damping = Damping::kNone;
  const RunRecord r = gauss_newton_solve(p.graph, cfg);
  CHECK_FALSE(r.failure.empty());
  CHECK_FALSE(r.converged);
}

TEST_CASE("gbp and gauss newton reach the same energy", "[nlls]") {
  Problem a = absolute_problem(1e-3, 1e-2);
  Problem b = absolute_problem(1e-3, 1e-2);
  SolverConfig gbp;
  gbp.max_iterations = 300;
  gbp.tolerance = 0.0;
  const RunRecord rg = GbpSolver(a.graph, gbp).solve();
  const RunRecord rn = gauss_newton_solve(b.graph, NllsConfig{});
  CHECK(rg.final_energy() == Catch::Approx(rn.final_energy()).epsilon(1e-6));
  const RmseResult gap = rmse(extract_trajectory(a), extract_trajectory(b));
  CHECK(gap.rotation < 1e-5);
  CHECK(gap.translation < 1e-5);
}
