#include <catch_amalgamated.hpp>

#include <limits>
#include <memory>

#include "ctgbp/errors.hpp"
#include "ctgbp/experiment.hpp"
#include "ctgbp/gbp.hpp"
#include "ctgbp/graph.hpp"
#include "linear_graph.hpp"
#include "support.hpp"

using namespace ctgbp;
using ctgbp::test::close_rel;

namespace {

std::shared_ptr<AbsolutePoseModel> absolute_model() {
  return std::make_shared<AbsolutePoseModel>(AbsoluteMeasurement{}, SplineSegmentRef{});
}

std::shared_ptr<ReprojectionModel> visual_model() {
  VisualMeasurement m;
  m.pixel = Vec2(400.0, 400.0);
  return std::make_shared<ReprojectionModel>(m, SplineSegmentRef{});
}

std::vector<NodeId> add_bases(FactorGraph& g, int count) {
  std::vector<NodeId> out;
  for (int i = 0; i < count; ++i) {
    out.push_back(g.add_variable(VariableKind::kPoseBasis, Pose::identity(), 1e-2 * MatX::Identity(6, 6)));
  }
  return out;
}

}  // namespace

TEST_CASE("variables are stored verbatim", "[graph]") {
  FactorGraph g;
  const Pose p = test::random_pose();
  const MatX prec = 1e-2 * MatX::Identity(6, 6);
  const NodeId id = g.add_variable(VariableKind::kPoseBasis, p, prec);
  const Node& n = g.node(id);
  CHECK(n.kind == VariableKind::kPoseBasis);
  CHECK(boxminus(std::get<Pose>(n.mean), p).norm() == 0.0);
  CHECK(n.precision == prec);
  CHECK_FALSE(n.constant);
  CHECK(g.num_nodes() == 1);
  CHECK(to_string(VariableKind::kLandmark) == "landmark");
}

TEST_CASE("variable validation", "[graph]") {
  FactorGraph g;
  const NodeId id = g.add_variable(VariableKind::kLandmark, VecX(VecX::Zero(3)), MatX::Zero(3, 3));
  CHECK_THROWS_AS(g.add_variable(VariableKind::kLandmark, VecX(VecX::Zero(3)), MatX::Zero(3, 3), id), GraphError);
  CHECK_THROWS_AS(g.add_constant(Pose::identity(), id), GraphError);

  MatX indefinite = MatX::Identity(3, 3);
  indefinite(0, 0) = -1.0;
  CHECK_THROWS_AS(g.add_variable(VariableKind::kLandmark, VecX(VecX::Zero(3)), indefinite), GraphError);
  CHECK_THROWS_AS(g.add_variable(VariableKind::kLandmark, VecX(VecX::Zero(3)), MatX::Identity(2, 2)), GraphError);
  MatX non_finite = MatX::Identity(3, 3);
  non_finite(1, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(g.add_variable(VariableKind::kLandmark, VecX(VecX::Zero(3)), non_finite), GraphError);
  CHECK_THROWS_AS(g.add_variable(VariableKind::kPoseBasis, VecX(VecX::Zero(6)), MatX::Identity(6, 6)), GraphError);
  CHECK_THROWS_AS(g.node(NodeId{99}), GraphError);
}

TEST_CASE("zero precision landmark is unanchored until connected", "[graph]") {
  FactorGraph g;
  const auto bases = add_bases(g, 4);
  const NodeId lm = g.add_variable(VariableKind::kLandmark, VecX(Vec3(0, 0, 3)), MatX::Zero(3, 3));
  CHECK(g.unanchored(lm));
  const NodeId ext = g.add_constant(Pose::identity());
  g.add_factor({bases[0], bases[1], bases[2], bases[3], lm, ext}, visual_model(), MatX::Identity(2, 2));
  CHECK_FALSE(g.unanchored(lm));
  CHECK_FALSE(g.unanchored(ext));
}

TEST_CASE("factor adjacency and mailboxes", "[graph]") {
  FactorGraph g;
  const auto bases = add_bases(g, 4);
  const FactorId abs = g.add_factor(bases, absolute_model(), MatX::Identity(6, 6));
  CHECK(g.factor(abs).edges.size() == 4);
  for (const Edge& e : g.factor(abs).edges) {
    CHECK(e.to_node.has_value());
    CHECK(e.to_factor.has_value());
  }

  const NodeId lm = g.add_variable(VariableKind::kLandmark, VecX(Vec3(0, 0, 3)), MatX::Identity(3, 3));
  const NodeId ext = g.add_constant(Pose::identity());
  const FactorId vis = g.add_factor({bases[0], bases[1], bases[2], bases[3], lm, ext}, visual_model(),
                                    MatX::Identity(2, 2));
  const Factor& f = g.factor(vis);
  int variable_edges = 0;
  for (const Edge& e : f.edges) {
    if (e.constant) {
      CHECK_FALSE(e.to_node.has_value());
      CHECK_FALSE(e.to_factor.has_value());
    } else {
      ++variable_edges;
    }
  }
  CHECK(variable_edges == 5);
  CHECK(g.node(ext).edges.empty());
  CHECK(g.node(bases[0]).edges.size() == 2);
  CHECK(g.node(lm).edges.size() == 1);

  const FactorLinearization lin = linearize_factor(g, vis);
  CHECK(lin.dims.size() == 5);
  CHECK(lin.eta.size() == 27);
}

TEST_CASE("factor validation", "[graph]") {
  FactorGraph g;
  const auto bases = add_bases(g, 4);
  CHECK_THROWS_AS(g.add_factor({bases[0], bases[1], bases[2], NodeId{42}}, absolute_model(), MatX::Identity(6, 6)),
                  GraphError);
  CHECK_THROWS_AS(g.add_factor({bases[0], bases[1], bases[2], bases[2]}, absolute_model(), MatX::Identity(6, 6)),
                  GraphError);
  CHECK_THROWS_AS(g.add_factor(bases, absolute_model(), MatX::Identity(5, 5)), GraphError);
  CHECK_THROWS_AS(g.add_factor(bases, nullptr, MatX::Identity(6, 6)), GraphError);
  CHECK_THROWS_AS(g.add_factor({bases[0], bases[1], bases[2]}, absolute_model(), MatX::Identity(6, 6)), GraphError);
  const NodeId c = g.add_constant(VecX(VecX::Zero(2)));
  CHECK_THROWS_AS(g.add_factor({c}, std::make_shared<PriorModel>(VecX(VecX::Zero(2))), MatX::Identity(2, 2)),
                  GraphError);
  const FactorId f = g.add_factor(bases, absolute_model(), MatX::Identity(6, 6));
  CHECK_THROWS_AS(g.add_factor(bases, absolute_model(), MatX::Identity(6, 6), {}, f), GraphError);
  CHECK_THROWS_AS(g.remove_factor(FactorId{77}), GraphError);
  CHECK_THROWS_AS(g.factor(FactorId{77}), GraphError);
}

TEST_CASE("removing a factor clears adjacency", "[graph]") {
  FactorGraph g;
  const auto bases = add_bases(g, 4);
  const FactorId f = g.add_factor(bases, absolute_model(), MatX::Identity(6, 6));
  g.remove_factor(f);
  CHECK_FALSE(g.has_factor(f));
  for (NodeId b : bases) CHECK(g.node(b).edges.empty());
  CHECK(g.num_factors() == 0);
}

TEST_CASE("remove and re-add reproduces the original iterations", "[graph]") {
  auto build = [](bool churn) {
    test::rng().seed(7);
    auto p = std::make_unique<test::LinearProblem>();
    for (int i = 0; i < 4; ++i) p->add_node(2);
    p->add_term({0}, 2);
    p->add_term({0, 1}, 2);
    p->add_term({1, 2}, 2);
    p->add_term({2, 3}, 2);
    p->add_term({3, 0}, 2);
    if (churn) {
      const FactorId id{2};
      Factor copy = p->graph.factor(id);
      std::vector<NodeId> neighbors;
      for (const Edge& e : copy.edges) neighbors.push_back(e.node);
      p->graph.remove_factor(id);
      p->graph.add_factor(neighbors, copy.model, copy.sqrt_information, copy.loss, id);
    }
    return p;
  };
  auto a = build(false);
  auto b = build(true);
  SolverConfig cfg;
  cfg.max_iterations = 20;
  const RunRecord ra = GbpSolver(a->graph, cfg).solve();
  const RunRecord rb = GbpSolver(b->graph, cfg).solve();
  REQUIRE(ra.rows.size() == rb.rows.size());
  for (std::size_t k = 0; k < ra.rows.size(); ++k) CHECK(ra.rows[k].energy == rb.rows[k].energy);
  for (std::size_t i = 0; i < 4; ++i) CHECK(a->mean_of(i) == b->mean_of(i));
}

TEST_CASE("priors", "[graph]") {
  FactorGraph g;
  const Pose mean = test::random_pose();
  const NodeId x = g.add_variable(VariableKind::kPoseBasis, mean, MatX::Identity(6, 6));
  const FactorId prior = g.add_prior(x, mean, 4.0 * MatX::Identity(6, 6));
  CHECK(g.factor_energy(prior) < 1e-30);
  const FactorLinearization lin = linearize_factor(g, prior);
  CHECK(lin.residual.norm() < 1e-15);
  CHECK(close_rel(lin.lambda, 4.0 * MatX::Identity(6, 6), 1e-12));

  MatX inf = MatX::Identity(6, 6);
  inf(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(g.add_prior(x, mean, inf), GraphError);
  CHECK_THROWS_AS(g.add_prior(x, UnitQuaternion::identity(), MatX::Identity(3, 3)), GraphError);
  const NodeId c = g.add_constant(mean);
  CHECK_THROWS_AS(g.add_prior(c, mean, MatX::Identity(6, 6)), GraphError);
}

TEST_CASE("vector priors combine additively in one iteration", "[graph]") {
  FactorGraph g;
  const VecX x0 = test::random_vector(3);
  const NodeId x = g.add_variable(VariableKind::kGenericVector, x0, MatX::Zero(3, 3));
  const VecX m1 = test::random_vector(3);
  const VecX m2 = test::random_vector(3);
  MatX l1 = test::random_vector(9).reshaped(3, 3);
  l1 = l1 * l1.transpose() + MatX::Identity(3, 3);
  const MatX l2 = 2.5 * MatX::Identity(3, 3);
  g.add_prior(x, m1, l1);
  g.add_prior(x, m2, l2);

  SolverConfig cfg;
  cfg.node_step = 1.0;
  cfg.factor_step = 1.0;
  GbpSolver solver(g, cfg);
  solver.iterate();
  const MatX lambda = l1 + l2;
  const VecX expected = lambda.ldlt().solve(l1 * m1 + l2 * m2);
  CHECK(close_rel(std::get<VecX>(g.node(x).mean), expected, 1e-12));
  CHECK(close_rel(g.node(x).precision, lambda, 1e-12));
}

TEST_CASE("graph energy", "[graph]") {
  FactorGraph g;
  const NodeId x = g.add_variable(VariableKind::kGenericVector, VecX(Vec3(1.0, 2.0, 3.0)), MatX::Zero(3, 3));
  const VecX b(Vec3(0.5, -1.0, 2.0));
  const FactorId f = g.add_factor({x}, std::make_shared<LinearModel>(std::vector<MatX>{MatX::Identity(3, 3)}, b),
                                  MatX::Identity(3, 3));
  const double expected = 0.5 * (Vec3(1.0, 2.0, 3.0) - Vec3(0.5, -1.0, 2.0)).squaredNorm();
  CHECK(g.factor_energy(f) == Catch::Approx(expected).epsilon(1e-15));
  CHECK(g.energy() == Catch::Approx(expected).epsilon(1e-15));
  CHECK(graph_energy(g) == g.energy());

  const FactorGraph copy = g;
  CHECK(copy.energy() == g.energy());
}

TEST_CASE("energy is zero at ground truth with noise-free data", "[graph]") {
  ScenarioSpec spec;
  spec.noise = 0.0;
  spec.perturbation = 0.0;
  const Scenario s = simulate(spec);
  const Problem p = build_problem(s, LossFunction::trivial(), 0.0);
  CHECK(p.graph.energy() < 1e-18);

  spec.setup = Setup::kLocalization;
  spec.duration = 2.0;
  const Scenario vis = simulate(spec);
  const Problem pv = build_problem(vis, LossFunction::trivial(), 0.0);
  CHECK(pv.graph.energy() < 1e-18);
}

TEST_CASE("energy is invariant to insertion order", "[graph]") {
  ScenarioSpec spec;
  spec.noise = 1e-2;
  spec.perturbation = 1e-2;
  spec.duration = 2.0;
  const Scenario s = simulate(spec);
  const Problem p = build_problem(s, LossFunction::trivial(), 0.0);

  FactorGraph reversed;
  const auto ids = p.graph.node_ids();
  for (auto it = ids.rbegin(); it != ids.rend(); ++it) {
    const Node& n = p.graph.node(*it);
    reversed.add_variable(n.kind, n.mean, n.precision, n.id);
  }
  const auto fids = p.graph.factor_ids();
  for (auto it = fids.rbegin(); it != fids.rend(); ++it) {
    const Factor& f = p.graph.factor(*it);
    std::vector<NodeId> neighbors;
    for (const Edge& e : f.edges) neighbors.push_back(e.node);
    reversed.add_factor(neighbors, f.model, f.sqrt_information, f.loss, f.id);
  }
  CHECK(reversed.energy() == p.graph.energy());
}

TEST_CASE("mailboxes are double buffered", "[graph]") {
  Mailbox box;
  box.front = vacuous_message(VecX(VecX::Zero(2)));
  box.write({VecX(VecX::Ones(2)), VecX::Ones(2), MatX::Identity(2, 2)});
  CHECK(box.front.eta.isZero());
  CHECK(box.pending);
  box.publish();
  CHECK(box.front.eta == VecX::Ones(2));
  CHECK_FALSE(box.pending);
  box.publish();
  CHECK(box.front.eta == VecX::Ones(2));
}

TEST_CASE("message transport", "[graph]") {
  const MessageTriplet vac = vacuous_message(Pose::identity());
  CHECK(vac.eta.size() == 6);
  CHECK(vac.lambda.isZero());

  // Vector messages keep their mode exactly.
  const VecX f = test::random_vector(3);
  MatX lam = test::random_vector(9).reshaped(3, 3);
  lam = lam * lam.transpose() + MatX::Identity(3, 3);
  const MessageTriplet v{VecX(f), test::random_vector(3), lam};
  const VecX target = test::random_vector(3);
  const MessageTriplet moved = transport(v, VecX(target));
  CHECK(close_rel(target + moved.lambda.ldlt().solve(moved.eta), f + lam.ldlt().solve(v.eta), 1e-12));
  CHECK_THROWS_AS(transport(v, VecX(VecX::Zero(2))), std::invalid_argument);
  CHECK_THROWS_AS(transport(v, Pose::identity()), std::invalid_argument);

  // Pose messages keep their mode to second order in the frame offset.
  for (int i = 0; i < 100; ++i) {
    const Pose frame = test::random_pose();
    MatX pl = test::random_vector(36).reshaped(6, 6);
    pl = pl * pl.transpose() + MatX::Identity(6, 6);
    const MessageTriplet m{frame, VecX::Zero(6), pl};
    const Pose near = boxplus(frame, Vec6(test::random_vector(6, 1e-4)));
    const MessageTriplet t = transport(m, near);
    const Pose mode = boxplus(near, Vec6(t.lambda.ldlt().solve(t.eta)));
    CHECK(boxminus(mode, frame).norm() < 1e-7);
    CHECK(is_psd(t.lambda));
    const MessageTriplet same = transport(m, frame);
    CHECK(same.eta.norm() < 1e-14);
    CHECK(close_rel(same.lambda, pl, 1e-14));
  }
}

TEST_CASE("psd check", "[graph]") {
  CHECK(is_psd(MatX::Identity(3, 3)));
  CHECK(is_psd(MatX::Zero(3, 3)));
  MatX m = MatX::Identity(2, 2);
  m(1, 1) = -1e-3;
  CHECK_FALSE(is_psd(m));
}

TEST_CASE("snapshot lists nodes and factors", "[graph]") {
  FactorGraph g;
  const auto bases = add_bases(g, 4);
  g.add_constant(Pose::identity());
  g.add_factor(bases, absolute_model(), MatX::Identity(6, 6));
  const nlohmann::json j = g.snapshot();
  CHECK(j["nodes"].size() == 5);
  CHECK(j["factors"].size() == 1);
  CHECK(j["factors"][0]["type"] == "absolute");
  CHECK(j["factors"][0]["neighbors"].size() == 4);
  CHECK(j["nodes"][4]["constant"] == true);
}
