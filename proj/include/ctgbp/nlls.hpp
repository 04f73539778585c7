#pragma once

#include <cstddef>
#include <map>
#include <utility>
#include <vector>

#include "ctgbp/gbp.hpp"
#include "ctgbp/graph.hpp"

namespace ctgbp {

/// Gauss-Newton normal equations in global tangent coordinates.
struct NormalEquations {
  std::vector<NodeId> variables;          // ordering of the global state
  std::map<std::size_t, int> offset;      // node id -> first column
  int dimension = 0;
  /// Upper-triangular blocks keyed by (row variable index, column variable index).
  std::map<std::pair<std::size_t, std::size_t>, MatX> blocks;
  VecX gradient;                          // g = sum J^T r
  double energy = 0.0;

  MatX dense_hessian() const;
};

NormalEquations build_normal_equations(const FactorGraph& graph);

enum class Damping { kNone, kLevenbergMarquardt };

struct NllsConfig {
  std::size_t max_iterations = 50;
  double tolerance = 1e-9;
  Damping damping = Damping::kLevenbergMarquardt;
  double initial_lambda = 1e-4;
  std::size_t max_rejections = 20;
};

/// Iterates H delta = -g and applies delta by boxplus. With damping disabled a
/// singular H is reported through RunRecord::failure.
RunRecord gauss_newton_solve(FactorGraph& graph, const NllsConfig& config);

}  // namespace ctgbp
