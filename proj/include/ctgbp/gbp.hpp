#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ctgbp/graph.hpp"

namespace ctgbp {

/// Quadratic model of one factor at its linearization point, restricted to
/// its variable neighbors (constants are folded into the residual).
struct FactorLinearization {
  std::vector<NodeValue> point;      // per variable neighbor
  std::vector<std::size_t> edges;    // edge index of each variable neighbor
  std::vector<int> offsets;          // column offset of each block
  std::vector<int> dims;
  VecX residual;                     // robust whitened residual
  MatX jacobian;                     // robust whitened Jacobian (variables only)
  VecX eta;                          // -J^T r
  MatX lambda;                       // J^T J
  double energy = 0.0;               // 0.5 rho(|Omega r|^2)
};

/// Evaluates, whitens and robustifies a factor at the given neighbor values.
FactorLinearization linearize_factor(const Factor& factor, std::span<const NodeValue> neighbor_values);
FactorLinearization linearize_factor(const FactorGraph& graph, FactorId id);

struct NodeUpdateResult {
  bool updated = false;  // false when the summed precision is singular
  NodeValue mean;
  MatX precision;
  double delta = 0.0;    // tangent norm of the mean change
  std::vector<MessageTriplet> outgoing;  // one per incoming message, same order
};

/// Fuses incoming factor-to-node messages about the current mean `mean`,
/// steps the mean by alpha * Lambda^-1 eta and emits leave-one-out messages
/// expressed at the new mean.
NodeUpdateResult node_update(const NodeValue& mean, std::span<const MessageTriplet> incoming, double alpha);

/// Sum of all incoming messages except `exclude`, expressed at `mean`.
MessageTriplet node_to_factor_message(const NodeValue& mean, std::span<const MessageTriplet> incoming,
                                      std::size_t exclude);

struct FactorUpdateStats {
  std::size_t jittered = 0;
  std::size_t vacuous = 0;
};

/// Factor-to-node messages for every variable neighbor of a linearized factor.
/// `incoming[k]` is the node-to-factor message of variable neighbor k and
/// `previous[k]` the message this factor last sent to it (empty = vacuous).
/// The information vector is relaxed from the previous message by `alpha`.
std::vector<MessageTriplet> factor_update(const FactorLinearization& lin, std::span<const MessageTriplet> incoming,
                                          double alpha, FactorUpdateStats* stats = nullptr,
                                          std::span<const MessageTriplet> previous = {});

/// Marginal information (eta, lambda) of block `target` after eliminating the
/// other blocks of the joint (eta_joint, lambda_joint), where the target's own
/// contribution is taken from (eta_self, lambda_self). Exposed for testing.
struct SchurResult {
  VecX eta;
  MatX lambda;
  bool jittered = false;
  bool failed = false;
};
SchurResult schur_marginal(const VecX& eta_joint, const MatX& lambda_joint, const VecX& eta_self,
                           const MatX& lambda_self, int offset, int dim);

enum class Schedule { kSynchronous, kDropout };

struct SolverConfig {
  Schedule schedule = Schedule::kSynchronous;
  double dropout_nodes = 0.0;
  double dropout_factors = 0.0;
  double node_step = 0.7;
  double factor_step = 0.7;
  std::size_t max_iterations = 50;
  double tolerance = 1e-9;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  /// Throws ConfigError on invalid values.
  void validate() const;
};

struct RunRow {
  std::size_t iter = 0;
  double energy = 0.0;
  double max_delta = 0.0;
  double wall_ms = 0.0;
};

struct RunRecord {
  std::vector<RunRow> rows;  // row 0 is the initial state
  bool converged = false;
  std::size_t factor_failures = 0;
  std::size_t jittered = 0;
  std::size_t vacuous = 0;
  std::string failure;       // non-empty when the solver aborted

  std::size_t iterations() const { return rows.empty() ? 0 : rows.size() - 1; }
  double final_energy() const { return rows.empty() ? 0.0 : rows.back().energy; }
};

/// First iteration whose relative energy change drops below `tol`.
/// Returns iterations() when the threshold is never reached.
std::size_t iterations_to_convergence(const RunRecord& record, double tol = 1e-6);

/// Runs fn(i) for i in [0, n) on up to `workers` threads with static chunking.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

/// Gaussian Belief Propagation on a factor graph. The graph structure must
/// not change while a solver refers to it.
class GbpSolver {
 public:
  GbpSolver(FactorGraph& graph, SolverConfig config);

  /// One factor phase followed by one node phase.
  RunRow iterate();
  /// Iterates until the relative energy change drops below the tolerance or
  /// the iteration cap is hit.
  RunRecord solve();

  const RunRecord& record() const { return record_; }

 private:
  void factor_phase(const std::vector<char>& active);
  void node_phase(const std::vector<char>& active, double* max_delta);

  FactorGraph& graph_;
  SolverConfig config_;
  std::mt19937_64 rng_;
  std::vector<FactorId> factor_ids_;
  std::vector<NodeId> node_ids_;
  std::vector<Factor*> factors_;
  std::vector<Node*> nodes_;
  // Per node edge: (factor-to-node, node-to-factor) mailboxes.
  std::vector<std::vector<std::pair<Mailbox*, Mailbox*>>> node_boxes_;
  RunRecord record_;
  std::size_t iteration_ = 0;
};

double relative_change(double previous, double current);

}  // namespace ctgbp
