#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctgbp/manifold.hpp"
#include "ctgbp/robust.hpp"
#include "ctgbp/sensors.hpp"

namespace ctgbp {

struct NodeId {
  std::size_t value = 0;
  auto operator<=>(const NodeId&) const = default;
};

struct FactorId {
  std::size_t value = 0;
  auto operator<=>(const FactorId&) const = default;
};

enum class VariableKind { kPoseBasis, kRotation, kTranslation, kLandmark, kGenericVector };

std::string to_string(VariableKind kind);

/// Gaussian message in information form, expressed in the tangent space of
/// `frame`: energy 0.5 y^T lambda y - y^T eta, with x = frame boxplus y.
/// A message with eta = 0 is in mean form (its mode is the frame itself).
struct MessageTriplet {
  NodeValue frame;
  VecX eta;
  MatX lambda;
};

/// Zero-information message anchored at `frame`.
MessageTriplet vacuous_message(const NodeValue& frame);

/// Re-expresses a message in the tangent space of `target`, linearizing the
/// chart change at the message frame.
MessageTriplet transport(const MessageTriplet& msg, const NodeValue& target);

/// Mailbox slot for one direction of one edge. Writers fill `back`; readers
/// only see `front`, which is replaced at the phase barrier.
struct Mailbox {
  MessageTriplet front;
  MessageTriplet back;
  bool pending = false;

  void write(MessageTriplet msg) {
    back = std::move(msg);
    pending = true;
  }
  void publish() {
    if (pending) {
      std::swap(front, back);
      pending = false;
    }
  }
};

struct Node {
  NodeId id;
  bool constant = false;
  VariableKind kind = VariableKind::kGenericVector;
  NodeValue mean;
  MatX precision;  // empty for constants
  /// (factor, edge index within that factor), sorted by factor id.
  std::vector<std::pair<FactorId, std::size_t>> edges;
};

struct Edge {
  NodeId node;
  bool constant = false;
  // Empty for constant neighbors.
  std::optional<Mailbox> to_node;
  std::optional<Mailbox> to_factor;
};

struct Factor {
  FactorId id;
  std::shared_ptr<const ResidualModel> model;
  MatX sqrt_information;
  LossFunction loss;
  std::vector<Edge> edges;  // neighbor order defines the stacking order
};

/// Bipartite factor graph of variable nodes, constant nodes and factors.
class FactorGraph {
 public:
  /// Precision must be symmetric positive semi-definite. Throws GraphError.
  NodeId add_variable(VariableKind kind, NodeValue mean, MatX precision, std::optional<NodeId> id = std::nullopt);
  NodeId add_constant(NodeValue value, std::optional<NodeId> id = std::nullopt);
  FactorId add_factor(const std::vector<NodeId>& neighbors, std::shared_ptr<const ResidualModel> model,
                      MatX sqrt_information, LossFunction loss = {}, std::optional<FactorId> id = std::nullopt);
  void remove_factor(FactorId id);
  /// Unary prior factor with residual x boxminus mean, whitened by a square root of `precision`.
  FactorId add_prior(NodeId node, NodeValue mean, const MatX& precision);

  bool has_node(NodeId id) const { return nodes_.contains(id.value); }
  bool has_factor(FactorId id) const { return factors_.contains(id.value); }
  const Node& node(NodeId id) const;
  Node& node(NodeId id);
  const Factor& factor(FactorId id) const;
  Factor& factor(FactorId id);

  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_factors() const { return factors_.size(); }
  std::vector<NodeId> node_ids() const;
  std::vector<NodeId> variable_ids() const;
  std::vector<FactorId> factor_ids() const;

  /// Variable with zero precision and no connected factor.
  bool unanchored(NodeId id) const;

  void set_mean(NodeId id, const NodeValue& mean);
  void set_belief(NodeId id, const NodeValue& mean, const MatX& precision);

  /// Current means of a factor's neighbors, in neighbor order.
  std::vector<NodeValue> neighbor_values(const Factor& f) const;

  /// 0.5 rho(|Omega r|^2) of one factor at the current means.
  double factor_energy(FactorId id) const;
  /// Sum of factor energies in factor id order.
  double energy() const;

  /// Means, precisions, factors with neighbor ids and measurement payloads.
  nlohmann::json snapshot() const;

 private:
  std::map<std::size_t, Node> nodes_;
  std::map<std::size_t, Factor> factors_;
  std::size_t next_node_ = 0;
  std::size_t next_factor_ = 0;
};

/// Same as FactorGraph::energy(); free form for symmetry with the solvers.
inline double graph_energy(const FactorGraph& graph) { return graph.energy(); }

/// Symmetrizes and checks min eigenvalue >= -tol * max(1, |max eigenvalue|).
bool is_psd(const MatX& m, double tol = 1e-9);

}  // namespace ctgbp
