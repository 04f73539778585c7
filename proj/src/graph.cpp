#include "ctgbp/graph.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include "ctgbp/errors.hpp"

namespace ctgbp {
namespace {

void check_kind(VariableKind kind, const NodeValue& mean) {
  bool ok = false;
  switch (kind) {
    case VariableKind::kPoseBasis:
      ok = std::holds_alternative<Pose>(mean);
      break;
    case VariableKind::kRotation:
      ok = std::holds_alternative<UnitQuaternion>(mean);
      break;
    case VariableKind::kTranslation:
    case VariableKind::kLandmark:
      ok = std::holds_alternative<VecX>(mean) && std::get<VecX>(mean).size() == 3;
      break;
    case VariableKind::kGenericVector:
      ok = std::holds_alternative<VecX>(mean) && std::get<VecX>(mean).size() > 0;
      break;
  }
  if (!ok) {
    throw GraphError(fmt::format("initial mean does not match variable kind {}", to_string(kind)));
  }
}

bool all_finite(const MatX& m) { return m.allFinite(); }

nlohmann::json flatten(const MatX& m) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      out.push_back(m(r, c));
    }
  }
  return out;
}

}  // namespace

std::string to_string(VariableKind kind) {
  switch (kind) {
    case VariableKind::kPoseBasis:
      return "pose_basis";
    case VariableKind::kRotation:
      return "rotation";
    case VariableKind::kTranslation:
      return "translation";
    case VariableKind::kLandmark:
      return "landmark";
    case VariableKind::kGenericVector:
      break;
  }
  return "generic_vector";
}

bool is_psd(const MatX& m, double tol) {
  if (m.rows() != m.cols() || !all_finite(m)) return false;
  if (m.size() == 0) return true;
  const MatX sym = 0.5 * (m + m.transpose());
  if ((sym - m).cwiseAbs().maxCoeff() > tol * std::max(1.0, m.cwiseAbs().maxCoeff())) return false;
  Eigen::SelfAdjointEigenSolver<MatX> es(sym, Eigen::EigenvaluesOnly);
  const double top = std::max(1.0, std::abs(es.eigenvalues().maxCoeff()));
  return es.eigenvalues().minCoeff() >= -tol * top;
}

MessageTriplet vacuous_message(const NodeValue& frame) {
  const int n = tangent_dim(frame);
  return {frame, VecX::Zero(n), MatX::Zero(n, n)};
}

MessageTriplet transport(const MessageTriplet& msg, const NodeValue& target) {
  if (const auto* tv = std::get_if<VecX>(&target)) {
    const auto* fv = std::get_if<VecX>(&msg.frame);
    if (fv == nullptr || fv->size() != tv->size()) {
      throw std::invalid_argument("transport between values of different kinds");
    }
    if (*fv == *tv) return {target, msg.eta, msg.lambda};
    return {target, msg.eta + msg.lambda * (*fv - *tv), msg.lambda};
  }
  const VecX c = boxminus(msg.frame, target);
  if (c.isZero(0.0)) {
    return {target, msg.eta, msg.lambda};
  }
  // Only the rotation block of the retraction Jacobian differs from identity.
  const Mat3 j = so3_left_jacobian(c.head<3>());
  MatX ln = msg.lambda;
  ln.leftCols<3>() = msg.lambda.leftCols<3>() * j;
  MessageTriplet out;
  out.frame = target;
  out.lambda = ln;
  out.lambda.topRows<3>() = j.transpose() * ln.topRows<3>();
  out.lambda = 0.5 * (out.lambda + out.lambda.transpose()).eval();
  out.eta = msg.eta + ln * c;
  out.eta.head<3>() = (j.transpose() * out.eta.head<3>()).eval();
  return out;
}

NodeId FactorGraph::add_variable(VariableKind kind, NodeValue mean, MatX precision, std::optional<NodeId> id) {
  check_kind(kind, mean);
  const int dim = tangent_dim(mean);
  if (precision.rows() != dim || precision.cols() != dim) {
    throw GraphError(fmt::format("precision must be {}x{}, got {}x{}", dim, dim, precision.rows(), precision.cols()));
  }
  if (!is_psd(precision)) {
    throw GraphError("precision must be finite, symmetric and positive semi-definite");
  }
  const NodeId nid = id.value_or(NodeId{next_node_});
  if (nodes_.contains(nid.value)) {
    throw GraphError(fmt::format("duplicate node id {}", nid.value));
  }
  Node node;
  node.id = nid;
  node.kind = kind;
  node.mean = std::move(mean);
  node.precision = 0.5 * (precision + precision.transpose());
  nodes_.emplace(nid.value, std::move(node));
  next_node_ = std::max(next_node_, nid.value + 1);
  return nid;
}

NodeId FactorGraph::add_constant(NodeValue value, std::optional<NodeId> id) {
  const NodeId nid = id.value_or(NodeId{next_node_});
  if (nodes_.contains(nid.value)) {
    throw GraphError(fmt::format("duplicate node id {}", nid.value));
  }
  Node node;
  node.id = nid;
  node.constant = true;
  node.kind = std::holds_alternative<Pose>(value)             ? VariableKind::kPoseBasis
              : std::holds_alternative<UnitQuaternion>(value) ? VariableKind::kRotation
                                                              : VariableKind::kGenericVector;
  node.mean = std::move(value);
  nodes_.emplace(nid.value, std::move(node));
  next_node_ = std::max(next_node_, nid.value + 1);
  return nid;
}

FactorId FactorGraph::add_factor(const std::vector<NodeId>& neighbors, std::shared_ptr<const ResidualModel> model,
                                 MatX sqrt_information, LossFunction loss, std::optional<FactorId> id) {
  if (!model) {
    throw GraphError("factor needs a residual model");
  }
  const FactorId fid = id.value_or(FactorId{next_factor_});
  if (factors_.contains(fid.value)) {
    throw GraphError(fmt::format("duplicate factor id {}", fid.value));
  }
  std::vector<NodeValue> values;
  bool any_variable = false;
  for (std::size_t k = 0; k < neighbors.size(); ++k) {
    const auto it = nodes_.find(neighbors[k].value);
    if (it == nodes_.end()) {
      throw GraphError(fmt::format("factor references unknown node {}", neighbors[k].value));
    }
    if (std::count(neighbors.begin(), neighbors.begin() + static_cast<std::ptrdiff_t>(k), neighbors[k]) > 0) {
      throw GraphError(fmt::format("factor lists node {} twice", neighbors[k].value));
    }
    values.push_back(it->second.mean);
    any_variable = any_variable || !it->second.constant;
  }
  if (!any_variable) {
    throw GraphError("factor must connect at least one variable node");
  }
  model->check_neighbors(values);
  const int m = model->dimension();
  if (sqrt_information.rows() != m || sqrt_information.cols() != m || !all_finite(sqrt_information)) {
    throw GraphError(fmt::format("square-root information must be a finite {}x{} matrix", m, m));
  }

  Factor f;
  f.id = fid;
  f.model = std::move(model);
  f.sqrt_information = std::move(sqrt_information);
  f.loss = loss;
  f.edges.reserve(neighbors.size());
  for (std::size_t k = 0; k < neighbors.size(); ++k) {
    Node& n = nodes_.at(neighbors[k].value);
    Edge e;
    e.node = neighbors[k];
    e.constant = n.constant;
    if (!n.constant) {
      // Factors start from the node's prior belief; nodes start with nothing.
      e.to_factor.emplace();
      e.to_factor->front = {n.mean, VecX::Zero(n.precision.rows()), n.precision};
      e.to_node.emplace();
      e.to_node->front = vacuous_message(n.mean);
      const auto pos = std::lower_bound(n.edges.begin(), n.edges.end(), std::make_pair(fid, std::size_t{0}));
      n.edges.insert(pos, {fid, k});
    }
    f.edges.push_back(std::move(e));
  }
  factors_.emplace(fid.value, std::move(f));
  next_factor_ = std::max(next_factor_, fid.value + 1);
  return fid;
}

void FactorGraph::remove_factor(FactorId id) {
  const auto it = factors_.find(id.value);
  if (it == factors_.end()) {
    throw GraphError(fmt::format("unknown factor {}", id.value));
  }
  for (const Edge& e : it->second.edges) {
    if (e.constant) continue;
    auto& edges = nodes_.at(e.node.value).edges;
    std::erase_if(edges, [&](const auto& p) { return p.first == id; });
  }
  factors_.erase(it);
}

FactorId FactorGraph::add_prior(NodeId node_id, NodeValue mean, const MatX& precision) {
  const Node& n = node(node_id);
  if (n.constant) {
    throw GraphError("priors can only be placed on variable nodes");
  }
  if (!same_kind(n.mean, mean)) {
    throw GraphError("prior mean does not match the node kind");
  }
  const int dim = tangent_dim(mean);
  if (precision.rows() != dim || precision.cols() != dim || !is_psd(precision)) {
    throw GraphError("prior precision must be a finite symmetric PSD matrix of the tangent dimension");
  }
  Eigen::SelfAdjointEigenSolver<MatX> es(0.5 * (precision + precision.transpose()));
  const VecX roots = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  MatX sqrt_info = roots.asDiagonal() * es.eigenvectors().transpose();
  return add_factor({node_id}, std::make_shared<PriorModel>(std::move(mean)), std::move(sqrt_info));
}

const Node& FactorGraph::node(NodeId id) const {
  const auto it = nodes_.find(id.value);
  if (it == nodes_.end()) throw GraphError(fmt::format("unknown node {}", id.value));
  return it->second;
}

Node& FactorGraph::node(NodeId id) {
  const auto it = nodes_.find(id.value);
  if (it == nodes_.end()) throw GraphError(fmt::format("unknown node {}", id.value));
  return it->second;
}

const Factor& FactorGraph::factor(FactorId id) const {
  const auto it = factors_.find(id.value);
  if (it == factors_.end()) throw GraphError(fmt::format("unknown factor {}", id.value));
  return it->second;
}

Factor& FactorGraph::factor(FactorId id) {
  const auto it = factors_.find(id.value);
  if (it == factors_.end()) throw GraphError(fmt::format("unknown factor {}", id.value));
  return it->second;
}

std::vector<NodeId> FactorGraph::node_ids() const {
  std::vector<NodeId> out;
  out.reserve(nodes_.size());
  for (const auto& [k, n] : nodes_) out.push_back(n.id);
  return out;
}

std::vector<NodeId> FactorGraph::variable_ids() const {
  std::vector<NodeId> out;
  for (const auto& [k, n] : nodes_) {
    if (!n.constant) out.push_back(n.id);
  }
  return out;
}

std::vector<FactorId> FactorGraph::factor_ids() const {
  std::vector<FactorId> out;
  out.reserve(factors_.size());
  for (const auto& [k, f] : factors_) out.push_back(f.id);
  return out;
}

bool FactorGraph::unanchored(NodeId id) const {
  const Node& n = node(id);
  return !n.constant && n.edges.empty() && n.precision.isZero(0.0);
}

void FactorGraph::set_mean(NodeId id, const NodeValue& mean) {
  Node& n = node(id);
  if (!same_kind(n.mean, mean)) {
    throw GraphError("set_mean: value kind does not match the node");
  }
  n.mean = mean;
}

void FactorGraph::set_belief(NodeId id, const NodeValue& mean, const MatX& precision) {
  set_mean(id, mean);
  node(id).precision = precision;
}

std::vector<NodeValue> FactorGraph::neighbor_values(const Factor& f) const {
  std::vector<NodeValue> out;
  out.reserve(f.edges.size());
  for (const Edge& e : f.edges) out.push_back(nodes_.at(e.node.value).mean);
  return out;
}

double FactorGraph::factor_energy(FactorId id) const {
  const Factor& f = factor(id);
  const std::vector<NodeValue> values = neighbor_values(f);
  const ResidualEvaluation ev = f.model->evaluate(values, false);
  const VecX whitened = f.sqrt_information * ev.residual;
  return 0.5 * f.loss.evaluate(whitened.squaredNorm()).rho;
}

double FactorGraph::energy() const {
  double total = 0.0;
  for (const auto& [k, f] : factors_) total += factor_energy(f.id);
  return total;
}

nlohmann::json FactorGraph::snapshot() const {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& [k, n] : nodes_) {
    nlohmann::json j = {{"id", n.id.value}, {"constant", n.constant}, {"mean", to_json(n.mean)}};
    if (!n.constant) {
      j["kind"] = to_string(n.kind);
      j["precision"] = flatten(n.precision);
    }
    nodes.push_back(std::move(j));
  }
  nlohmann::json factors = nlohmann::json::array();
  for (const auto& [k, f] : factors_) {
    nlohmann::json neighbors = nlohmann::json::array();
    for (const Edge& e : f.edges) neighbors.push_back(e.node.value);
    factors.push_back({{"id", f.id.value},
                       {"type", f.model->name()},
                       {"neighbors", neighbors},
                       {"loss", f.loss.to_string()},
                       {"sqrt_information", flatten(f.sqrt_information)},
                       {"measurement", f.model->payload()}});
  }
  return {{"nodes", nodes}, {"factors", factors}};
}

}  // namespace ctgbp
