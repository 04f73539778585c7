#include "ctgbp/gbp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include "ctgbp/errors.hpp"

namespace ctgbp {
namespace {

// Mean-form messages are only emitted when the rotation step stays well
// inside the region where the retraction Jacobians are accurate.
constexpr double kMeanFormMaxRotation = 1.0;

/// Jacobian of (x boxplus (tau + d)) boxminus (x boxplus tau) wrt d, inverted:
/// maps tangents at x boxplus tau back to increments of tau.
MatX inverse_retraction_jacobian(const NodeValue& x, const VecX& tau) {
  const int n = tangent_dim(x);
  MatX j = MatX::Identity(n, n);
  if (!std::holds_alternative<VecX>(x)) {
    j.topLeftCorner<3, 3>() = so3_left_jacobian_inverse(tau.head<3>());
  }
  return j;
}

double rotation_norm(const NodeValue& x, const VecX& tau) {
  return std::holds_alternative<VecX>(x) ? 0.0 : tau.head<3>().norm();
}

MatX symmetrized(const MatX& m) { return 0.5 * (m + m.transpose()); }

/// Clips negative eigenvalues. Returns whether the input was positive definite.
bool project_psd(MatX& m) {
  if (m.size() == 0) return false;
  Eigen::SelfAdjointEigenSolver<MatX> es(symmetrized(m));
  const VecX& ev = es.eigenvalues();
  const double top = std::max(std::abs(ev.maxCoeff()), 1e-300);
  const bool definite = ev.minCoeff() > 1e-12 * top && ev.maxCoeff() > 0.0;
  if (ev.minCoeff() < 0.0) {
    m = es.eigenvectors() * ev.cwiseMax(0.0).asDiagonal() * es.eigenvectors().transpose();
  } else {
    m = symmetrized(m);
  }
  return definite;
}

/// Cheap conditioning estimate from the Cholesky diagonal.
double llt_condition(const Eigen::LLT<MatX>& llt) {
  const VecX d = llt.matrixLLT().diagonal();
  const double hi = d.maxCoeff();
  if (!(hi > 0.0)) return 0.0;
  const double r = d.minCoeff() / hi;
  return r * r;
}

/// `psd` marks precisions that are positive semi-definite by construction.
MessageTriplet emit_factor_message(const NodeValue& point, VecX eta, MatX lambda, bool psd) {
  lambda = symmetrized(lambda);
  Eigen::LLT<MatX> llt(lambda);
  bool definite = llt.info() == Eigen::Success && llt_condition(llt) > 1e-12;
  if (!definite && !psd) {
    definite = project_psd(lambda);
    if (definite) llt.compute(lambda);
  }
  if (definite && llt.info() == Eigen::Success) {
    const VecX tau = llt.solve(eta);
    if (tau.allFinite() && rotation_norm(point, tau) < kMeanFormMaxRotation) {
      const MatX n = inverse_retraction_jacobian(point, tau);
      MessageTriplet out;
      out.frame = boxplus(point, tau);
      out.lambda = symmetrized(n.transpose() * lambda * n);
      out.eta = VecX::Zero(eta.size());
      return out;
    }
  }
  return {point, eta, lambda};
}

constexpr int kSmall = 6;
using SmallMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kSmall, kSmall>;
using SmallVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kSmall, 1>;

/// Cholesky factorization for matrices of size at most kSmall.
class SmallCholesky {
 public:
  explicit SmallCholesky(const SmallMat& a) : n_(static_cast<int>(a.rows())) {
    for (int j = 0; j < n_; ++j) {
      double d = a(j, j);
      for (int k = 0; k < j; ++k) d -= l_[j][k] * l_[j][k];
      if (!(d > 0.0)) {
        ok_ = false;
        return;
      }
      l_[j][j] = std::sqrt(d);
      for (int i = j + 1; i < n_; ++i) {
        double v = a(i, j);
        for (int k = 0; k < j; ++k) v -= l_[i][k] * l_[j][k];
        l_[i][j] = v / l_[j][j];
      }
    }
  }

  bool ok() const { return ok_; }
  /// Squared ratio of the smallest to the largest Cholesky pivot.
  double condition() const {
    double lo = l_[0][0];
    double hi = l_[0][0];
    for (int i = 1; i < n_; ++i) {
      lo = std::min(lo, l_[i][i]);
      hi = std::max(hi, l_[i][i]);
    }
    return (lo / hi) * (lo / hi);
  }

  void solve_in_place(double* x) const {
    for (int i = 0; i < n_; ++i) {
      double v = x[i];
      for (int k = 0; k < i; ++k) v -= l_[i][k] * x[k];
      x[i] = v / l_[i][i];
    }
    for (int i = n_ - 1; i >= 0; --i) {
      double v = x[i];
      for (int k = i + 1; k < n_; ++k) v -= l_[k][i] * x[k];
      x[i] = v / l_[i][i];
    }
  }

  SmallVec solve(const SmallVec& b) const {
    SmallVec x = b;
    solve_in_place(x.data());
    return x;
  }

  SmallMat solve(const SmallMat& b) const {
    SmallMat x = b;
    for (Eigen::Index c = 0; c < x.cols(); ++c) solve_in_place(x.col(c).data());
    return x;
  }

 private:
  int n_;
  bool ok_ = true;
  double l_[kSmall][kSmall] = {};
};

/// Woodbury form of the factor-to-node marginals, valid when every incoming
/// precision is positive definite. Only used when the residual and every
/// block fit in stack-sized matrices.
bool low_rank_messages(const FactorLinearization& lin, const std::vector<MessageTriplet>& local,
                       std::vector<VecX>& etas, std::vector<MatX>& lambdas) {
  const std::size_t k_count = lin.dims.size();
  const Eigen::Index m = lin.residual.size();
  if (m > kSmall) return false;
  for (int d : lin.dims) {
    if (d > kSmall) return false;
  }
  std::vector<SmallMat> a(k_count);
  std::vector<SmallVec> v(k_count);
  SmallMat s_all = SmallMat::Zero(m, m);
  SmallVec v_all = SmallVec::Zero(m);
  for (std::size_t k = 0; k < k_count; ++k) {
    const SmallCholesky chol{SmallMat(local[k].lambda)};
    if (!chol.ok() || !(chol.condition() >= 1e-10)) return false;
    const SmallMat jk = lin.jacobian.middleCols(lin.offsets[k], lin.dims[k]);
    const SmallMat dinv_jt = chol.solve(SmallMat(jk.transpose()));
    a[k].noalias() = jk * dinv_jt;
    const SmallVec eta_k = lin.eta.segment(lin.offsets[k], lin.dims[k]) + local[k].eta;
    v[k].noalias() = dinv_jt.transpose() * eta_k;
    s_all += a[k];
    v_all += v[k];
  }
  const SmallVec r = lin.residual;
  etas.resize(k_count);
  lambdas.resize(k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    SmallMat sk = SmallMat::Identity(m, m) + s_all - a[k];
    sk = (0.5 * (sk + sk.transpose())).eval();
    const SmallCholesky chol(sk);
    if (!chol.ok()) return false;
    const SmallMat ja = lin.jacobian.middleCols(lin.offsets[k], lin.dims[k]);
    const SmallMat w_ja = chol.solve(ja);
    SmallMat lam = ja.transpose() * w_ja;
    lambdas[k] = 0.5 * (lam + lam.transpose());
    const SmallVec w_v = chol.solve(SmallVec(v_all - v[k]));
    etas[k] = -(ja.transpose() * (r + w_v));
  }
  return true;
}

}  // namespace

FactorLinearization linearize_factor(const Factor& factor, std::span<const NodeValue> values) {
  const ResidualEvaluation ev = factor.model->evaluate(values, true);
  FactorLinearization lin;
  int total = 0;
  for (std::size_t k = 0; k < factor.edges.size(); ++k) {
    if (factor.edges[k].constant) continue;
    lin.point.push_back(values[k]);
    lin.edges.push_back(k);
    lin.offsets.push_back(total);
    const int d = tangent_dim(values[k]);
    lin.dims.push_back(d);
    total += d;
  }
  const VecX whitened = factor.sqrt_information * ev.residual;
  MatX jac(whitened.size(), total);
  for (std::size_t b = 0; b < lin.edges.size(); ++b) {
    jac.middleCols(lin.offsets[b], lin.dims[b]) = factor.sqrt_information * ev.jacobians[lin.edges[b]];
  }
  RobustResidual robust = triggs_correct(whitened, jac, factor.loss);
  lin.energy = 0.5 * robust.loss.rho;
  lin.residual = std::move(robust.residual);
  lin.jacobian = std::move(robust.jacobian);
  lin.eta = -lin.jacobian.transpose() * lin.residual;
  lin.lambda = lin.jacobian.transpose() * lin.jacobian;
  return lin;
}

FactorLinearization linearize_factor(const FactorGraph& graph, FactorId id) {
  const Factor& f = graph.factor(id);
  const std::vector<NodeValue> values = graph.neighbor_values(f);
  return linearize_factor(f, values);
}

MessageTriplet node_to_factor_message(const NodeValue& mean, std::span<const MessageTriplet> incoming,
                                      std::size_t exclude) {
  MessageTriplet out = vacuous_message(mean);
  for (std::size_t k = 0; k < incoming.size(); ++k) {
    if (k == exclude) continue;
    const MessageTriplet t = transport(incoming[k], mean);
    out.eta += t.eta;
    out.lambda += t.lambda;
  }
  return out;
}

NodeUpdateResult node_update(const NodeValue& mean, std::span<const MessageTriplet> incoming, double alpha) {
  const int n = tangent_dim(mean);
  NodeUpdateResult res;
  res.mean = mean;

  VecX eta = VecX::Zero(n);
  MatX lambda = MatX::Zero(n, n);
  for (const MessageTriplet& msg : incoming) {
    const MessageTriplet t = transport(msg, mean);
    eta += t.eta;
    lambda += t.lambda;
  }
  res.precision = symmetrized(lambda);

  if (!incoming.empty()) {
    Eigen::LLT<MatX> llt(res.precision);
    if (llt.info() == Eigen::Success) {
      const VecX tau = alpha * llt.solve(eta);
      if (tau.allFinite()) {
        res.updated = true;
        res.mean = boxplus(mean, tau);
        res.delta = tau.norm();
        const MatX jinv = inverse_retraction_jacobian(mean, tau);
        res.precision = symmetrized(jinv.transpose() * res.precision * jinv);
      }
    }
  }

  // Leave-one-out sums at the new mean via prefix/suffix accumulation.
  const std::size_t count = incoming.size();
  std::vector<MessageTriplet> local(count);
  for (std::size_t k = 0; k < count; ++k) local[k] = transport(incoming[k], res.mean);
  std::vector<VecX> suffix_eta(count + 1, VecX::Zero(n));
  std::vector<MatX> suffix_lambda(count + 1, MatX::Zero(n, n));
  for (std::size_t k = count; k-- > 0;) {
    suffix_eta[k] = suffix_eta[k + 1] + local[k].eta;
    suffix_lambda[k] = suffix_lambda[k + 1] + local[k].lambda;
  }
  VecX prefix_eta = VecX::Zero(n);
  MatX prefix_lambda = MatX::Zero(n, n);
  res.outgoing.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    res.outgoing.push_back({res.mean, prefix_eta + suffix_eta[k + 1],
                            symmetrized(prefix_lambda + suffix_lambda[k + 1])});
    prefix_eta += local[k].eta;
    prefix_lambda += local[k].lambda;
  }
  return res;
}

SchurResult schur_marginal(const VecX& eta_joint, const MatX& lambda_joint, const VecX& eta_self,
                           const MatX& lambda_self, int offset, int dim) {
  SchurResult out{eta_self, lambda_self};
  const int total = static_cast<int>(eta_joint.size());
  if (total == dim) return out;

  std::vector<int> rest;
  rest.reserve(static_cast<std::size_t>(total - dim));
  for (int i = 0; i < total; ++i) {
    if (i < offset || i >= offset + dim) rest.push_back(i);
  }
  std::vector<int> self(static_cast<std::size_t>(dim));
  for (int i = 0; i < dim; ++i) self[static_cast<std::size_t>(i)] = offset + i;

  MatX lbb = lambda_joint(rest, rest);
  const MatX lab = lambda_joint(self, rest);
  const VecX eb = eta_joint(rest);

  Eigen::LLT<MatX> llt(lbb);
  if (llt.info() != Eigen::Success) {
    const double jitter = 1e-9 * std::max(1.0, lbb.diagonal().mean());
    lbb.diagonal().array() += jitter;
    llt.compute(lbb);
    out.jittered = true;
    if (llt.info() != Eigen::Success) {
      out.failed = true;
      out.eta = VecX::Zero(dim);
      out.lambda = MatX::Zero(dim, dim);
      return out;
    }
  }
  const MatX solved = llt.solve(lab.transpose());
  out.lambda = symmetrized(lambda_self - lab * solved);
  out.eta = eta_self - solved.transpose() * eb;
  return out;
}

std::vector<MessageTriplet> factor_update(const FactorLinearization& lin, std::span<const MessageTriplet> incoming,
                                          double alpha, FactorUpdateStats* stats,
                                          std::span<const MessageTriplet> previous) {
  const std::size_t k_count = lin.dims.size();
  std::vector<MessageTriplet> local(k_count);
  for (std::size_t k = 0; k < k_count; ++k) local[k] = transport(incoming[k], lin.point[k]);

  std::vector<VecX> etas;
  std::vector<MatX> lambdas;
  const bool low_rank = lin.residual.size() < lin.eta.size() && low_rank_messages(lin, local, etas, lambdas);
  if (!low_rank) {
    VecX eta = lin.eta;
    MatX lambda = lin.lambda;
    for (std::size_t k = 0; k < k_count; ++k) {
      eta.segment(lin.offsets[k], lin.dims[k]) += local[k].eta;
      lambda.block(lin.offsets[k], lin.offsets[k], lin.dims[k], lin.dims[k]) += local[k].lambda;
    }
    etas.resize(k_count);
    lambdas.resize(k_count);
    for (std::size_t k = 0; k < k_count; ++k) {
      const int o = lin.offsets[k];
      const int d = lin.dims[k];
      SchurResult s = schur_marginal(eta, lambda, lin.eta.segment(o, d), lin.lambda.block(o, o, d, d), o, d);
      if (stats != nullptr) {
        stats->jittered += s.jittered ? 1 : 0;
        stats->vacuous += s.failed ? 1 : 0;
      }
      etas[k] = std::move(s.eta);
      lambdas[k] = std::move(s.lambda);
    }
  }

  std::vector<MessageTriplet> out;
  out.reserve(k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    VecX eta = alpha * etas[k];
    if (k < previous.size() && alpha < 1.0) eta += (1.0 - alpha) * transport(previous[k], lin.point[k]).eta;
    out.push_back(emit_factor_message(lin.point[k], std::move(eta), std::move(lambdas[k]), low_rank));
  }
  return out;
}

void SolverConfig::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError(fmt::format("{} must lie in [0, 1), got {}", name, p));
  };
  auto step = [](double a, const char* name) {
    if (!(a > 0.0 && a <= 1.0)) throw ConfigError(fmt::format("{} must lie in (0, 1], got {}", name, a));
  };
  prob(dropout_nodes, "dropout_nodes");
  prob(dropout_factors, "dropout_factors");
  step(node_step, "node_step");
  step(factor_step, "factor_step");
  if (max_iterations == 0) throw ConfigError("max_iterations must be positive");
  if (!(tolerance >= 0.0)) throw ConfigError("tolerance must be non-negative");
  if (workers == 0) throw ConfigError("workers must be positive");
}

double relative_change(double previous, double current) {
  const double diff = std::abs(previous - current);
  if (diff == 0.0) return 0.0;
  return diff / std::max(std::abs(previous), 1e-300);
}

std::size_t iterations_to_convergence(const RunRecord& record, double tol) {
  for (std::size_t k = 1; k < record.rows.size(); ++k) {
    if (relative_change(record.rows[k - 1].energy, record.rows[k].energy) < tol) return k;
  }
  return record.iterations();
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  const std::size_t threads = std::min(std::max<std::size_t>(workers, 1), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    pool.emplace_back([&, begin, end] {
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

GbpSolver::GbpSolver(FactorGraph& graph, SolverConfig config)
    : graph_(graph), config_(config), rng_(config.seed) {
  config_.validate();
  factor_ids_ = graph_.factor_ids();
  node_ids_ = graph_.variable_ids();
  for (FactorId id : factor_ids_) factors_.push_back(&graph_.factor(id));
  for (NodeId id : node_ids_) {
    Node& node = graph_.node(id);
    nodes_.push_back(&node);
    std::vector<std::pair<Mailbox*, Mailbox*>> boxes;
    boxes.reserve(node.edges.size());
    for (const auto& [fid, edge] : node.edges) {
      Edge& e = graph_.factor(fid).edges[edge];
      boxes.emplace_back(&*e.to_node, &*e.to_factor);
    }
    node_boxes_.push_back(std::move(boxes));
  }
  record_.rows.push_back({0, graph_.energy(), 0.0, 0.0});
}

void GbpSolver::factor_phase(const std::vector<char>& active) {
  const std::size_t n = factors_.size();
  std::vector<FactorUpdateStats> stats(n);
  std::vector<char> failed(n, 0);
  parallel_for(n, config_.workers, [&](std::size_t i) {
    if (!active[i]) return;
    Factor& f = *factors_[i];
    FactorLinearization lin;
    try {
      lin = linearize_factor(f, graph_.neighbor_values(f));
    } catch (const CheiralityViolation&) {
      failed[i] = 1;
      return;
    }
    std::vector<MessageTriplet> incoming;
    incoming.reserve(lin.edges.size());
    std::vector<MessageTriplet> previous;
    previous.reserve(lin.edges.size());
    for (std::size_t e : lin.edges) {
      incoming.push_back(f.edges[e].to_factor->front);
      previous.push_back(f.edges[e].to_node->front);
    }
    std::vector<MessageTriplet> out = factor_update(lin, incoming, config_.factor_step, &stats[i], previous);
    for (std::size_t k = 0; k < lin.edges.size(); ++k) f.edges[lin.edges[k]].to_node->write(std::move(out[k]));
  });
  for (std::size_t i = 0; i < n; ++i) {
    record_.jittered += stats[i].jittered;
    record_.vacuous += stats[i].vacuous;
    record_.factor_failures += failed[i];
    for (Edge& e : factors_[i]->edges) {
      if (e.to_node) e.to_node->publish();
    }
  }
}

void GbpSolver::node_phase(const std::vector<char>& active, double* max_delta) {
  const std::size_t n = nodes_.size();
  std::vector<double> deltas(n, 0.0);
  parallel_for(n, config_.workers, [&](std::size_t i) {
    if (!active[i]) return;
    Node& node = *nodes_[i];
    const auto& boxes = node_boxes_[i];
    std::vector<MessageTriplet> incoming;
    incoming.reserve(boxes.size());
    for (const auto& [to_node, to_factor] : boxes) incoming.push_back(to_node->front);
    NodeUpdateResult res = node_update(node.mean, incoming, config_.node_step);
    if (res.updated) {
      node.mean = res.mean;
      node.precision = res.precision;
      deltas[i] = res.delta;
    }
    for (std::size_t k = 0; k < boxes.size(); ++k) boxes[k].second->write(std::move(res.outgoing[k]));
  });
  for (std::size_t i = 0; i < n; ++i) {
    *max_delta = std::max(*max_delta, deltas[i]);
    for (const auto& [to_node, to_factor] : node_boxes_[i]) to_factor->publish();
  }
}

RunRow GbpSolver::iterate() {
  const auto start = std::chrono::steady_clock::now();
  ++iteration_;

  // Participation is drawn on the calling thread so results do not depend on workers.
  std::vector<char> factor_active(factor_ids_.size(), 1);
  std::vector<char> node_active(node_ids_.size(), 1);
  if (config_.schedule == Schedule::kDropout || config_.dropout_factors > 0.0 || config_.dropout_nodes > 0.0) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (auto& a : factor_active) a = unit(rng_) >= config_.dropout_factors ? 1 : 0;
    for (auto& a : node_active) a = unit(rng_) >= config_.dropout_nodes ? 1 : 0;
  }

  factor_phase(factor_active);
  double max_delta = 0.0;
  node_phase(node_active, &max_delta);

  std::vector<double> energies(factor_ids_.size(), 0.0);
  parallel_for(factor_ids_.size(), config_.workers,
               [&](std::size_t i) { energies[i] = graph_.factor_energy(factor_ids_[i]); });
  double energy = 0.0;
  for (double e : energies) energy += e;

  const auto stop = std::chrono::steady_clock::now();
  return {iteration_, energy, max_delta, std::chrono::duration<double, std::milli>(stop - start).count()};
}

RunRecord GbpSolver::solve() {
  while (record_.iterations() < config_.max_iterations) {
    RunRow row;
    try {
      row = iterate();
    } catch (const Error& e) {
      record_.failure = e.what();
      break;
    }
    const double previous = record_.rows.back().energy;
    record_.rows.push_back(row);
    if (relative_change(previous, row.energy) < config_.tolerance) {
      record_.converged = true;
      break;
    }
  }
  return record_;
}

}  // namespace ctgbp
