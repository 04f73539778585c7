#include "ctgbp/nlls.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>
#include <fmt/format.h>

#include "ctgbp/errors.hpp"

namespace ctgbp {
namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::vector<NodeValue> current_means(const FactorGraph& graph, const std::vector<NodeId>& vars) {
  std::vector<NodeValue> out;
  out.reserve(vars.size());
  for (NodeId id : vars) out.push_back(graph.node(id).mean);
  return out;
}

void restore(FactorGraph& graph, const std::vector<NodeId>& vars, const std::vector<NodeValue>& means) {
  for (std::size_t k = 0; k < vars.size(); ++k) graph.set_mean(vars[k], means[k]);
}

double apply_step(FactorGraph& graph, const NormalEquations& ne, const std::vector<NodeValue>& base,
                  const VecX& delta) {
  double max_delta = 0.0;
  for (std::size_t k = 0; k < ne.variables.size(); ++k) {
    const int o = ne.offset.at(ne.variables[k].value);
    const int d = tangent_dim(base[k]);
    const VecX step = delta.segment(o, d);
    max_delta = std::max(max_delta, step.norm());
    graph.set_mean(ne.variables[k], boxplus(base[k], step));
  }
  return max_delta;
}

/// Energy at the current means, or +inf when a residual cannot be evaluated.
double safe_energy(const FactorGraph& graph) {
  try {
    return graph.energy();
  } catch (const CheiralityViolation&) {
    return std::numeric_limits<double>::infinity();
  }
}

}  // namespace

MatX NormalEquations::dense_hessian() const {
  MatX h = MatX::Zero(dimension, dimension);
  for (const auto& [key, block] : blocks) {
    const int r = offset.at(variables[key.first].value);
    const int c = offset.at(variables[key.second].value);
    h.block(r, c, block.rows(), block.cols()) += block;
    if (key.first != key.second) h.block(c, r, block.cols(), block.rows()) += block.transpose();
  }
  return h;
}

NormalEquations build_normal_equations(const FactorGraph& graph) {
  NormalEquations ne;
  ne.variables = graph.variable_ids();
  std::map<std::size_t, std::size_t> index;
  for (std::size_t k = 0; k < ne.variables.size(); ++k) {
    const NodeId id = ne.variables[k];
    index[id.value] = k;
    ne.offset[id.value] = ne.dimension;
    ne.dimension += tangent_dim(graph.node(id).mean);
  }
  ne.gradient = VecX::Zero(ne.dimension);

  for (FactorId fid : graph.factor_ids()) {
    const Factor& f = graph.factor(fid);
    const FactorLinearization lin = linearize_factor(graph, fid);
    ne.energy += lin.energy;
    for (std::size_t a = 0; a < lin.edges.size(); ++a) {
      const std::size_t ia = index.at(f.edges[lin.edges[a]].node.value);
      const int oa = lin.offsets[a];
      const int da = lin.dims[a];
      ne.gradient.segment(ne.offset.at(ne.variables[ia].value), da) -= lin.eta.segment(oa, da);
      for (std::size_t b = 0; b < lin.edges.size(); ++b) {
        const std::size_t ib = index.at(f.edges[lin.edges[b]].node.value);
        if (ia > ib) continue;
        const MatX block = lin.lambda.block(oa, lin.offsets[b], da, lin.dims[b]);
        auto [it, inserted] = ne.blocks.try_emplace({ia, ib}, block);
        if (!inserted) it->second += block;
      }
    }
  }
  return ne;
}

RunRecord gauss_newton_solve(FactorGraph& graph, const NllsConfig& config) {
  RunRecord record;
  record.rows.push_back({0, safe_energy(graph), 0.0, 0.0});
  double lambda = config.initial_lambda;

  for (std::size_t iter = 1; iter <= config.max_iterations; ++iter) {
    const auto start = Clock::now();
    NormalEquations ne;
    try {
      ne = build_normal_equations(graph);
    } catch (const Error& e) {
      record.failure = e.what();
      return record;
    }
    const MatX h = ne.dense_hessian();
    const std::vector<NodeValue> base = current_means(graph, ne.variables);
    const double previous = record.rows.back().energy;

    double energy = previous;
    double max_delta = 0.0;
    if (config.damping == Damping::kNone) {
      Eigen::LLT<MatX> llt(h);
      if (llt.info() != Eigen::Success || llt.rcond() < 1e-14) {
        record.failure = "singular normal equations (no damping)";
        return record;
      }
      max_delta = apply_step(graph, ne, base, llt.solve(-ne.gradient));
      energy = safe_energy(graph);
    } else {
      bool accepted = false;
      for (std::size_t attempt = 0; attempt <= config.max_rejections && !accepted; ++attempt) {
        MatX damped = h;
        damped.diagonal() += lambda * h.diagonal().cwiseMax(1e-12);
        Eigen::LLT<MatX> llt(damped);
        if (llt.info() == Eigen::Success) {
          const double step = apply_step(graph, ne, base, llt.solve(-ne.gradient));
          const double trial = safe_energy(graph);
          if (trial <= previous) {
            accepted = true;
            energy = trial;
            max_delta = step;
            lambda = std::max(lambda / 10.0, 1e-15);
            break;
          }
          restore(graph, ne.variables, base);
        }
        lambda *= 10.0;
      }
      if (!accepted) {
        // No step reduces the energy: the current state is a local minimum.
        record.rows.push_back({iter, previous, 0.0, elapsed_ms(start)});
        record.converged = true;
        return record;
      }
    }
    record.rows.push_back({iter, energy, max_delta, elapsed_ms(start)});
    if (relative_change(previous, energy) < config.tolerance) {
      record.converged = true;
      break;
    }
  }
  return record;
}

}  // namespace ctgbp
