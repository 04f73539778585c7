#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctgbp/manifold.hpp"
#include "ctgbp/spline.hpp"

namespace ctgbp {

/// Minimum depth (m) a landmark must have in the camera frame.
inline constexpr double kMinDepth = 1e-6;

struct CameraIntrinsics {
  double fx = 400.0;
  double fy = 400.0;
  double cx = 400.0;
  double cy = 400.0;

  Vec2 project(const Vec3& p) const { return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy}; }
};

/// Pose observation of the sensor frame, T_ws = T_wb(t) T_bs.
struct AbsoluteMeasurement {
  double time = 0.0;
  Pose measured;
  Pose extrinsic;  // T_bs
  MatX sqrt_information = MatX::Identity(6, 6);
};

/// Pixel observation of a landmark, p = pi(T_sb T_bw(t) l_w).
struct VisualMeasurement {
  double time = 0.0;
  Vec2 pixel = Vec2::Zero();
  std::size_t landmark = 0;
  Pose extrinsic;  // T_sb
  CameraIntrinsics intrinsics;
  MatX sqrt_information = MatX::Identity(2, 2);
};

/// Raw (unweighted) residual and one Jacobian block per neighbor.
struct ResidualEvaluation {
  VecX residual;
  std::vector<MatX> jacobians;
};

/// Residual [log(Q_hat Q^-1); t_hat - t] of an absolute pose measurement.
/// Jacobian blocks are 6x6, one per window basis.
ResidualEvaluation absolute_residual(const AbsoluteMeasurement& meas, const SegmentWindow& window,
                                     bool with_jacobians = true);

/// Pinhole reprojection residual p_hat - p. Blocks: 4 bases (2x6), landmark (2x3),
/// extrinsic (2x6). Throws CheiralityViolation when depth <= kMinDepth.
ResidualEvaluation reprojection_residual(const VisualMeasurement& meas, const SegmentWindow& window,
                                         const Vec3& landmark, const Pose& extrinsic,
                                         bool with_jacobians = true);

/// value boxminus mean, with its Jacobian with respect to value.
ResidualEvaluation prior_residual(const NodeValue& value, const NodeValue& mean);

/// A residual function over a factor's ordered neighbor values.
class ResidualModel {
 public:
  virtual ~ResidualModel() = default;

  virtual std::string name() const = 0;
  virtual int dimension() const = 0;
  /// Number of neighbors the model expects, in order.
  virtual std::size_t arity() const = 0;
  /// Throws GraphError when a neighbor has the wrong kind.
  virtual void check_neighbors(std::span<const NodeValue> neighbors) const;
  virtual ResidualEvaluation evaluate(std::span<const NodeValue> neighbors, bool with_jacobians) const = 0;
  virtual nlohmann::json payload() const = 0;
};

/// Spline segment geometry shared by spline-based factors.
struct SplineSegmentRef {
  BlendingMatrix blending = BlendingMatrix::bspline();
  double u = 0.0;
  double knot_interval = 0.1;
};

/// Neighbors: the 4 window bases (poses).
class AbsolutePoseModel final : public ResidualModel {
 public:
  AbsolutePoseModel(AbsoluteMeasurement meas, SplineSegmentRef segment);

  std::string name() const override { return "absolute"; }
  int dimension() const override { return 6; }
  std::size_t arity() const override { return 4; }
  void check_neighbors(std::span<const NodeValue> neighbors) const override;
  ResidualEvaluation evaluate(std::span<const NodeValue> neighbors, bool with_jacobians) const override;
  nlohmann::json payload() const override;

  const AbsoluteMeasurement& measurement() const { return meas_; }

 private:
  AbsoluteMeasurement meas_;
  SplineSegmentRef segment_;
};

/// Neighbors: the 4 window bases, the landmark (3-vector), the extrinsic T_sb (pose).
class ReprojectionModel final : public ResidualModel {
 public:
  ReprojectionModel(VisualMeasurement meas, SplineSegmentRef segment);

  std::string name() const override { return "reprojection"; }
  int dimension() const override { return 2; }
  std::size_t arity() const override { return 6; }
  void check_neighbors(std::span<const NodeValue> neighbors) const override;
  ResidualEvaluation evaluate(std::span<const NodeValue> neighbors, bool with_jacobians) const override;
  nlohmann::json payload() const override;

 private:
  VisualMeasurement meas_;
  SplineSegmentRef segment_;
};

/// Unary prior: residual = value boxminus mean.
class PriorModel final : public ResidualModel {
 public:
  explicit PriorModel(NodeValue mean);

  std::string name() const override { return "prior"; }
  int dimension() const override { return tangent_dim(mean_); }
  std::size_t arity() const override { return 1; }
  void check_neighbors(std::span<const NodeValue> neighbors) const override;
  ResidualEvaluation evaluate(std::span<const NodeValue> neighbors, bool with_jacobians) const override;
  nlohmann::json payload() const override;

 private:
  NodeValue mean_;
};

/// Linear residual over vector nodes: r = sum_k A_k x_k - b.
class LinearModel final : public ResidualModel {
 public:
  LinearModel(std::vector<MatX> coefficients, VecX offset);

  std::string name() const override { return "linear"; }
  int dimension() const override { return static_cast<int>(offset_.size()); }
  std::size_t arity() const override { return coefficients_.size(); }
  void check_neighbors(std::span<const NodeValue> neighbors) const override;
  ResidualEvaluation evaluate(std::span<const NodeValue> neighbors, bool with_jacobians) const override;
  nlohmann::json payload() const override;

 private:
  std::vector<MatX> coefficients_;
  VecX offset_;
};

nlohmann::json to_json(const Pose& pose);
nlohmann::json to_json(const NodeValue& value);

}  // namespace ctgbp
