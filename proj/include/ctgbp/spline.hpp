#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ctgbp/manifold.hpp"

namespace ctgbp {

enum class SplineKind { kBSpline, kZSpline };

std::string to_string(SplineKind kind);
/// Accepts "bspline" and "zspline". Throws ConfigError otherwise.
SplineKind parse_spline_kind(const std::string& name);

/// Cumulative blending matrix of a uniform cubic spline.
///
/// Row j holds the polynomial coefficients of the cumulative weight
/// lambda_j(u) = C(j, :) * (1, u, u^2, u^3). Row 0 is the constant 1.
class BlendingMatrix {
 public:
  static BlendingMatrix bspline();
  /// Cumulative Catmull-Rom basis (interpolating).
  static BlendingMatrix zspline();
  static BlendingMatrix of(SplineKind kind);

  SplineKind kind() const { return kind_; }
  const Eigen::Matrix4d& coefficients() const { return coefficients_; }

  /// All four cumulative weights (lambda_0..lambda_3), d-th derivative with
  /// respect to time given the knot interval dt.
  Eigen::Vector4d weights(double u, int derivative, double dt) const;
  /// lambda_1..lambda_3, d-th derivative with respect to time.
  Vec3 lambdas(double u, int derivative, double dt) const;

 private:
  BlendingMatrix(SplineKind kind, const Eigen::Matrix4d& c) : kind_(kind), coefficients_(c) {}

  SplineKind kind_;
  Eigen::Matrix4d coefficients_;
};

/// One spline control point.
struct Basis {
  double time = 0.0;
  Pose pose;
};

struct MotionState {
  Pose pose;
  Vec3 angular_velocity = Vec3::Zero();      // body frame, rad/s
  Vec3 linear_velocity = Vec3::Zero();       // world frame, m/s
  Vec3 angular_acceleration = Vec3::Zero();  // body frame, rad/s^2
  Vec3 linear_acceleration = Vec3::Zero();   // world frame, m/s^2
};

struct SegmentLocation {
  std::size_t index = 0;  // first basis of the 4-basis window
  double u = 0.0;         // in [0, 1), measured between bases index+1 and index+2
};

/// The four bases contributing to one segment, plus where in the segment to evaluate.
struct SegmentWindow {
  std::span<const Pose, 4> bases;
  const BlendingMatrix* blending;
  double u;
  double dt;
};

enum class JacobianTarget { kPose, kTranslation, kRotation };

// Segment-level evaluators shared by trajectories and residual models.
Vec3 segment_translation(const SegmentWindow& w, int derivative);

struct RotationState {
  UnitQuaternion rotation;
  Vec3 angular_velocity = Vec3::Zero();
  Vec3 angular_acceleration = Vec3::Zero();
};
RotationState segment_rotation(const SegmentWindow& w);

/// Jacobians of the evaluated quantity with respect to left perturbations of
/// each basis, one block per basis with 6 columns ordered (rotation, translation).
///
/// kPose (derivative 0 only): 6 rows, rotation error in the world frame first.
/// kTranslation: 3 rows, d-th time derivative of the position.
/// kRotation: 3 rows; derivative 0 is the world-frame rotation error,
///            1 and 2 are body angular velocity and acceleration.
std::array<MatX, 4> segment_jacobians(const SegmentWindow& w, JacobianTarget which, int derivative);

/// Uniform cubic split trajectory (rotation and translation interpolated separately).
class SplineTrajectory {
 public:
  SplineTrajectory(double start_time, double knot_interval, std::vector<Pose> bases, SplineKind kind);

  double start_time() const { return start_time_; }
  double knot_interval() const { return knot_interval_; }
  SplineKind kind() const { return blending_.kind(); }
  const BlendingMatrix& blending() const { return blending_; }

  std::size_t size() const { return bases_.size(); }
  const Pose& basis(std::size_t i) const { return bases_.at(i); }
  void set_basis(std::size_t i, const Pose& pose) { bases_.at(i) = pose; }
  const std::vector<Pose>& bases() const { return bases_; }
  double basis_time(std::size_t i) const { return start_time_ + knot_interval_ * static_cast<double>(i); }
  std::vector<Basis> basis_list() const;

  /// Half-open valid query range [begin, end).
  double domain_begin() const;
  double domain_end() const;
  bool in_domain(double t) const;

  /// Throws OutOfDomain outside [domain_begin, domain_end).
  SegmentLocation locate(double t) const;
  SegmentWindow window(double t) const;

  Vec3 eval_translation(double t, int derivative = 0) const;
  UnitQuaternion eval_rotation(double t) const;
  Vec3 eval_angular_velocity(double t) const;
  Vec3 eval_angular_acceleration(double t) const;
  Pose eval_pose(double t) const;
  MotionState eval_motion(double t) const;

  std::array<MatX, 4> jacobian_wrt_bases(double t, JacobianTarget which, int derivative = 0) const;

 private:
  double start_time_;
  double knot_interval_;
  std::vector<Pose> bases_;
  BlendingMatrix blending_;
};

}  // namespace ctgbp
