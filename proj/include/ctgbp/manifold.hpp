#pragma once

#include <variant>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace ctgbp {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using VecX = Eigen::VectorXd;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using MatX = Eigen::MatrixXd;

/// Threshold below which exp/log fall back to their Taylor expansions.
inline constexpr double kSmallAngle = 1e-8;

/// Unit quaternion, scalar-first, canonicalized to w >= 0.
///
/// When w == 0 the first nonzero vector component is made positive so that
/// q and -q always map to the same stored value.
class UnitQuaternion {
 public:
  UnitQuaternion() = default;
  UnitQuaternion(double w, double x, double y, double z);
  explicit UnitQuaternion(const Eigen::Quaterniond& q);

  static UnitQuaternion identity() { return {}; }

  double w() const { return q_.w(); }
  double x() const { return q_.x(); }
  double y() const { return q_.y(); }
  double z() const { return q_.z(); }
  Eigen::Vector4d coeffs_wxyz() const { return {q_.w(), q_.x(), q_.y(), q_.z()}; }

  const Eigen::Quaterniond& eigen() const { return q_; }
  Mat3 matrix() const { return q_.toRotationMatrix(); }

  UnitQuaternion inverse() const { return UnitQuaternion(q_.conjugate()); }
  UnitQuaternion operator*(const UnitQuaternion& rhs) const { return UnitQuaternion(q_ * rhs.q_); }
  Vec3 rotate(const Vec3& v) const { return q_ * v; }

 private:
  Eigen::Quaterniond q_{1.0, 0.0, 0.0, 0.0};
};

/// Rigid transform in split form: rotation and translation handled separately.
struct Pose {
  UnitQuaternion rotation;
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  Pose operator*(const Pose& rhs) const {
    return {rotation * rhs.rotation, translation + rotation.rotate(rhs.translation)};
  }
  Pose inverse() const {
    const UnitQuaternion inv = rotation.inverse();
    return {inv, -inv.rotate(translation)};
  }
  Vec3 transform(const Vec3& p) const { return rotation.rotate(p) + translation; }
};

Mat3 skew(const Vec3& v);

UnitQuaternion quat_exp(const Vec3& omega);
Vec3 quat_log(const UnitQuaternion& q);

/// SO(3) left Jacobian: exp(phi + d) ~= exp(J_l(phi) d) exp(phi).
Mat3 so3_left_jacobian(const Vec3& phi);
Mat3 so3_left_jacobian_inverse(const Vec3& phi);
/// SO(3) right Jacobian: exp(phi + d) ~= exp(phi) exp(J_r(phi) d).
Mat3 so3_right_jacobian(const Vec3& phi);
Mat3 so3_right_jacobian_inverse(const Vec3& phi);

// Typed retraction. Rotations are perturbed on the left (world frame):
// boxplus(q, d) = exp(d) * q.
UnitQuaternion boxplus(const UnitQuaternion& q, const Vec3& delta);
Vec3 boxminus(const UnitQuaternion& a, const UnitQuaternion& b);
Pose boxplus(const Pose& x, const Vec6& tau);
Vec6 boxminus(const Pose& a, const Pose& b);

/// Value of any graph node: a pose, a pure rotation, or a Euclidean vector
/// (translation, landmark or generic state).
using NodeValue = std::variant<Pose, UnitQuaternion, VecX>;

int tangent_dim(const NodeValue& x);
bool same_kind(const NodeValue& a, const NodeValue& b);

/// Throws std::invalid_argument when tau does not match the tangent dimension.
NodeValue boxplus(const NodeValue& x, const VecX& tau);
/// Throws std::invalid_argument when a and b are of different kinds.
VecX boxminus(const NodeValue& a, const NodeValue& b);

/// d/dd [ boxplus(x, tau + d) boxminus boxplus(x, tau) ] at d = 0.
///
/// Maps a tangent increment at the base point to the tangent space at the
/// retracted point. Identity for vectors and for tau = 0.
MatX dboxplus_dtau(const NodeValue& x, const VecX& tau);

}  // namespace ctgbp
