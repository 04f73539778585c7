#include "ctgbp/manifold.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ctgbp {
namespace {

Eigen::Quaterniond canonicalize(Eigen::Quaterniond q) {
  const double n = q.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    return Eigen::Quaterniond::Identity();
  }
  q.coeffs() /= n;
  bool flip = q.w() < 0.0;
  if (q.w() == 0.0) {
    const double first = q.x() != 0.0 ? q.x() : (q.y() != 0.0 ? q.y() : q.z());
    flip = first < 0.0;
  }
  if (flip) {
    q.coeffs() = -q.coeffs();
  }
  return q;
}

// Series coefficients of the SO(3) Jacobians, stable near zero.
//   a = (1 - cos t) / t^2,  b = (t - sin t) / t^3
void jacobian_coefficients(double theta, double& a, double& b) {
  if (theta < 1e-4) {
    const double t2 = theta * theta;
    a = 0.5 - t2 / 24.0;
    b = 1.0 / 6.0 - t2 / 120.0;
  } else {
    const double t2 = theta * theta;
    a = (1.0 - std::cos(theta)) / t2;
    b = (theta - std::sin(theta)) / (t2 * theta);
  }
}

// c = 1/t^2 - (1 + cos t) / (2 t sin t)
double inverse_coefficient(double theta) {
  if (theta < 1e-4) {
    return 1.0 / 12.0 + theta * theta / 720.0;
  }
  return 1.0 / (theta * theta) - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
}

}  // namespace

UnitQuaternion::UnitQuaternion(double w, double x, double y, double z)
    : q_(canonicalize(Eigen::Quaterniond(w, x, y, z))) {}

UnitQuaternion::UnitQuaternion(const Eigen::Quaterniond& q) : q_(canonicalize(q)) {}

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

UnitQuaternion quat_exp(const Vec3& omega) {
  const double theta = omega.norm();
  if (theta < kSmallAngle) {
    return {1.0, 0.5 * omega.x(), 0.5 * omega.y(), 0.5 * omega.z()};
  }
  const double s = std::sin(0.5 * theta) / theta;
  return {std::cos(0.5 * theta), s * omega.x(), s * omega.y(), s * omega.z()};
}

Vec3 quat_log(const UnitQuaternion& q) {
  const Vec3 v(q.x(), q.y(), q.z());
  const double n = v.norm();
  if (n < kSmallAngle) {
    return 2.0 / q.w() * v;
  }
  return 2.0 * std::atan2(n, q.w()) / n * v;
}

Mat3 so3_left_jacobian(const Vec3& phi) {
  double a = 0.0;
  double b = 0.0;
  jacobian_coefficients(phi.norm(), a, b);
  const Mat3 k = skew(phi);
  return Mat3::Identity() + a * k + b * k * k;
}

Mat3 so3_left_jacobian_inverse(const Vec3& phi) {
  const Mat3 k = skew(phi);
  return Mat3::Identity() - 0.5 * k + inverse_coefficient(phi.norm()) * k * k;
}

Mat3 so3_right_jacobian(const Vec3& phi) { return so3_left_jacobian(-phi); }

Mat3 so3_right_jacobian_inverse(const Vec3& phi) { return so3_left_jacobian_inverse(-phi); }

UnitQuaternion boxplus(const UnitQuaternion& q, const Vec3& delta) { return quat_exp(delta) * q; }

Vec3 boxminus(const UnitQuaternion& a, const UnitQuaternion& b) { return quat_log(a * b.inverse()); }

Pose boxplus(const Pose& x, const Vec6& tau) {
  return {boxplus(x.rotation, Vec3(tau.head<3>())), x.translation + tau.tail<3>()};
}

Vec6 boxminus(const Pose& a, const Pose& b) {
  Vec6 out;
  out.head<3>() = boxminus(a.rotation, b.rotation);
  out.tail<3>() = a.translation - b.translation;
  return out;
}

int tangent_dim(const NodeValue& x) {
  if (std::holds_alternative<Pose>(x)) return 6;
  if (std::holds_alternative<UnitQuaternion>(x)) return 3;
  return static_cast<int>(std::get<VecX>(x).size());
}

bool same_kind(const NodeValue& a, const NodeValue& b) {
  return a.index() == b.index() && tangent_dim(a) == tangent_dim(b);
}

NodeValue boxplus(const NodeValue& x, const VecX& tau) {
  if (tau.size() != tangent_dim(x)) {
    throw std::invalid_argument("boxplus: tangent dimension " + std::to_string(tau.size()) +
                                " does not match variable dimension " + std::to_string(tangent_dim(x)));
  }
  if (const auto* pose = std::get_if<Pose>(&x)) {
    return boxplus(*pose, Vec6(tau));
  }
  if (const auto* q = std::get_if<UnitQuaternion>(&x)) {
    return boxplus(*q, Vec3(tau));
  }
  return VecX(std::get<VecX>(x) + tau);
}

VecX boxminus(const NodeValue& a, const NodeValue& b) {
  if (!same_kind(a, b)) {
    throw std::invalid_argument("boxminus: operands are of different kinds");
  }
  if (const auto* pose = std::get_if<Pose>(&a)) {
    return boxminus(*pose, std::get<Pose>(b));
  }
  if (const auto* q = std::get_if<UnitQuaternion>(&a)) {
    return boxminus(*q, std::get<UnitQuaternion>(b));
  }
  return std::get<VecX>(a) - std::get<VecX>(b);
}

MatX dboxplus_dtau(const NodeValue& x, const VecX& tau) {
  const int n = tangent_dim(x);
  if (tau.size() != n) {
    throw std::invalid_argument("dboxplus_dtau: tangent dimension mismatch");
  }
  MatX jac = MatX::Identity(n, n);
  // exp(tau + d) q = exp(J_l(tau) d) exp(tau) q, so only the rotation block differs.
  if (std::holds_alternative<Pose>(x) || std::holds_alternative<UnitQuaternion>(x)) {
    jac.topLeftCorner<3, 3>() = so3_left_jacobian(tau.head<3>());
  }
  return jac;
}

}  // namespace ctgbp
