#include "ctgbp/spline.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "ctgbp/errors.hpp"

namespace ctgbp {

std::string to_string(SplineKind kind) { return kind == SplineKind::kBSpline ? "bspline" : "zspline"; }

SplineKind parse_spline_kind(const std::string& name) {
  if (name == "bspline") return SplineKind::kBSpline;
  if (name == "zspline") return SplineKind::kZSpline;
  throw ConfigError("unknown spline kind '" + name + "' (expected bspline or zspline)");
}

BlendingMatrix BlendingMatrix::bspline() {
  Eigen::Matrix4d c;
  c << 6.0, 0.0, 0.0, 0.0,
       5.0, 3.0, -3.0, 1.0,
       1.0, 3.0, 3.0, -2.0,
       0.0, 0.0, 0.0, 1.0;
  return {SplineKind::kBSpline, c / 6.0};
}

BlendingMatrix BlendingMatrix::zspline() {
  // Catmull-Rom weights b0..b3, accumulated from the right: lambda_j = sum_{k>=j} b_k.
  Eigen::Matrix4d c;
  c << 2.0, 0.0, 0.0, 0.0,
       2.0, 1.0, -2.0, 1.0,
       0.0, 1.0, 3.0, -2.0,
       0.0, 0.0, -1.0, 1.0;
  return {SplineKind::kZSpline, c / 2.0};
}

BlendingMatrix BlendingMatrix::of(SplineKind kind) {
  return kind == SplineKind::kBSpline ? bspline() : zspline();
}

Eigen::Vector4d BlendingMatrix::weights(double u, int derivative, double dt) const {
  Eigen::Vector4d p;
  switch (derivative) {
    case 0:
      p << 1.0, u, u * u, u * u * u;
      break;
    case 1:
      p << 0.0, 1.0, 2.0 * u, 3.0 * u * u;
      p /= dt;
      break;
    case 2:
      p << 0.0, 0.0, 2.0, 6.0 * u;
      p /= dt * dt;
      break;
    default:
      throw std::invalid_argument("blending derivative order must be 0, 1 or 2");
  }
  return coefficients_ * p;
}

Vec3 BlendingMatrix::lambdas(double u, int derivative, double dt) const {
  return weights(u, derivative, dt).tail<3>();
}

namespace {

struct RotationTerms {
  std::array<Mat3, 4> basis;      // R_{i+k}
  std::array<Vec3, 4> increment;  // d_j = log(Q_{i+j-1}^-1 Q_{i+j}), j = 1..3
  std::array<Mat3, 4> step;       // A_j = exp(lambda_j d_j)
  std::array<Mat3, 4> prefix;     // P_j = R_i A_1 ... A_j
  Eigen::Vector4d l0, l1, l2;
  UnitQuaternion rotation;
};

RotationTerms rotation_terms(const SegmentWindow& w) {
  RotationTerms t;
  t.l0 = w.blending->weights(w.u, 0, w.dt);
  t.l1 = w.blending->weights(w.u, 1, w.dt);
  t.l2 = w.blending->weights(w.u, 2, w.dt);
  for (int k = 0; k < 4; ++k) {
    t.basis[k] = w.bases[k].rotation.matrix();
  }
  UnitQuaternion q = w.bases[0].rotation;
  t.prefix[0] = t.basis[0];
  t.increment[0].setZero();
  t.step[0].setIdentity();
  for (int j = 1; j <= 3; ++j) {
    t.increment[j] = quat_log(w.bases[j - 1].rotation.inverse() * w.bases[j].rotation);
    const UnitQuaternion a = quat_exp(t.l0[j] * t.increment[j]);
    t.step[j] = a.matrix();
    q = q * a;
    t.prefix[j] = t.prefix[j - 1] * t.step[j];
  }
  t.rotation = q;
  return t;
}

}  // namespace

Vec3 segment_translation(const SegmentWindow& w, int derivative) {
  const Eigen::Vector4d l = w.blending->weights(w.u, derivative, w.dt);
  Vec3 p = derivative == 0 ? Vec3(w.bases[0].translation) : Vec3::Zero();
  for (int j = 1; j <= 3; ++j) {
    p += l[j] * (w.bases[j].translation - w.bases[j - 1].translation);
  }
  return p;
}

RotationState segment_rotation(const SegmentWindow& w) {
  const RotationTerms t = rotation_terms(w);
  RotationState s;
  s.rotation = t.rotation;
  Vec3 omega = Vec3::Zero();
  Vec3 alpha = Vec3::Zero();
  for (int j = 1; j <= 3; ++j) {
    const Mat3 at = t.step[j].transpose();
    const Vec3 carried = at * omega;
    alpha = at * alpha - t.l1[j] * t.increment[j].cross(carried) + t.l2[j] * t.increment[j];
    omega = carried + t.l1[j] * t.increment[j];
  }
  s.angular_velocity = omega;
  s.angular_acceleration = alpha;
  return s;
}

std::array<MatX, 4> segment_jacobians(const SegmentWindow& w, JacobianTarget which, int derivative) {
  if (derivative < 0 || derivative > 2) {
    throw std::invalid_argument("jacobian derivative order must be 0, 1 or 2");
  }
  if (which == JacobianTarget::kPose && derivative != 0) {
    throw std::invalid_argument("pose jacobians are defined for derivative order 0 only");
  }
  std::array<MatX, 4> blocks;

  if (which == JacobianTarget::kTranslation) {
    const Eigen::Vector4d l = w.blending->weights(w.u, derivative, w.dt);
    for (int k = 0; k < 4; ++k) {
      const double weight = k < 3 ? l[k] - l[k + 1] : l[3];
      blocks[k] = MatX::Zero(3, 6);
      blocks[k].rightCols<3>() = weight * Mat3::Identity();
    }
    return blocks;
  }

  const RotationTerms t = rotation_terms(w);
  // Sensitivity of d_m to left perturbations: +G_m from basis m, -G_m from basis m-1.
  std::array<Mat3, 4> g;
  std::array<Mat3, 4> kj;  // lambda_j J_r(lambda_j d_j)
  for (int m = 1; m <= 3; ++m) {
    g[m] = so3_right_jacobian_inverse(t.increment[m]) * t.basis[m].transpose();
    kj[m] = t.l0[m] * so3_right_jacobian(t.l0[m] * t.increment[m]);
  }

  // d[m]: derivative of the evaluated rotation quantity w.r.t. d_m.
  std::array<Mat3, 4> d;
  for (auto& m : d) m.setZero();
  Mat3 direct = Mat3::Zero();  // direct dependence on basis 0 (rotation value only)

  if (derivative == 0) {
    direct.setIdentity();
    for (int m = 1; m <= 3; ++m) {
      d[m] = t.prefix[m] * kj[m];
    }
  } else {
    std::array<Mat3, 4> d_omega;
    std::array<Mat3, 4> d_alpha;
    for (int m = 0; m < 4; ++m) {
      d_omega[m].setZero();
      d_alpha[m].setZero();
    }
    Vec3 omega = Vec3::Zero();
    Vec3 alpha = Vec3::Zero();
    for (int j = 1; j <= 3; ++j) {
      const Mat3 at = t.step[j].transpose();
      const Vec3& dj = t.increment[j];
      const Mat3 dj_hat = skew(dj);
      const Vec3 carried = at * omega;
      const Vec3 carried_alpha = at * alpha;
      for (int m = 1; m < j; ++m) {
        const Mat3 dw = at * d_omega[m];
        d_alpha[m] = at * d_alpha[m] - t.l1[j] * dj_hat * dw;
        d_omega[m] = dw;
      }
      const Mat3 c_hat = skew(carried);
      d_omega[j] = c_hat * kj[j] + t.l1[j] * Mat3::Identity();
      d_alpha[j] = skew(carried_alpha) * kj[j] + t.l1[j] * c_hat - t.l1[j] * dj_hat * c_hat * kj[j] +
                   t.l2[j] * Mat3::Identity();
      alpha = carried_alpha - t.l1[j] * dj.cross(carried) + t.l2[j] * dj;
      omega = carried + t.l1[j] * dj;
    }
    d = derivative == 1 ? d_omega : d_alpha;
  }

  std::array<Mat3, 4> rot;
  for (int k = 0; k < 4; ++k) {
    rot[k] = k == 0 ? direct : Mat3(d[k] * g[k]);
    if (k < 3) {
      rot[k] -= d[k + 1] * g[k + 1];
    }
  }

  if (which == JacobianTarget::kRotation) {
    for (int k = 0; k < 4; ++k) {
      blocks[k] = MatX::Zero(3, 6);
      blocks[k].leftCols<3>() = rot[k];
    }
    return blocks;
  }

  const Eigen::Vector4d l = t.l0;
  for (int k = 0; k < 4; ++k) {
    const double weight = k < 3 ? l[k] - l[k + 1] : l[3];
    blocks[k] = MatX::Zero(6, 6);
    blocks[k].topLeftCorner<3, 3>() = rot[k];
    blocks[k].bottomRightCorner<3, 3>() = weight * Mat3::Identity();
  }
  return blocks;
}

SplineTrajectory::SplineTrajectory(double start_time, double knot_interval, std::vector<Pose> bases,
                                   SplineKind kind)
    : start_time_(start_time),
      knot_interval_(knot_interval),
      bases_(std::move(bases)),
      blending_(BlendingMatrix::of(kind)) {
  if (!(knot_interval_ > 0.0)) {
    throw std::invalid_argument("spline knot interval must be positive");
  }
  if (bases_.size() < 4) {
    throw std::invalid_argument("a cubic spline needs at least 4 bases");
  }
}

std::vector<Basis> SplineTrajectory::basis_list() const {
  std::vector<Basis> out;
  out.reserve(bases_.size());
  for (std::size_t i = 0; i < bases_.size(); ++i) {
    out.push_back({basis_time(i), bases_[i]});
  }
  return out;
}

double SplineTrajectory::domain_begin() const { return start_time_ + knot_interval_; }

double SplineTrajectory::domain_end() const {
  return start_time_ + knot_interval_ * static_cast<double>(bases_.size() - 2);
}

bool SplineTrajectory::in_domain(double t) const {
  try {
    (void)locate(t);
    return true;
  } catch (const OutOfDomain&) {
    return false;
  }
}

SegmentLocation SplineTrajectory::locate(double t) const {
  const double s = (t - start_time_) / knot_interval_;
  if (!std::isfinite(s)) {
    throw OutOfDomain("spline query time is not finite");
  }
  // Times within rounding of a knot belong to the segment starting there.
  const double nearest = std::round(s);
  double k = std::floor(s);
  double u = s - k;
  if (std::abs(s - nearest) < 1e-9) {
    k = nearest;
    u = 0.0;
  }
  const double index = k - 1.0;
  if (index < 0.0 || index > static_cast<double>(bases_.size()) - 4.0) {
    throw OutOfDomain(fmt::format("time {} outside spline domain [{}, {})", t, domain_begin(), domain_end()));
  }
  return {static_cast<std::size_t>(index), u};
}

SegmentWindow SplineTrajectory::window(double t) const {
  const SegmentLocation loc = locate(t);
  return {std::span<const Pose, 4>(bases_.data() + loc.index, 4), &blending_, loc.u, knot_interval_};
}

Vec3 SplineTrajectory::eval_translation(double t, int derivative) const {
  return segment_translation(window(t), derivative);
}

UnitQuaternion SplineTrajectory::eval_rotation(double t) const { return segment_rotation(window(t)).rotation; }

Vec3 SplineTrajectory::eval_angular_velocity(double t) const {
  return segment_rotation(window(t)).angular_velocity;
}

Vec3 SplineTrajectory::eval_angular_acceleration(double t) const {
  return segment_rotation(window(t)).angular_acceleration;
}

Pose SplineTrajectory::eval_pose(double t) const {
  const SegmentWindow w = window(t);
  return {segment_rotation(w).rotation, segment_translation(w, 0)};
}

MotionState SplineTrajectory::eval_motion(double t) const {
  const SegmentWindow w = window(t);
  const RotationState r = segment_rotation(w);
  MotionState m;
  m.pose = {r.rotation, segment_translation(w, 0)};
  m.angular_velocity = r.angular_velocity;
  m.angular_acceleration = r.angular_acceleration;
  m.linear_velocity = segment_translation(w, 1);
  m.linear_acceleration = segment_translation(w, 2);
  return m;
}

std::array<MatX, 4> SplineTrajectory::jacobian_wrt_bases(double t, JacobianTarget which, int derivative) const {
  return segment_jacobians(window(t), which, derivative);
}

}  // namespace ctgbp
