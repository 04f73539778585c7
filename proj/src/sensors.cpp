#include "ctgbp/sensors.hpp"

#include <fmt/format.h>

#include "ctgbp/errors.hpp"

namespace ctgbp {
namespace {

std::vector<double> to_vector(const MatX& m) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      out.push_back(m(r, c));
    }
  }
  return out;
}

void expect_arity(const ResidualModel& model, std::span<const NodeValue> neighbors) {
  if (neighbors.size() != model.arity()) {
    throw GraphError(fmt::format("{} factor expects {} neighbors, got {}", model.name(), model.arity(),
                                 neighbors.size()));
  }
}

void expect_pose(const NodeValue& v, const std::string& what) {
  if (!std::holds_alternative<Pose>(v)) {
    throw GraphError(what + " must be a pose node");
  }
}

std::array<Pose, 4> window_poses(std::span<const NodeValue> neighbors) {
  return {std::get<Pose>(neighbors[0]), std::get<Pose>(neighbors[1]), std::get<Pose>(neighbors[2]),
          std::get<Pose>(neighbors[3])};
}

}  // namespace

ResidualEvaluation absolute_residual(const AbsoluteMeasurement& meas, const SegmentWindow& window,
                                     bool with_jacobians) {
  const RotationState rot = segment_rotation(window);
  const Pose body{rot.rotation, segment_translation(window, 0)};
  const Pose predicted = body * meas.extrinsic;

  ResidualEvaluation out;
  out.residual.resize(6);
  const Vec3 rot_error = quat_log(predicted.rotation * meas.measured.rotation.inverse());
  out.residual.head<3>() = rot_error;
  out.residual.tail<3>() = predicted.translation - meas.measured.translation;
  if (!with_jacobians) {
    return out;
  }

  const std::array<MatX, 4> pose_blocks = segment_jacobians(window, JacobianTarget::kPose, 0);
  const Mat3 log_jac = so3_left_jacobian_inverse(rot_error);
  const Mat3 lever = skew(body.rotation.rotate(meas.extrinsic.translation));
  out.jacobians.resize(4);
  for (int k = 0; k < 4; ++k) {
    const MatX& b = pose_blocks[k];
    MatX j(6, 6);
    j.topRows<3>() = log_jac * b.topRows<3>();
    j.bottomRows<3>() = b.bottomRows<3>() - lever * b.topRows<3>();
    out.jacobians[k] = std::move(j);
  }
  return out;
}

ResidualEvaluation reprojection_residual(const VisualMeasurement& meas, const SegmentWindow& window,
                                         const Vec3& landmark, const Pose& extrinsic, bool with_jacobians) {
  const RotationState rot = segment_rotation(window);
  const Mat3 r_wb = rot.rotation.matrix();
  const Vec3 t_wb = segment_translation(window, 0);
  const Mat3 r_sb = extrinsic.rotation.matrix();

  const Vec3 offset = landmark - t_wb;
  const Vec3 p_b = r_wb.transpose() * offset;
  const Vec3 p_s = r_sb * p_b + extrinsic.translation;
  if (!(p_s.z() > kMinDepth)) {
    throw CheiralityViolation(fmt::format("landmark {} at depth {} behind camera at t={}", meas.landmark, p_s.z(),
                                          meas.time));
  }

  ResidualEvaluation out;
  out.residual = meas.intrinsics.project(p_s) - meas.pixel;
  if (!with_jacobians) {
    return out;
  }

  const double inv_z = 1.0 / p_s.z();
  Eigen::Matrix<double, 2, 3> d_proj;
  d_proj << meas.intrinsics.fx * inv_z, 0.0, -meas.intrinsics.fx * p_s.x() * inv_z * inv_z,
            0.0, meas.intrinsics.fy * inv_z, -meas.intrinsics.fy * p_s.y() * inv_z * inv_z;

  const Mat3 r_sw = r_sb * r_wb.transpose();
  const Eigen::Matrix<double, 2, 3> d_rot = d_proj * r_sw * skew(offset);
  const Eigen::Matrix<double, 2, 3> d_trans = -d_proj * r_sw;

  const std::array<MatX, 4> pose_blocks = segment_jacobians(window, JacobianTarget::kPose, 0);
  out.jacobians.resize(6);
  for (int k = 0; k < 4; ++k) {
    const MatX& b = pose_blocks[k];
    out.jacobians[k] = d_rot * b.topRows<3>() + d_trans * b.bottomRows<3>();
  }
  out.jacobians[4] = d_proj * r_sw;
  MatX d_extrinsic(2, 6);
  d_extrinsic.leftCols<3>() = -d_proj * skew(r_sb * p_b);
  d_extrinsic.rightCols<3>() = d_proj;
  out.jacobians[5] = std::move(d_extrinsic);
  return out;
}

ResidualEvaluation prior_residual(const NodeValue& value, const NodeValue& mean) {
  ResidualEvaluation out;
  out.residual = boxminus(value, mean);
  const int n = tangent_dim(value);
  MatX j = MatX::Identity(n, n);
  if (!std::holds_alternative<VecX>(value)) {
    j.topLeftCorner<3, 3>() = so3_left_jacobian_inverse(out.residual.head<3>());
  }
  out.jacobians.push_back(std::move(j));
  return out;
}

void ResidualModel::check_neighbors(std::span<const NodeValue> neighbors) const {
  expect_arity(*this, neighbors);
}

// --- absolute ---------------------------------------------------------------

AbsolutePoseModel::AbsolutePoseModel(AbsoluteMeasurement meas, SplineSegmentRef segment)
    : meas_(std::move(meas)), segment_(std::move(segment)) {}

void AbsolutePoseModel::check_neighbors(std::span<const NodeValue> neighbors) const {
  expect_arity(*this, neighbors);
  for (const auto& n : neighbors) expect_pose(n, "absolute factor neighbor");
}

ResidualEvaluation AbsolutePoseModel::evaluate(std::span<const NodeValue> neighbors, bool with_jacobians) const {
  const std::array<Pose, 4> poses = window_poses(neighbors);
  const SegmentWindow w{std::span<const Pose, 4>(poses), &segment_.blending, segment_.u, segment_.knot_interval};
  return absolute_residual(meas_, w, with_jacobians);
}

nlohmann::json AbsolutePoseModel::payload() const {
  return {{"time", meas_.time},
          {"measured", to_json(meas_.measured)},
          {"extrinsic", to_json(meas_.extrinsic)},
          {"u", segment_.u},
          {"spline", to_string(segment_.blending.kind())}};
}

// --- reprojection -----------------------------------------------------------

ReprojectionModel::ReprojectionModel(VisualMeasurement meas, SplineSegmentRef segment)
    : meas_(std::move(meas)), segment_(std::move(segment)) {}

void ReprojectionModel::check_neighbors(std::span<const NodeValue> neighbors) const {
  expect_arity(*this, neighbors);
  for (int k = 0; k < 4; ++k) expect_pose(neighbors[k], "reprojection factor basis");
  const auto* l = std::get_if<VecX>(&neighbors[4]);
  if (l == nullptr || l->size() != 3) {
    throw GraphError("reprojection factor landmark must be a 3-vector node");
  }
  expect_pose(neighbors[5], "reprojection factor extrinsic");
}

ResidualEvaluation ReprojectionModel::evaluate(std::span<const NodeValue> neighbors, bool with_jacobians) const {
  const std::array<Pose, 4> poses = window_poses(neighbors);
  const SegmentWindow w{std::span<const Pose, 4>(poses), &segment_.blending, segment_.u, segment_.knot_interval};
  const Vec3 landmark = std::get<VecX>(neighbors[4]);
  return reprojection_residual(meas_, w, landmark, std::get<Pose>(neighbors[5]), with_jacobians);
}

nlohmann::json ReprojectionModel::payload() const {
  return {{"time", meas_.time},
          {"pixel", {meas_.pixel.x(), meas_.pixel.y()}},
          {"landmark", meas_.landmark},
          {"intrinsics", {meas_.intrinsics.fx, meas_.intrinsics.fy, meas_.intrinsics.cx, meas_.intrinsics.cy}},
          {"u", segment_.u},
          {"spline", to_string(segment_.blending.kind())}};
}

// --- prior ------------------------------------------------------------------

PriorModel::PriorModel(NodeValue mean) : mean_(std::move(mean)) {}

void PriorModel::check_neighbors(std::span<const NodeValue> neighbors) const {
  expect_arity(*this, neighbors);
  if (!same_kind(neighbors[0], mean_)) {
    throw GraphError("prior mean does not match the node kind");
  }
}

ResidualEvaluation PriorModel::evaluate(std::span<const NodeValue> neighbors, bool with_jacobians) const {
  ResidualEvaluation out = prior_residual(neighbors[0], mean_);
  if (!with_jacobians) out.jacobians.clear();
  return out;
}

nlohmann::json PriorModel::payload() const { return {{"mean", to_json(mean_)}}; }

// --- linear -----------------------------------------------------------------

LinearModel::LinearModel(std::vector<MatX> coefficients, VecX offset)
    : coefficients_(std::move(coefficients)), offset_(std::move(offset)) {
  for (const auto& a : coefficients_) {
    if (a.rows() != offset_.size()) {
      throw GraphError("linear factor coefficient rows must match the offset size");
    }
  }
}

void LinearModel::check_neighbors(std::span<const NodeValue> neighbors) const {
  expect_arity(*this, neighbors);
  for (std::size_t k = 0; k < neighbors.size(); ++k) {
    const auto* v = std::get_if<VecX>(&neighbors[k]);
    if (v == nullptr || v->size() != coefficients_[k].cols()) {
      throw GraphError("linear factor neighbor must be a vector of matching size");
    }
  }
}

ResidualEvaluation LinearModel::evaluate(std::span<const NodeValue> neighbors, bool with_jacobians) const {
  ResidualEvaluation out;
  out.residual = -offset_;
  for (std::size_t k = 0; k < neighbors.size(); ++k) {
    out.residual += coefficients_[k] * std::get<VecX>(neighbors[k]);
  }
  if (with_jacobians) {
    out.jacobians = coefficients_;
  }
  return out;
}

nlohmann::json LinearModel::payload() const {
  nlohmann::json coeffs = nlohmann::json::array();
  for (const auto& a : coefficients_) {
    coeffs.push_back({{"rows", a.rows()}, {"cols", a.cols()}, {"data", to_vector(a)}});
  }
  return {{"coefficients", coeffs}, {"offset", to_vector(offset_)}};
}

nlohmann::json to_json(const Pose& pose) {
  return {{"q", {pose.rotation.w(), pose.rotation.x(), pose.rotation.y(), pose.rotation.z()}},
          {"t", {pose.translation.x(), pose.translation.y(), pose.translation.z()}}};
}

nlohmann::json to_json(const NodeValue& value) {
  if (const auto* p = std::get_if<Pose>(&value)) {
    return {{"type", "pose"}, {"value", to_json(*p)}};
  }
  if (const auto* q = std::get_if<UnitQuaternion>(&value)) {
    return {{"type", "rotation"}, {"value", {q->w(), q->x(), q->y(), q->z()}}};
  }
  return {{"type", "vector"}, {"value", to_vector(std::get<VecX>(value))}};
}

}  // namespace ctgbp
