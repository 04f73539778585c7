#pragma once

#include <cmath>
#include <functional>
#include <random>

#include "ctgbp/manifold.hpp"

namespace ctgbp::test {

inline std::mt19937_64& rng() {
  static std::mt19937_64 gen(12345);
  return gen;
}

inline double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng()); }

inline VecX random_vector(int n, double scale = 1.0) {
  VecX v(n);
  for (int i = 0; i < n; ++i) v[i] = uniform(-scale, scale);
  return v;
}

/// Rotation vector with norm below max_angle.
inline Vec3 random_rotation_vector(double max_angle) {
  Vec3 axis = random_vector(3).normalized();
  return axis * uniform(0.0, max_angle);
}

inline UnitQuaternion random_rotation(double max_angle = 3.0) { return quat_exp(random_rotation_vector(max_angle)); }

inline Pose random_pose(double max_angle = 3.0, double max_translation = 2.0) {
  return {random_rotation(max_angle), random_vector(3, max_translation)};
}

/// Central-difference Jacobian of f around x in the tangent space of x.
inline MatX numeric_jacobian(const std::function<VecX(const VecX&)>& f, int n, double h = 1e-6) {
  const VecX f0 = f(VecX::Zero(n));
  MatX j(f0.size(), n);
  for (int i = 0; i < n; ++i) {
    VecX d = VecX::Zero(n);
    d[i] = h;
    j.col(i) = (f(d) - f(-d)) / (2.0 * h);
  }
  return j;
}

/// |a - b| <= tol * max(1, |b|), entrywise in the max norm.
inline bool close_rel(const MatX& a, const MatX& b, double tol) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  return (a - b).cwiseAbs().maxCoeff() <= tol * scale;
}

}  // namespace ctgbp::test
