#pragma once

#include <string>

#include "ctgbp/manifold.hpp"

namespace ctgbp {

/// rho(s) and its first two derivatives with respect to s = |r|^2.
struct LossValue {
  double rho = 0.0;
  double d1 = 1.0;
  double d2 = 0.0;
};

/// Robust loss on the squared residual norm s.
///
/// Huber and Cauchy are constructed from a scale in residual units (delta, c);
/// internally the scale is kept squared, i.e. in the same units as s:
///   huber:  rho(s) = s                        for s <= delta^2
///           rho(s) = 2 delta sqrt(s) - delta^2 otherwise
///   cauchy: rho(s) = c^2 log(1 + s / c^2)
class LossFunction {
 public:
  enum class Kind { kTrivial, kHuber, kCauchy };

  LossFunction() = default;
  static LossFunction trivial() { return {}; }
  static LossFunction huber(double delta);
  static LossFunction cauchy(double c);
  /// "trivial", "huber:<delta>" or "cauchy:<c>". Throws ConfigError.
  static LossFunction parse(const std::string& text);

  Kind kind() const { return kind_; }
  /// Scale in residual units (delta or c); 0 for the trivial loss.
  double scale() const { return scale_; }
  std::string to_string() const;

  LossValue evaluate(double s) const;

 private:
  LossFunction(Kind kind, double scale) : kind_(kind), scale_(scale), scale_sq_(scale * scale) {}

  Kind kind_ = Kind::kTrivial;
  double scale_ = 0.0;
  double scale_sq_ = 0.0;
};

struct RobustResidual {
  VecX residual;
  MatX jacobian;
  LossValue loss;
};

/// Rescales a whitened residual and its Jacobian so that the Gauss-Newton
/// model of 0.5 * rho(|r|^2) has the right gradient, rho' J^T r.
///
/// Solves alpha^2 - 2 alpha - 2 (rho''/rho') s = 0 for the root alpha <= 1.
/// When the discriminant would drop below 1/4 (strongly redescending region)
/// it is clamped there, so 1 - alpha >= 1/2.
RobustResidual triggs_correct(const VecX& residual, const MatX& jacobian, const LossFunction& loss);

}  // namespace ctgbp
