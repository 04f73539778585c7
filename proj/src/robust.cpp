#include "ctgbp/robust.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "ctgbp/errors.hpp"

namespace ctgbp {

LossFunction LossFunction::huber(double delta) {
  if (!(delta > 0.0) || !std::isfinite(delta)) {
    throw ConfigError("huber scale must be positive and finite");
  }
  return {Kind::kHuber, delta};
}

LossFunction LossFunction::cauchy(double c) {
  if (!(c > 0.0) || !std::isfinite(c)) {
    throw ConfigError("cauchy scale must be positive and finite");
  }
  return {Kind::kCauchy, c};
}

LossFunction LossFunction::parse(const std::string& text) {
  if (text == "trivial") {
    return trivial();
  }
  const auto colon = text.find(':');
  if (colon == std::string::npos) {
    throw ConfigError("unknown loss '" + text + "' (expected trivial, huber:<delta>, cauchy:<c>)");
  }
  const std::string name = text.substr(0, colon);
  double value = 0.0;
  try {
    std::size_t used = 0;
    value = std::stod(text.substr(colon + 1), &used);
    if (used != text.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ConfigError("loss '" + text + "' has a malformed scale");
  }
  if (name == "huber") return huber(value);
  if (name == "cauchy") return cauchy(value);
  throw ConfigError("unknown loss '" + name + "'");
}

std::string LossFunction::to_string() const {
  switch (kind_) {
    case Kind::kHuber:
      return fmt::format("huber:{}", scale_);
    case Kind::kCauchy:
      return fmt::format("cauchy:{}", scale_);
    case Kind::kTrivial:
      break;
  }
  return "trivial";
}

LossValue LossFunction::evaluate(double s) const {
  switch (kind_) {
    case Kind::kTrivial:
      return {s, 1.0, 0.0};
    case Kind::kHuber: {
      if (s <= scale_sq_) {
        return {s, 1.0, 0.0};
      }
      const double r = std::sqrt(s);
      return {2.0 * scale_ * r - scale_sq_, scale_ / r, -0.5 * scale_ / (s * r)};
    }
    case Kind::kCauchy: {
      const double inv = 1.0 / scale_sq_;
      const double sum = 1.0 + s * inv;
      return {scale_sq_ * std::log1p(s * inv), 1.0 / sum, -inv / (sum * sum)};
    }
  }
  return {s, 1.0, 0.0};
}

RobustResidual triggs_correct(const VecX& residual, const MatX& jacobian, const LossFunction& loss) {
  const double s = residual.squaredNorm();
  if (!std::isfinite(s)) {
    throw std::invalid_argument("triggs_correct: residual is not finite");
  }
  const LossValue value = loss.evaluate(s);
  const double sqrt_d1 = std::sqrt(value.d1);

  if (s == 0.0 || value.d2 >= 0.0) {
    return {sqrt_d1 * residual, sqrt_d1 * jacobian, value};
  }
  // alpha = 1 - sqrt(1 + 2 s rho''/rho'); rho'' < 0 keeps alpha in [0, 1).
  const double discriminant = std::max(1.0 + 2.0 * s * value.d2 / value.d1, 0.25);
  const double alpha = 1.0 - std::sqrt(discriminant);
  RobustResidual out;
  out.loss = value;
  out.residual = (sqrt_d1 / (1.0 - alpha)) * residual;
  const MatX projector = MatX::Identity(residual.size(), residual.size()) -
                         (alpha / s) * (residual * residual.transpose());
  out.jacobian = sqrt_d1 * projector * jacobian;
  return out;
}

}  // namespace ctgbp
