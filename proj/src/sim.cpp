#include "ctgbp/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "ctgbp/errors.hpp"

namespace ctgbp {
namespace {

constexpr double kMinVisibleDepth = 0.5;
constexpr double kMaxVisibleDepth = 20.0;
constexpr double kMinVisibleFraction = 0.8;
constexpr int kMaxLandmarkAttempts = 100000;

struct Wave {
  double amplitude = 0.0;
  double frequency = 0.0;  // Hz
  double phase = 0.0;

  double operator()(double t) const { return amplitude * std::sin(2.0 * std::numbers::pi * frequency * t + phase); }
};

struct Motion {
  std::array<Wave, 3> position;
  std::array<Wave, 3> rotation;

  Pose operator()(double t) const {
    const Vec3 p(position[0](t), position[1](t), position[2](t));
    const Vec3 r(rotation[0](t), rotation[1](t), rotation[2](t));
    return {quat_exp(r), p};
  }
};

Motion random_motion(const ScenarioSpec& spec, std::mt19937_64& rng) {
  const bool localization = spec.setup == Setup::kLocalization;
  std::uniform_real_distribution<double> pos_amp(localization ? 0.2 : 0.6, localization ? 0.4 : 1.2);
  std::uniform_real_distribution<double> rot_amp(localization ? 0.05 : 0.3, localization ? 0.15 : 0.55);
  std::uniform_real_distribution<double> freq(0.05, 0.25);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  Motion m;
  for (auto& w : m.position) w = {pos_amp(rng), freq(rng), phase(rng)};
  for (auto& w : m.rotation) w = {rot_amp(rng), freq(rng), phase(rng)};
  return m;
}

std::vector<double> uniform_times(double duration, double rate) {
  const auto count = static_cast<std::size_t>(std::llround(std::floor(duration * rate + 1e-9)));
  std::vector<double> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double t = static_cast<double>(k) / rate;
    if (t < duration) out.push_back(t);
  }
  return out;
}

std::vector<Vec3> sample_landmarks(const ScenarioSpec& spec, const SplineTrajectory& traj, std::mt19937_64& rng) {
  const std::vector<double> frames = image_times(spec);
  std::vector<Pose> cameras;
  cameras.reserve(frames.size());
  for (double t : frames) cameras.push_back(traj.eval_pose(t));

  std::uniform_int_distribution<std::size_t> pick(0, frames.size() - 1);
  std::uniform_real_distribution<double> slope(-0.6, 0.6);
  std::uniform_real_distribution<double> range(spec.landmark_range_min, spec.landmark_range_max);
  std::vector<Vec3> out;
  for (int attempt = 0; attempt < kMaxLandmarkAttempts && out.size() < spec.landmark_count; ++attempt) {
    const Pose& cam = cameras[pick(rng)];
    const Vec3 dir = Vec3(slope(rng), slope(rng), 1.0).normalized();
    const Vec3 candidate = cam.transform(range(rng) * dir);
    const auto seen = std::count_if(cameras.begin(), cameras.end(),
                                    [&](const Pose& c) { return landmark_visible(c, candidate); });
    if (static_cast<double>(seen) >= kMinVisibleFraction * static_cast<double>(cameras.size())) {
      out.push_back(candidate);
    }
  }
  if (out.size() < spec.landmark_count) {
    throw ConfigError(fmt::format("could only place {} of {} landmarks visible in 80% of the frames", out.size(),
                                  spec.landmark_count));
  }
  return out;
}

}  // namespace

std::string to_string(Setup setup) { return setup == Setup::kAbsolute ? "absolute" : "localization"; }

Setup parse_setup(const std::string& name) {
  if (name == "absolute") return Setup::kAbsolute;
  if (name == "localization") return Setup::kLocalization;
  throw ConfigError("unknown setup '" + name + "' (expected absolute or localization)");
}

void ScenarioSpec::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(fmt::format("{} must be positive, got {}", name, v));
  };
  auto non_negative = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(fmt::format("{} must be non-negative, got {}", name, v));
  };
  positive(duration, "duration");
  positive(knot_interval, "knot_interval");
  positive(absolute_rate, "absolute_rate");
  positive(image_rate, "image_rate");
  positive(landmark_range_min, "landmark_range min");
  positive(landmark_range_max, "landmark_range max");
  positive(landmark_prior_sigma, "landmark_prior_sigma");
  non_negative(perturbation, "perturbation");
  non_negative(noise, "noise");
  positive(intrinsics.fx, "fx");
  positive(intrinsics.fy, "fy");
  if (landmark_range_min > landmark_range_max) throw ConfigError("landmark_range min exceeds max");
  if (duration < knot_interval) throw ConfigError("duration must span at least one knot interval");
  if (setup == Setup::kLocalization && landmark_count == 0) throw ConfigError("localization needs landmarks");
}

std::mt19937_64 make_rng(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

std::vector<double> image_times(const ScenarioSpec& spec) { return uniform_times(spec.duration, spec.image_rate); }

std::vector<double> absolute_times(const ScenarioSpec& spec) {
  return uniform_times(spec.duration, spec.absolute_rate);
}

bool landmark_visible(const Pose& world_from_camera, const Vec3& landmark) {
  const Vec3 p = world_from_camera.inverse().transform(landmark);
  if (p.z() < kMinVisibleDepth || p.z() > kMaxVisibleDepth) return false;
  return std::abs(p.x()) <= p.z() && std::abs(p.y()) <= p.z();
}

GroundTruth generate_trajectory(const ScenarioSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  const Motion motion = random_motion(spec, rng);
  const auto interior = static_cast<std::size_t>(std::llround(spec.duration / spec.knot_interval)) + 1;
  const double start = -spec.knot_interval;
  std::vector<Pose> bases;
  bases.reserve(interior + 2);
  for (std::size_t i = 0; i < interior + 2; ++i) {
    bases.push_back(motion(start + spec.knot_interval * static_cast<double>(i)));
  }
  GroundTruth gt{SplineTrajectory(start, spec.knot_interval, std::move(bases), spec.spline), {}};
  if (spec.setup == Setup::kLocalization) {
    gt.landmarks = sample_landmarks(spec, gt.trajectory, rng);
  }
  return gt;
}

SplineTrajectory perturb_bases(const SplineTrajectory& traj, double level, std::mt19937_64& rng) {
  SplineTrajectory out = traj;
  if (level == 0.0) return out;
  std::uniform_real_distribution<double> u(-level, level);
  for (std::size_t i = 0; i < out.size(); ++i) {
    Vec6 tau;
    for (int k = 0; k < 6; ++k) tau[k] = u(rng);
    out.set_basis(i, boxplus(out.basis(i), tau));
  }
  return out;
}

MeasurementSet sample_measurements(const GroundTruth& truth, const ScenarioSpec& spec, std::mt19937_64& rng) {
  MeasurementSet out;
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double sigma = spec.noise;
  const double weight = sigma > 0.0 ? 1.0 / sigma : 1.0;

  if (spec.setup == Setup::kAbsolute) {
    for (double t : absolute_times(spec)) {
      AbsoluteMeasurement m;
      m.time = t;
      const Pose clean = truth.trajectory.eval_pose(t) * m.extrinsic;
      Vec6 n;
      for (int k = 0; k < 6; ++k) n[k] = sigma * gauss(rng);
      m.measured = sigma > 0.0 ? boxplus(clean, n) : clean;
      m.sqrt_information = weight * MatX::Identity(6, 6);
      out.absolute.push_back(std::move(m));
    }
    return out;
  }

  for (double t : image_times(spec)) {
    const Pose camera = truth.trajectory.eval_pose(t);
    const Pose camera_from_world = camera.inverse();
    for (std::size_t j = 0; j < truth.landmarks.size(); ++j) {
      if (!landmark_visible(camera, truth.landmarks[j])) continue;
      VisualMeasurement m;
      m.time = t;
      m.landmark = j;
      m.intrinsics = spec.intrinsics;
      const Vec2 clean = spec.intrinsics.project(camera_from_world.transform(truth.landmarks[j]));
      const Vec2 n(sigma * gauss(rng), sigma * gauss(rng));
      m.pixel = sigma > 0.0 ? Vec2(clean + n) : clean;
      m.sqrt_information = weight * MatX::Identity(2, 2);
      out.visual.push_back(std::move(m));
    }
  }
  return out;
}

RmseResult rmse(const SplineTrajectory& estimate, const SplineTrajectory& truth, double rate) {
  RmseResult out;
  const double begin = std::max(estimate.domain_begin(), truth.domain_begin());
  const double end = std::min(estimate.domain_end(), truth.domain_end());
  double sum_r = 0.0;
  double sum_t = 0.0;
  for (std::size_t k = 0;; ++k) {
    const double t = begin + static_cast<double>(k) / rate;
    if (t >= end || !estimate.in_domain(t) || !truth.in_domain(t)) break;
    const Pose a = estimate.eval_pose(t);
    const Pose b = truth.eval_pose(t);
    ErrorSample s{t, quat_log(a.rotation * b.rotation.inverse()).norm(), (a.translation - b.translation).norm()};
    sum_r += s.rotation * s.rotation;
    sum_t += s.translation * s.translation;
    out.samples.push_back(s);
  }
  if (!out.samples.empty()) {
    const auto n = static_cast<double>(out.samples.size());
    out.rotation = std::sqrt(sum_r / n);
    out.translation = std::sqrt(sum_t / n);
  }
  return out;
}

}  // namespace ctgbp
