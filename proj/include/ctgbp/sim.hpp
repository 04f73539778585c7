#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ctgbp/sensors.hpp"
#include "ctgbp/spline.hpp"

namespace ctgbp {

enum class Setup { kAbsolute, kLocalization };

std::string to_string(Setup setup);
/// Accepts "absolute" and "localization". Throws ConfigError otherwise.
Setup parse_setup(const std::string& name);

struct ScenarioSpec {
  Setup setup = Setup::kAbsolute;
  double duration = 10.0;       // s
  double knot_interval = 0.1;   // s
  double absolute_rate = 40.0;  // Hz
  double image_rate = 20.0;     // Hz
  std::size_t landmark_count = 50;
  double landmark_range_min = 2.0;  // m
  double landmark_range_max = 6.0;  // m
  double perturbation = 1e-5;       // m / rad, uniform half-width
  double noise = 1e-5;              // m / rad (absolute) or px (localization), Gaussian sigma
  double landmark_prior_sigma = 1e-4;  // m, surveyed map
  SplineKind spline = SplineKind::kBSpline;
  CameraIntrinsics intrinsics;
  std::uint64_t seed = 0;

  /// Throws ConfigError on invalid values.
  void validate() const;
};

struct GroundTruth {
  SplineTrajectory trajectory;
  std::vector<Vec3> landmarks;
};

struct MeasurementSet {
  std::vector<AbsoluteMeasurement> absolute;
  std::vector<VisualMeasurement> visual;
};

/// Independent generator for one purpose (trajectory, perturbation, measurements).
enum class Stream : std::uint64_t { kTrajectory = 1, kPerturbation = 2, kMeasurements = 3 };
std::mt19937_64 make_rng(std::uint64_t seed, Stream stream);

/// Smooth Lissajous-style motion sampled into bases covering [0, duration]
/// plus one guard basis at each end. Localization scenarios also get
/// landmarks seen in at least 80% of the frames.
GroundTruth generate_trajectory(const ScenarioSpec& spec, std::mt19937_64& rng);

/// Every basis moved by a tangent vector with components uniform in [-level, level].
SplineTrajectory perturb_bases(const SplineTrajectory& traj, double level, std::mt19937_64& rng);

/// Gaussian noise with sigma = spec.noise; square-root information I / sigma
/// (identity for noise-free data).
MeasurementSet sample_measurements(const GroundTruth& truth, const ScenarioSpec& spec, std::mt19937_64& rng);

/// Frame timestamps of the localization setup.
std::vector<double> image_times(const ScenarioSpec& spec);
std::vector<double> absolute_times(const ScenarioSpec& spec);

/// Whether a world point is inside the simulated camera's view (90 degree
/// field of view, depth in [0.5, 20] m).
bool landmark_visible(const Pose& world_from_camera, const Vec3& landmark);

struct ErrorSample {
  double t = 0.0;
  double rotation = 0.0;     // rad
  double translation = 0.0;  // m
};

struct RmseResult {
  double rotation = 0.0;
  double translation = 0.0;
  std::vector<ErrorSample> samples;
};

/// Samples both trajectories at `rate` Hz over their common domain.
RmseResult rmse(const SplineTrajectory& estimate, const SplineTrajectory& truth, double rate = 100.0);

}  // namespace ctgbp
