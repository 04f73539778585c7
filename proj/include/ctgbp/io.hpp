#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctgbp/experiment.hpp"

namespace ctgbp {

/// First line of every CSV file written by this library.
inline constexpr const char* kCsvVersion = "# ct-gbp v1";

/// Shortest text that round-trips the double exactly.
std::string format_double(double v);

// Writers. Doubles are written with 17 significant digits.
void write_trajectory_csv(const std::filesystem::path& path, const SplineTrajectory& traj);
void write_absolute_csv(const std::filesystem::path& path, const std::vector<AbsoluteMeasurement>& meas);
void write_visual_csv(const std::filesystem::path& path, const std::vector<VisualMeasurement>& meas);
void write_landmarks_csv(const std::filesystem::path& path, const std::vector<Vec3>& landmarks);
void write_run_record_csv(const std::filesystem::path& path, const RunRecord& record);
void write_rmse_csv(const std::filesystem::path& path, const RmseResult& error);
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);

// Readers. Malformed input raises ConfigError naming the file and line.
SplineTrajectory read_trajectory_csv(const std::filesystem::path& path, SplineKind kind);
/// Every measurement gets `sqrt_information` (6x6) and an identity extrinsic.
std::vector<AbsoluteMeasurement> read_absolute_csv(const std::filesystem::path& path, const MatX& sqrt_information);
std::vector<VisualMeasurement> read_visual_csv(const std::filesystem::path& path, const CameraIntrinsics& intrinsics,
                                               const MatX& sqrt_information);
std::vector<Vec3> read_landmarks_csv(const std::filesystem::path& path);
RunRecord read_run_record_csv(const std::filesystem::path& path);

/// Parses an experiment config; missing keys keep their defaults, unknown keys
/// are rejected. `source` names the input in diagnostics ("file:line:col").
ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const ExperimentConfig& config);

/// Writes config.json, ground_truth.csv, initial.csv, measurement and
/// landmark files into `dir`.
void save_scenario(const std::filesystem::path& dir, const Scenario& scenario, const ExperimentConfig& config);
/// Reads a directory written by save_scenario. The stored config is returned
/// through `config`.
Scenario load_scenario(const std::filesystem::path& dir, ExperimentConfig& config);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace ctgbp
