#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <string>

#include "ctgbp/errors.hpp"
#include "ctgbp/io.hpp"
#include "support.hpp"

using namespace ctgbp;
namespace fs = std::filesystem;

namespace {

/// Fresh directory removed at scope exit.
class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("ctgbp_io_" + std::to_string(test::rng()()));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

/// Translations are exact; quaternions are renormalized on read.
bool same_pose(const Pose& a, const Pose& b) {
  return (a.rotation.coeffs_wxyz() - b.rotation.coeffs_wxyz()).norm() < 1e-15 && a.translation == b.translation;
}

std::string config_error(const std::string& text) {
  try {
    parse_config(text, "cfg.json");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("doubles round trip through text", "[io]") {
  for (int i = 0; i < 1000; ++i) {
    const double v = test::uniform(-1e6, 1e6) * std::pow(10.0, test::uniform(-20, 20));
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(0.1) == "0.10000000000000001");
}

TEST_CASE("trajectory csv round trip", "[io]") {
  TempDir dir;
  ScenarioSpec spec;
  spec.duration = 1.0;
  spec.perturbation = 0.1;
  const Scenario s = simulate(spec);
  const fs::path file = dir.path() / "traj.csv";
  write_trajectory_csv(file, s.initial);
  CHECK(read_text(file).rfind(std::string(kCsvVersion) + "\n", 0) == 0);
  const SplineTrajectory back = read_trajectory_csv(file, SplineKind::kBSpline);
  REQUIRE(back.size() == s.initial.size());
  CHECK(back.start_time() == s.initial.start_time());
  CHECK(back.knot_interval() == Catch::Approx(s.initial.knot_interval()).epsilon(1e-12));
  for (std::size_t i = 0; i < back.size(); ++i) CHECK(same_pose(back.basis(i), s.initial.basis(i)));
}

TEST_CASE("measurement and landmark csv round trip", "[io]") {
  TempDir dir;
  ScenarioSpec spec;
  spec.setup = Setup::kLocalization;
  spec.duration = 1.0;
  spec.noise = 0.5;
  const Scenario s = simulate(spec);

  write_visual_csv(dir.path() / "visual.csv", s.measurements.visual);
  const auto visual = read_visual_csv(dir.path() / "visual.csv", spec.intrinsics, MatX::Identity(2, 2));
  REQUIRE(visual.size() == s.measurements.visual.size());
  for (std::size_t i = 0; i < visual.size(); ++i) {
    CHECK(visual[i].time == s.measurements.visual[i].time);
    CHECK(visual[i].landmark == s.measurements.visual[i].landmark);
    CHECK(visual[i].pixel == s.measurements.visual[i].pixel);
  }

  write_landmarks_csv(dir.path() / "landmarks.csv", s.truth.landmarks);
  const auto landmarks = read_landmarks_csv(dir.path() / "landmarks.csv");
  REQUIRE(landmarks.size() == s.truth.landmarks.size());
  for (std::size_t i = 0; i < landmarks.size(); ++i) CHECK(landmarks[i] == s.truth.landmarks[i]);

  spec.setup = Setup::kAbsolute;
  const Scenario a = simulate(spec);
  write_absolute_csv(dir.path() / "absolute.csv", a.measurements.absolute);
  const auto absolute = read_absolute_csv(dir.path() / "absolute.csv", 2.0 * MatX::Identity(6, 6));
  REQUIRE(absolute.size() == a.measurements.absolute.size());
  for (std::size_t i = 0; i < absolute.size(); ++i) {
    CHECK(absolute[i].time == a.measurements.absolute[i].time);
    CHECK(same_pose(absolute[i].measured, a.measurements.absolute[i].measured));
    CHECK(absolute[i].sqrt_information == 2.0 * MatX::Identity(6, 6));
  }
}

TEST_CASE("run record csv round trip", "[io]") {
  TempDir dir;
  RunRecord r;
  for (std::size_t k = 0; k < 5; ++k) r.rows.push_back({k, 1.0 / (1.0 + k), 0.1 * k, 3.25 * k});
  write_run_record_csv(dir.path() / "run.csv", r);
  const RunRecord back = read_run_record_csv(dir.path() / "run.csv");
  REQUIRE(back.rows.size() == 5);
  for (std::size_t k = 0; k < 5; ++k) {
    CHECK(back.rows[k].iter == k);
    CHECK(back.rows[k].energy == r.rows[k].energy);
    CHECK(back.rows[k].max_delta == r.rows[k].max_delta);
  }
}

TEST_CASE("malformed csv is reported with its line", "[io]") {
  TempDir dir;
  const fs::path file = dir.path() / "bad.csv";
  write_text(file, std::string(kCsvVersion) + "\nid,x,y,z\n0,1,2,3\n1,1,abc,3\n");
  CHECK_THROWS_WITH(read_landmarks_csv(file), Catch::Matchers::ContainsSubstring("bad.csv:4"));
  write_text(file, std::string(kCsvVersion) + "\nid,x,y,z\n0,1,2\n");
  CHECK_THROWS_WITH(read_landmarks_csv(file), Catch::Matchers::ContainsSubstring("expected 4 fields"));
  write_text(file, "a,b\n");
  CHECK_THROWS_AS(read_landmarks_csv(file), ConfigError);
  write_text(file, std::string(kCsvVersion) + "\nid,x,y,z\n1,1,2,3\n");
  CHECK_THROWS_AS(read_landmarks_csv(file), ConfigError);
  CHECK_THROWS_AS(read_landmarks_csv(dir.path() / "missing.csv"), ConfigError);
}

TEST_CASE("config parsing", "[io]") {
  const ExperimentConfig cfg = parse_config(R"({
    "scenario": {"setup": "localization", "spline": "zspline", "noise": 0.5, "seed": 4,
                 "landmark_range": [1.5, 5.0]},
    "solver": {"type": "nlls", "max_iters": 12, "damping": "none", "dropout_nodes": 0.2},
    "loss": "huber:1.5",
    "sweep": {"kind": "noise", "grid": [0.1, 1.0]}
  })");
  CHECK(cfg.scenario.setup == Setup::kLocalization);
  CHECK(cfg.scenario.spline == SplineKind::kZSpline);
  CHECK(cfg.scenario.noise == 0.5);
  CHECK(cfg.scenario.seed == 4);
  CHECK(cfg.scenario.landmark_range_min == 1.5);
  CHECK(cfg.solver == SolverKind::kNlls);
  CHECK(cfg.nlls.max_iterations == 12);
  CHECK(cfg.gbp.max_iterations == 12);
  CHECK(cfg.nlls.damping == Damping::kNone);
  CHECK(cfg.gbp.dropout_nodes == 0.2);
  CHECK(cfg.loss.kind() == LossFunction::Kind::kHuber);
  REQUIRE(cfg.sweep.has_value());
  CHECK(*cfg.sweep == SweepKind::kNoise);
  CHECK(cfg.grid == std::vector<double>{0.1, 1.0});

  const ExperimentConfig defaults = parse_config("{}");
  CHECK(defaults.scenario.duration == 10.0);
  CHECK(defaults.solver == SolverKind::kGbp);
  CHECK_FALSE(defaults.sweep.has_value());

  const ExperimentConfig again = parse_config(config_to_json(cfg).dump());
  CHECK(config_to_json(again) == config_to_json(cfg));
}

TEST_CASE("config diagnostics", "[io]") {
  CHECK_THAT(config_error("{\n  \"scenario\": {\n    \"nosie\": 1.0\n  }\n}"),
             Catch::Matchers::ContainsSubstring("cfg.json:3:5") &&
                 Catch::Matchers::ContainsSubstring("scenario.nosie"));
  CHECK_THAT(config_error(R"({"solver": {"max_iters": "many"}})"),
             Catch::Matchers::ContainsSubstring("solver.max_iters") && Catch::Matchers::ContainsSubstring("type"));
  CHECK_THAT(config_error("{\"scenario\": {\n"), Catch::Matchers::ContainsSubstring("invalid JSON"));
  CHECK_THAT(config_error(R"({"scenario": {"setup": "relative"}})"), Catch::Matchers::ContainsSubstring("setup"));
  CHECK_THAT(config_error(R"({"loss": "tukey"})"), Catch::Matchers::ContainsSubstring("loss"));
  CHECK_THAT(config_error(R"({"solver": {"node_step": 0}})"), Catch::Matchers::ContainsSubstring("node_step"));
  CHECK_THAT(config_error(R"({"scenario": {"noise": -1}})"), Catch::Matchers::ContainsSubstring("noise"));
  CHECK_THAT(config_error(R"({"extra": 1})"), Catch::Matchers::ContainsSubstring("extra"));
  CHECK_THAT(config_error("[]"), Catch::Matchers::ContainsSubstring("object"));
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("scenario save and load", "[io]") {
  TempDir dir;
  for (Setup setup : {Setup::kAbsolute, Setup::kLocalization}) {
    ExperimentConfig cfg;
    cfg.scenario.setup = setup;
    cfg.scenario.duration = 1.0;
    cfg.scenario.noise = setup == Setup::kAbsolute ? 1e-3 : 1.0;
    cfg.scenario.perturbation = 1e-2;
    const Scenario s = simulate(cfg.scenario);
    const fs::path where = dir.path() / to_string(setup);
    save_scenario(where, s, cfg);
    CHECK(fs::exists(where / "config.json"));
    ExperimentConfig loaded_cfg;
    const Scenario back = load_scenario(where, loaded_cfg);
    CHECK(config_to_json(loaded_cfg) == config_to_json(cfg));
    REQUIRE(back.initial.size() == s.initial.size());
    for (std::size_t i = 0; i < back.initial.size(); ++i) {
      CHECK(same_pose(back.initial.basis(i), s.initial.basis(i)));
      CHECK(same_pose(back.truth.trajectory.basis(i), s.truth.trajectory.basis(i)));
    }
    CHECK(back.measurements.absolute.size() == s.measurements.absolute.size());
    CHECK(back.measurements.visual.size() == s.measurements.visual.size());
    CHECK(back.truth.landmarks == s.truth.landmarks);

    // Solving the reloaded scenario gives the same energies.
    const Problem a = build_problem(s, LossFunction::trivial(), 1e-2);
    const Problem b = build_problem(back, LossFunction::trivial(), 1e-2);
    CHECK(a.graph.energy() == Catch::Approx(b.graph.energy()).epsilon(1e-12));
  }
}
