#include "ctgbp/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "ctgbp/errors.hpp"

namespace ctgbp {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string> kTrajectoryHeader = {"t", "qw", "qx", "qy", "qz", "tx", "ty", "tz"};
const std::vector<std::string> kVisualHeader = {"t", "landmark_id", "u", "v"};
const std::vector<std::string> kLandmarkHeader = {"id", "x", "y", "z"};
const std::vector<std::string> kRunHeader = {"iter", "energy", "max_delta", "wall_ms"};

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += ',';
    out += parts[i];
  }
  return out;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  return out;
}

struct CsvRows {
  std::vector<std::vector<double>> values;
  std::vector<std::size_t> lines;
};

CsvRows read_csv(const fs::path& path, const std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  CsvRows rows;
  std::string line;
  std::size_t number = 0;
  bool seen_header = false;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const std::vector<std::string> fields = split(line);
    if (!seen_header) {
      if (fields != header) {
        throw ConfigError(fmt::format("{}:{}: expected header '{}'", path.string(), number, join(header)));
      }
      seen_header = true;
      continue;
    }
    if (fields.size() != header.size()) {
      throw ConfigError(fmt::format("{}:{}: expected {} fields, got {}", path.string(), number, header.size(),
                                    fields.size()));
    }
    std::vector<double> v(fields.size());
    for (std::size_t i = 0; i < fields.size(); ++i) {
      char* end = nullptr;
      v[i] = std::strtod(fields[i].c_str(), &end);
      if (fields[i].empty() || end != fields[i].c_str() + fields[i].size()) {
        throw ConfigError(fmt::format("{}:{}: '{}' is not a number", path.string(), number, fields[i]));
      }
    }
    rows.values.push_back(std::move(v));
    rows.lines.push_back(number);
  }
  if (!seen_header) throw ConfigError(fmt::format("{}: missing header '{}'", path.string(), join(header)));
  return rows;
}

std::size_t as_index(double v, const fs::path& path, std::size_t line) {
  if (!(v >= 0.0) || std::floor(v) != v) {
    throw ConfigError(fmt::format("{}:{}: '{}' is not a valid id", path.string(), line, v));
  }
  return static_cast<std::size_t>(v);
}

std::string pose_fields(const Pose& p) {
  const auto& q = p.rotation;
  const auto& t = p.translation;
  return fmt::format("{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}", q.w(), q.x(), q.y(), q.z(), t.x(),
                     t.y(), t.z());
}

Pose pose_from(const std::vector<double>& v) {
  return {UnitQuaternion(v[1], v[2], v[3], v[4]), Vec3(v[5], v[6], v[7])};
}

// --- config parsing ----------------------------------------------------------

std::pair<std::size_t, std::size_t> line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1;
  std::size_t col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

/// Walks one JSON object, tracking which keys were consumed.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path, const std::string& text, const std::string& source)
      : obj_(obj), path_(std::move(path)), text_(text), source_(source) {
    if (!obj_.is_object()) fail(path_.empty() ? "config root" : path_, "must be an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    used_.insert(key);
    const auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      fail(key, fmt::format("has the wrong type ({})", it->type_name()));
    }
  }

  const json* child(const std::string& key) {
    used_.insert(key);
    const auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  std::string path_of(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    // Best effort location: the first occurrence of the quoted key.
    const std::string needle = "\"" + key.substr(key.rfind('.') == std::string::npos ? 0 : key.rfind('.') + 1) + "\"";
    const auto pos = text_.find(needle);
    if (pos != std::string::npos) {
      const auto [line, col] = line_col(text_, pos);
      throw ConfigError(fmt::format("{}:{}:{}: '{}' {}", source_, line, col, path_of(key), what));
    }
    throw ConfigError(fmt::format("{}: '{}' {}", source_, path_of(key), what));
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!used_.contains(it.key())) fail(it.key(), "is not a recognized key");
    }
  }

  template <typename Fn>
  void check(const std::string& key, Fn&& fn) const {
    try {
      fn();
    } catch (const ConfigError& e) {
      fail(key, e.what());
    }
  }

 private:
  const json& obj_;
  std::string path_;
  const std::string& text_;
  const std::string& source_;
  std::set<std::string> used_;
};

}  // namespace

std::string format_double(double v) { return fmt::format("{:.17g}", v); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out = open_out(path);
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_trajectory_csv(const fs::path& path, const SplineTrajectory& traj) {
  std::ofstream out = open_out(path);
  out << kCsvVersion << '\n' << join(kTrajectoryHeader) << '\n';
  for (std::size_t i = 0; i < traj.size(); ++i) {
    out << format_double(traj.basis_time(i)) << ',' << pose_fields(traj.basis(i)) << '\n';
  }
}

void write_absolute_csv(const fs::path& path, const std::vector<AbsoluteMeasurement>& meas) {
  std::ofstream out = open_out(path);
  out << kCsvVersion << '\n' << join(kTrajectoryHeader) << '\n';
  for (const auto& m : meas) out << format_double(m.time) << ',' << pose_fields(m.measured) << '\n';
}

void write_visual_csv(const fs::path& path, const std::vector<VisualMeasurement>& meas) {
  std::ofstream out = open_out(path);
  out << kCsvVersion << '\n' << join(kVisualHeader) << '\n';
  for (const auto& m : meas) {
    out << fmt::format("{:.17g},{},{:.17g},{:.17g}\n", m.time, m.landmark, m.pixel.x(), m.pixel.y());
  }
}

void write_landmarks_csv(const fs::path& path, const std::vector<Vec3>& landmarks) {
  std::ofstream out = open_out(path);
  out << kCsvVersion << '\n' << join(kLandmarkHeader) << '\n';
  for (std::size_t i = 0; i < landmarks.size(); ++i) {
    const Vec3& l = landmarks[i];
    out << fmt::format("{},{:.17g},{:.17g},{:.17g}\n", i, l.x(), l.y(), l.z());
  }
}

void write_run_record_csv(const fs::path& path, const RunRecord& record) {
  std::ofstream out = open_out(path);
  out << kCsvVersion << '\n' << join(kRunHeader) << '\n';
  for (const RunRow& r : record.rows) {
    out << fmt::format("{},{:.17g},{:.17g},{:.17g}\n", r.iter, r.energy, r.max_delta, r.wall_ms);
  }
}

void write_rmse_csv(const fs::path& path, const RmseResult& error) {
  std::ofstream out = open_out(path);
  out << kCsvVersion << "\nt,dr,dt\n";
  for (const ErrorSample& s : error.samples) {
    out << fmt::format("{:.17g},{:.17g},{:.17g}\n", s.t, s.rotation, s.translation);
  }
}

void write_sweep_csv(const fs::path& path, const std::vector<SweepRow>& rows) {
  std::ofstream out = open_out(path);
  out << kCsvVersion << "\nsweep,value,variant,rmse_r,rmse_t,iterations,iterations_to_convergence,final_energy,error\n";
  for (const SweepRow& r : rows) {
    std::string error = r.error;
    std::replace(error.begin(), error.end(), ',', ';');
    std::replace(error.begin(), error.end(), '\n', ' ');
    out << fmt::format("{},{:.17g},{},{:.17g},{:.17g},{},{},{:.17g},{}\n", to_string(r.kind), r.value, r.variant,
                       r.rotation_rmse, r.translation_rmse, r.iterations, r.iterations_to_convergence, r.final_energy,
                       error);
  }
}

SplineTrajectory read_trajectory_csv(const fs::path& path, SplineKind kind) {
  const CsvRows rows = read_csv(path, kTrajectoryHeader);
  if (rows.values.size() < 4) throw ConfigError(path.string() + ": a trajectory needs at least 4 bases");
  const double start = rows.values[0][0];
  const double dt = rows.values[1][0] - start;
  if (!(dt > 0.0)) throw ConfigError(path.string() + ": basis times must increase");
  std::vector<Pose> bases;
  for (std::size_t i = 0; i < rows.values.size(); ++i) {
    const double expected = start + dt * static_cast<double>(i);
    if (std::abs(rows.values[i][0] - expected) > 1e-9 * std::max(1.0, std::abs(expected))) {
      throw ConfigError(fmt::format("{}:{}: basis times must be uniformly spaced", path.string(), rows.lines[i]));
    }
    bases.push_back(pose_from(rows.values[i]));
  }
  return SplineTrajectory(start, dt, std::move(bases), kind);
}

std::vector<AbsoluteMeasurement> read_absolute_csv(const fs::path& path, const MatX& sqrt_information) {
  const CsvRows rows = read_csv(path, kTrajectoryHeader);
  std::vector<AbsoluteMeasurement> out;
  for (const auto& v : rows.values) {
    AbsoluteMeasurement m;
    m.time = v[0];
    m.measured = pose_from(v);
    m.sqrt_information = sqrt_information;
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<VisualMeasurement> read_visual_csv(const fs::path& path, const CameraIntrinsics& intrinsics,
                                               const MatX& sqrt_information) {
  const CsvRows rows = read_csv(path, kVisualHeader);
  std::vector<VisualMeasurement> out;
  for (std::size_t i = 0; i < rows.values.size(); ++i) {
    const auto& v = rows.values[i];
    VisualMeasurement m;
    m.time = v[0];
    m.landmark = as_index(v[1], path, rows.lines[i]);
    m.pixel = Vec2(v[2], v[3]);
    m.intrinsics = intrinsics;
    m.sqrt_information = sqrt_information;
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<Vec3> read_landmarks_csv(const fs::path& path) {
  const CsvRows rows = read_csv(path, kLandmarkHeader);
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < rows.values.size(); ++i) {
    const auto& v = rows.values[i];
    if (as_index(v[0], path, rows.lines[i]) != i) {
      throw ConfigError(fmt::format("{}:{}: landmark ids must be 0, 1, 2, ...", path.string(), rows.lines[i]));
    }
    out.emplace_back(v[1], v[2], v[3]);
  }
  return out;
}

RunRecord read_run_record_csv(const fs::path& path) {
  const CsvRows rows = read_csv(path, kRunHeader);
  RunRecord out;
  for (std::size_t i = 0; i < rows.values.size(); ++i) {
    const auto& v = rows.values[i];
    out.rows.push_back({as_index(v[0], path, rows.lines[i]), v[1], v[2], v[3]});
  }
  return out;
}

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_col(text, e.byte > 0 ? e.byte - 1 : 0);
    std::string what = e.what();
    const auto colon = what.rfind(": ");
    throw ConfigError(fmt::format("{}:{}:{}: invalid JSON: {}", source, line, col,
                                  colon == std::string::npos ? what : what.substr(colon + 2)));
  }

  ExperimentConfig cfg;
  ObjectReader top(root, "", text, source);

  if (const json* s = top.child("scenario")) {
    ObjectReader r(*s, "scenario", text, source);
    ScenarioSpec& sc = cfg.scenario;
    std::string setup = to_string(sc.setup);
    std::string spline = to_string(sc.spline);
    std::vector<double> range = {sc.landmark_range_min, sc.landmark_range_max};
    r.get("setup", setup);
    r.get("duration", sc.duration);
    r.get("knot_interval", sc.knot_interval);
    r.get("absolute_rate", sc.absolute_rate);
    r.get("image_rate", sc.image_rate);
    r.get("landmark_count", sc.landmark_count);
    r.get("landmark_range", range);
    r.get("perturbation", sc.perturbation);
    r.get("noise", sc.noise);
    r.get("landmark_prior_sigma", sc.landmark_prior_sigma);
    r.get("spline", spline);
    r.get("seed", sc.seed);
    if (const json* in = r.child("intrinsics")) {
      ObjectReader ir(*in, "scenario.intrinsics", text, source);
      ir.get("fx", sc.intrinsics.fx);
      ir.get("fy", sc.intrinsics.fy);
      ir.get("cx", sc.intrinsics.cx);
      ir.get("cy", sc.intrinsics.cy);
      ir.finish();
    }
    r.finish();
    r.check("setup", [&] { sc.setup = parse_setup(setup); });
    r.check("spline", [&] { sc.spline = parse_spline_kind(spline); });
    if (range.size() != 2) r.fail("landmark_range", "must be [min, max]");
    sc.landmark_range_min = range[0];
    sc.landmark_range_max = range[1];
  }

  if (const json* s = top.child("solver")) {
    ObjectReader r(*s, "solver", text, source);
    std::string type = to_string(cfg.solver);
    std::string damping = "lm";
    std::size_t max_iters = cfg.gbp.max_iterations;
    double tolerance = cfg.gbp.tolerance;
    r.get("type", type);
    r.get("max_iters", max_iters);
    r.get("tolerance", tolerance);
    r.get("node_step", cfg.gbp.node_step);
    r.get("factor_step", cfg.gbp.factor_step);
    r.get("dropout_nodes", cfg.gbp.dropout_nodes);
    r.get("dropout_factors", cfg.gbp.dropout_factors);
    r.get("workers", cfg.gbp.workers);
    r.get("seed", cfg.gbp.seed);
    r.get("damping", damping);
    r.get("initial_sigma", cfg.initial_sigma);
    r.get("report_tolerance", cfg.report_tolerance);
    r.finish();
    r.check("type", [&] { cfg.solver = parse_solver_kind(type); });
    if (damping == "lm") {
      cfg.nlls.damping = Damping::kLevenbergMarquardt;
    } else if (damping == "none") {
      cfg.nlls.damping = Damping::kNone;
    } else {
      r.fail("damping", "must be \"lm\" or \"none\"");
    }
    cfg.gbp.max_iterations = cfg.nlls.max_iterations = max_iters;
    cfg.gbp.tolerance = cfg.nlls.tolerance = tolerance;
  }
  if (cfg.gbp.dropout_nodes > 0.0 || cfg.gbp.dropout_factors > 0.0) cfg.gbp.schedule = Schedule::kDropout;

  if (const json* l = top.child("loss")) {
    if (!l->is_string()) top.fail("loss", "must be a string");
    top.check("loss", [&] { cfg.loss = LossFunction::parse(l->get<std::string>()); });
  }

  if (const json* s = top.child("sweep")) {
    ObjectReader r(*s, "sweep", text, source);
    std::string kind = "perturbation";
    r.get("kind", kind);
    r.get("grid", cfg.grid);
    r.finish();
    r.check("kind", [&] { cfg.sweep = parse_sweep_kind(kind); });
  }
  top.finish();

  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("{}: {}", source, e.what()));
  }
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) { return parse_config(read_text(path), path.string()); }

json config_to_json(const ExperimentConfig& cfg) {
  const ScenarioSpec& s = cfg.scenario;
  json out;
  out["scenario"] = {{"setup", to_string(s.setup)},
                     {"duration", s.duration},
                     {"knot_interval", s.knot_interval},
                     {"absolute_rate", s.absolute_rate},
                     {"image_rate", s.image_rate},
                     {"landmark_count", s.landmark_count},
                     {"landmark_range", {s.landmark_range_min, s.landmark_range_max}},
                     {"perturbation", s.perturbation},
                     {"noise", s.noise},
                     {"landmark_prior_sigma", s.landmark_prior_sigma},
                     {"spline", to_string(s.spline)},
                     {"seed", s.seed},
                     {"intrinsics",
                      {{"fx", s.intrinsics.fx}, {"fy", s.intrinsics.fy}, {"cx", s.intrinsics.cx}, {"cy", s.intrinsics.cy}}}};
  out["solver"] = {{"type", to_string(cfg.solver)},
                   {"max_iters", cfg.gbp.max_iterations},
                   {"tolerance", cfg.gbp.tolerance},
                   {"node_step", cfg.gbp.node_step},
                   {"factor_step", cfg.gbp.factor_step},
                   {"dropout_nodes", cfg.gbp.dropout_nodes},
                   {"dropout_factors", cfg.gbp.dropout_factors},
                   {"workers", cfg.gbp.workers},
                   {"seed", cfg.gbp.seed},
                   {"damping", cfg.nlls.damping == Damping::kNone ? "none" : "lm"},
                   {"initial_sigma", cfg.initial_sigma},
                   {"report_tolerance", cfg.report_tolerance}};
  out["loss"] = cfg.loss.to_string();
  if (cfg.sweep) out["sweep"] = {{"kind", to_string(*cfg.sweep)}, {"grid", cfg.grid}};
  return out;
}

void save_scenario(const fs::path& dir, const Scenario& scenario, const ExperimentConfig& config) {
  fs::create_directories(dir);
  ExperimentConfig stored = config;
  stored.scenario = scenario.spec;
  write_text(dir / "config.json", config_to_json(stored).dump(2) + "\n");
  write_trajectory_csv(dir / "ground_truth.csv", scenario.truth.trajectory);
  write_trajectory_csv(dir / "initial.csv", scenario.initial);
  if (scenario.spec.setup == Setup::kAbsolute) {
    write_absolute_csv(dir / "absolute.csv", scenario.measurements.absolute);
  } else {
    write_visual_csv(dir / "visual.csv", scenario.measurements.visual);
    write_landmarks_csv(dir / "landmarks.csv", scenario.truth.landmarks);
  }
}

Scenario load_scenario(const fs::path& dir, ExperimentConfig& config) {
  config = load_config(dir / "config.json");
  const ScenarioSpec& spec = config.scenario;
  Scenario s{spec, {read_trajectory_csv(dir / "ground_truth.csv", spec.spline), {}},
             read_trajectory_csv(dir / "initial.csv", spec.spline), {}};
  const double weight = spec.noise > 0.0 ? 1.0 / spec.noise : 1.0;
  if (spec.setup == Setup::kAbsolute) {
    s.measurements.absolute = read_absolute_csv(dir / "absolute.csv", weight * MatX::Identity(6, 6));
  } else {
    s.truth.landmarks = read_landmarks_csv(dir / "landmarks.csv");
    s.measurements.visual = read_visual_csv(dir / "visual.csv", spec.intrinsics, weight * MatX::Identity(2, 2));
  }
  return s;
}

}  // namespace ctgbp
