#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

#include "ctgbp/errors.hpp"
#include "ctgbp/experiment.hpp"
#include "ctgbp/io.hpp"

namespace py = pybind11;
using namespace ctgbp;

namespace {

UnitQuaternion quaternion_from(const Eigen::Vector4d& wxyz) {
  return UnitQuaternion(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
}

py::dict sweep_row_dict(const SweepRow& r) {
  py::dict d;
  d["kind"] = to_string(r.kind);
  d["value"] = r.value;
  d["variant"] = r.variant;
  d["rotation_rmse"] = r.rotation_rmse;
  d["translation_rmse"] = r.translation_rmse;
  d["iterations"] = r.iterations;
  d["iterations_to_convergence"] = r.iterations_to_convergence;
  d["final_energy"] = r.final_energy;
  d["error"] = r.error;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Continuous-time Gaussian belief propagation on cubic splines";

  const auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", error.ptr());

  py::class_<Pose>(m, "Pose")
      .def(py::init([](const Eigen::Vector4d& wxyz, const Vec3& t) { return Pose{quaternion_from(wxyz), t}; }),
           py::arg("rotation_wxyz"), py::arg("translation"))
      .def_static("identity", &Pose::identity)
      .def_property_readonly("rotation_wxyz", [](const Pose& p) { return p.rotation.coeffs_wxyz(); })
      .def_property_readonly("rotation_matrix", [](const Pose& p) { return p.rotation.matrix(); })
      .def_property_readonly("translation", [](const Pose& p) { return p.translation; })
      .def("inverse", &Pose::inverse)
      .def("transform", &Pose::transform, py::arg("point"))
      .def("__mul__", [](const Pose& a, const Pose& b) { return a * b; })
      .def("__repr__", [](const Pose& p) {
        const auto q = p.rotation.coeffs_wxyz();
        return "Pose(q=[" + std::to_string(q[0]) + ", " + std::to_string(q[1]) + ", " + std::to_string(q[2]) + ", " +
               std::to_string(q[3]) + "], t=[" + std::to_string(p.translation.x()) + ", " +
               std::to_string(p.translation.y()) + ", " + std::to_string(p.translation.z()) + "])";
      });

  m.def("boxplus", [](const Pose& x, const Vec6& tau) { return boxplus(x, tau); }, py::arg("pose"), py::arg("tau"));
  m.def("boxminus", [](const Pose& a, const Pose& b) { return boxminus(a, b); }, py::arg("a"), py::arg("b"));
  m.def("quat_exp", [](const Vec3& w) { return quat_exp(w).coeffs_wxyz(); }, py::arg("omega"));
  m.def("quat_log", [](const Eigen::Vector4d& wxyz) { return quat_log(quaternion_from(wxyz)); }, py::arg("wxyz"));

  py::class_<SplineTrajectory>(m, "SplineTrajectory")
      .def(py::init([](double start, double dt, const std::vector<Pose>& bases, const std::string& kind) {
             return SplineTrajectory(start, dt, bases, parse_spline_kind(kind));
           }),
           py::arg("start_time"), py::arg("knot_interval"), py::arg("bases"), py::arg("kind") = "bspline")
      .def_property_readonly("start_time", &SplineTrajectory::start_time)
      .def_property_readonly("knot_interval", &SplineTrajectory::knot_interval)
      .def_property_readonly("kind", [](const SplineTrajectory& s) { return to_string(s.kind()); })
      .def_property_readonly("bases", &SplineTrajectory::bases)
      .def("__len__", &SplineTrajectory::size)
      .def("domain", [](const SplineTrajectory& s) { return std::make_pair(s.domain_begin(), s.domain_end()); })
      .def("eval_pose", &SplineTrajectory::eval_pose, py::arg("t"))
      .def("eval_translation", &SplineTrajectory::eval_translation, py::arg("t"), py::arg("derivative") = 0)
      .def("eval_angular_velocity", &SplineTrajectory::eval_angular_velocity, py::arg("t"));

  py::class_<Scenario>(m, "Scenario")
      .def_property_readonly("truth", [](const Scenario& s) { return s.truth.trajectory; })
      .def_property_readonly("initial", [](const Scenario& s) { return s.initial; })
      .def_property_readonly("landmarks", [](const Scenario& s) { return s.truth.landmarks; })
      .def_property_readonly("absolute_count", [](const Scenario& s) { return s.measurements.absolute.size(); })
      .def_property_readonly("visual_count", [](const Scenario& s) { return s.measurements.visual.size(); });

  py::class_<ExperimentConfig>(m, "ExperimentConfig")
      .def(py::init([](const std::string& json) { return parse_config(json, "<python>"); }), py::arg("json") = "{}")
      .def_static("load", [](const std::string& path) { return load_config(path); }, py::arg("path"))
      .def("to_json", [](const ExperimentConfig& c) { return config_to_json(c).dump(); });

  m.def("simulate", [](const ExperimentConfig& c) { return simulate(c.scenario); }, py::arg("config"));

  m.def(
      "run_experiment",
      [](const Scenario& scenario, const ExperimentConfig& config) {
        std::optional<ExperimentResult> run;
        {
          py::gil_scoped_release release;
          run.emplace(run_experiment(scenario, config));
        }
        const ExperimentResult& r = *run;
        std::vector<double> energies;
        for (const RunRow& row : r.record.rows) energies.push_back(row.energy);
        py::dict d;
        d["energies"] = energies;
        d["iterations"] = r.record.iterations();
        d["iterations_to_convergence"] = r.iterations_to_convergence;
        d["converged"] = r.record.converged;
        d["failure"] = r.record.failure;
        d["rotation_rmse"] = r.error.rotation;
        d["translation_rmse"] = r.error.translation;
        d["estimate"] = r.estimate;
        d["landmarks"] = r.landmarks;
        return d;
      },
      py::arg("scenario"), py::arg("config"));

  m.def(
      "run_sweep",
      [](const std::string& kind, const std::vector<double>& grid, const ExperimentConfig& config) {
        std::vector<SweepRow> rows;
        const SweepKind k = parse_sweep_kind(kind);
        {
          py::gil_scoped_release release;
          rows = run_sweep(k, grid, config);
        }
        py::list out;
        for (const SweepRow& r : rows) out.append(sweep_row_dict(r));
        return out;
      },
      py::arg("kind"), py::arg("grid"), py::arg("config"));

  m.def(
      "rmse",
      [](const SplineTrajectory& estimate, const SplineTrajectory& truth, double rate) {
        const RmseResult r = rmse(estimate, truth, rate);
        return std::make_pair(r.rotation, r.translation);
      },
      py::arg("estimate"), py::arg("truth"), py::arg("rate") = 100.0);
}
