#include "msight/assignment.hpp"
#include "msight/error.hpp"
#include "msight/latency.hpp"
#include "msight/metrics.hpp"
#include "msight/pipeline.hpp"
#include "msight/v2x.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace msight;

namespace {

std::vector<CameraId> cameras_of(const std::vector<std::string>& names) {
  std::vector<CameraId> out;
  for (const auto& n : names) out.push_back(camera_from_string(n));
  return out;
}

// Runs scenario -> pipeline -> evaluation and returns the report JSON.
std::string run_scenario(const std::string& config_json, const std::vector<std::string>& cameras,
                         std::optional<std::uint64_t> seed) {
  ScenarioConfig c = scenario_config_from_json(config_json);
  if (seed) c.seed = *seed;
  PipelineOptions opt;
  opt.cameras = cameras_of(cameras);
  py::gil_scoped_release release;
  return report_to_json(run_pipeline(generate_scenario(c), standard_calibrations(), opt).report);
}

std::string evaluate_ndjson(const std::string& truth, const std::string& tracks) {
  const LocalFrame frame(kDefaultSceneOrigin);
  std::istringstream t(truth), k(tracks);
  const auto gt = read_truth_ndjson(t, frame);
  const auto out = read_outputs_ndjson(k, frame);
  return report_to_json(evaluate(gt, out));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of the msight toolkit";

  // args = (code name, message); kept alive for the interpreter lifetime.
  static py::handle error = py::exception<Error>(m, "MSightError", PyExc_RuntimeError).release();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object inst = py::reinterpret_borrow<py::object>(error)(std::string(to_string(e.code())), e.what());
      PyErr_SetObject(error.ptr(), inst.ptr());
    }
  });

  // metrics
  m.def("mota", &mota, py::arg("fn"), py::arg("fp"), py::arg("id_switches"), py::arg("gt_dets"));
  m.def("fp_rate", &fp_rate_pct, py::arg("fp"), py::arg("dets"), "Percent.");
  m.def("fn_rate", &fn_rate_pct, py::arg("fn"), py::arg("gt_dets"), "Percent.");
  m.def(
      "count_id_switches",
      [](const std::vector<std::optional<std::uint64_t>>& ids) { return count_id_switches(ids); },
      py::arg("ids"), "ids: per expected timestamp, None where the object was missed.");
  m.def(
      "longest_track",
      [](const std::vector<std::optional<std::uint64_t>>& ids) { return longest_track_pct(ids); }, py::arg("ids"),
      "Percent of the trip covered by the longest same-id stretch.");
  m.def("percentile", [](const std::vector<double>& v, double q) { return percentile(v, q); }, py::arg("values"),
        py::arg("q"));

  m.def(
      "hungarian",
      [](const Eigen::MatrixXd& cost) {
        const Assignment a = hungarian(cost);
        return py::make_tuple(a.matches, a.unmatched_rows, a.unmatched_cols);
      },
      py::arg("cost"), "Returns (matches, unmatched_rows, unmatched_cols).");

  // v2x codec
  py::class_<WorldPoint>(m, "WorldPoint")
      .def(py::init<>())
      .def(py::init([](double lat, double lon) { return WorldPoint{lat, lon}; }), py::arg("lat"), py::arg("lon"))
      .def_readwrite("lat", &WorldPoint::lat)
      .def_readwrite("lon", &WorldPoint::lon)
      .def("__repr__", [](const WorldPoint& p) {
        std::ostringstream ss;
        ss.precision(10);
        ss << "WorldPoint(" << p.lat << ", " << p.lon << ")";
        return ss.str();
      });

  py::class_<VehicleRecord>(m, "VehicleRecord")
      .def(py::init<>())
      .def_readwrite("id", &VehicleRecord::id)
      .def_property(
          "cls", [](const VehicleRecord& v) { return std::string(to_string(v.cls)); },
          [](VehicleRecord& v, const std::string& s) { v.cls = class_from_string(s); })
      .def_readwrite("position", &VehicleRecord::position)
      .def_readwrite("heading_deg", &VehicleRecord::heading_deg)
      .def_readwrite("speed_mps", &VehicleRecord::speed_mps)
      .def_readwrite("predicted", &VehicleRecord::predicted);

  py::class_<PerceptionMessage>(m, "PerceptionMessage")
      .def(py::init<>())
      .def_readwrite("seq", &PerceptionMessage::seq)
      .def_readwrite("producer_ts_ms", &PerceptionMessage::producer_ts_ms)
      .def_readwrite("frame_ts_ms", &PerceptionMessage::frame_ts_ms)
      .def_readwrite("pred_k", &PerceptionMessage::pred_k)
      .def_readwrite("vehicles", &PerceptionMessage::vehicles);

  m.def("encode", [](const PerceptionMessage& msg) { return py::bytes(encode(msg)); }, py::arg("message"));
  m.def("decode", [](const py::bytes& b) { return decode(std::string(b)); }, py::arg("data"));
  m.def("encoded_size", &encoded_size, py::arg("vehicles"), py::arg("pred_k"));

  // simulation and evaluation
  m.def("run_scenario", &run_scenario, py::arg("config_json") = "{}",
        py::arg("cameras") = std::vector<std::string>{"NE", "NW", "SE", "SW"}, py::arg("seed") = py::none());
  m.def("evaluate_ndjson", &evaluate_ndjson, py::arg("truth"), py::arg("tracks"));
  m.def(
      "truth_ndjson",
      [](const std::string& config_json) {
        const Scenario s = generate_scenario(scenario_config_from_json(config_json));
        return truth_to_ndjson(s, LocalFrame(kDefaultSceneOrigin));
      },
      py::arg("config_json") = "{}");
  m.def(
      "tracks_ndjson",
      [](const std::string& config_json, const std::vector<std::string>& cameras) {
        const Scenario s = generate_scenario(scenario_config_from_json(config_json));
        PipelineOptions opt;
        opt.cameras = cameras_of(cameras);
        return tracks_to_ndjson(run_pipeline(s, standard_calibrations(), opt), LocalFrame(kDefaultSceneOrigin));
      },
      py::arg("config_json") = "{}", py::arg("cameras") = std::vector<std::string>{"NE", "NW", "SE", "SW"});
}
