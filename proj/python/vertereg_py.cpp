#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

#include "vertereg/error.hpp"
#include "vertereg/eval.hpp"
#include "vertereg/geom.hpp"
#include "vertereg/io.hpp"
#include "vertereg/maskgen.hpp"
#include "vertereg/register.hpp"
#include "vertereg/sim.hpp"
#include "vertereg/stream.hpp"

namespace py = pybind11;
using namespace vertereg;

namespace {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Mask = py::array_t<bool, py::array::c_style | py::array::forcecast>;

PointList to_points(const Eigen::Ref<const Points>& m) {
  PointList out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = m.row(i).transpose();
  return out;
}

Points from_points(const PointList& p) {
  Points m(static_cast<Eigen::Index>(p.size()), 3);
  for (std::size_t i = 0; i < p.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = p[i].transpose();
  return m;
}

Quaternion to_quat(const Eigen::Vector4d& q) { return {q[0], q[1], q[2], q[3]}; }
Eigen::Vector4d from_quat(const Quaternion& q) { return {q.w, q.x, q.y, q.z}; }

BinaryMask to_mask(const Mask& a) {
  if (a.ndim() != 2) throw Error(Errc::dimension_mismatch, "mask must be 2-D");
  BinaryMask m(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  const bool* src = a.data();
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = src[i] ? 1 : 0;
  return m;
}

Mask from_mask(const BinaryMask& m) {
  Mask out({m.height, m.width});
  bool* dst = out.mutable_data();
  for (std::size_t i = 0; i < m.data.size(); ++i) dst[i] = m.data[i] != 0;
  return out;
}

py::dict metrics_dict(const RecordingMetrics& m) {
  py::dict d;
  d["tre"] = m.tre;
  d["vertebra_tre"] = std::vector<double>(m.vertebra_tre.begin(), m.vertebra_tre.end());
  d["success_rate"] = m.success_rate;
  d["median_trajectory_deg"] = m.median_trajectory_deg;
  d["median_entry_mm"] = m.median_entry_mm;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Vertebra registration and drill tracking";

  PYBIND11_CONSTINIT static py::gil_safe_call_once_and_store<py::object> error_type;
  error_type.call_once_and_store_result(
      [&]() { return py::object(py::exception<Error>(m, "Error", PyExc_ValueError)); });
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      const py::object& type = error_type.get_stored();
      py::object inst = type(e.what());
      inst.attr("code") = to_string(e.code());
      inst.attr("offset") = e.byte_offset() ? py::cast(*e.byte_offset()) : py::none();
      PyErr_SetObject(type.ptr(), inst.ptr());
    }
  });

  py::class_<RigidTransform>(m, "RigidTransform")
      .def(py::init([](const Eigen::Vector4d& q, const Eigen::Vector3d& t) { return RigidTransform{to_quat(q), t}; }),
           py::arg("rotation") = Eigen::Vector4d(1, 0, 0, 0), py::arg("translation") = Eigen::Vector3d::Zero())
      .def_property_readonly("rotation", [](const RigidTransform& t) { return from_quat(t.rotation); },
                             "Quaternion (w, x, y, z).")
      .def_property_readonly("translation", [](const RigidTransform& t) { return Eigen::Vector3d(t.translation); })
      .def("matrix", &RigidTransform::matrix)
      .def("inverse", [](const RigidTransform& t) { return invert(t); })
      .def("__matmul__", [](const RigidTransform& a, const RigidTransform& b) { return compose(a, b); })
      .def("apply", [](const RigidTransform& t, const Eigen::Ref<const Points>& p) {
        return from_points(transform_points(t, to_points(p)));
      })
      .def("__repr__", [](const RigidTransform& t) {
        return "RigidTransform(rotation=(" + format_double(t.rotation.w) + ", " + format_double(t.rotation.x) + ", " +
               format_double(t.rotation.y) + ", " + format_double(t.rotation.z) + "), translation=(" +
               format_double(t.translation.x()) + ", " + format_double(t.translation.y()) + ", " +
               format_double(t.translation.z()) + "))";
      });

  m.def(
      "umeyama",
      [](const Eigen::Ref<const Points>& src, const Eigen::Ref<const Points>& dst) {
        if (src.rows() != dst.rows()) throw Error(Errc::dimension_mismatch, "umeyama: point counts differ");
        const PointList a = to_points(src), b = to_points(dst);
        return umeyama(a, b);
      },
      py::arg("src"), py::arg("dst"), "Rigid transform minimizing |T src - dst|^2 over corresponded (N, 3) arrays.");

  m.def(
      "geodesic_angle",
      [](const Eigen::Vector4d& a, const Eigen::Vector4d& b) { return geodesic_angle(to_quat(a), to_quat(b)); },
      py::arg("q_t"), py::arg("q_p"));
  m.def(
      "z_rotation_quat", [](double alpha) { return from_quat(z_rotation_quat(alpha)); }, py::arg("alpha"));

  m.def(
      "total_loss",
      [](const std::vector<std::array<double, 3>>& batch) {
        std::vector<LossTerms> terms;
        for (const auto& t : batch) terms.push_back({t[0], t[1], t[2]});
        return total_loss(terms);
      },
      py::arg("batch"), "Mean dice plus mean (geodesic + norm penalty) over (dice, geodesic, norm) triples.");
  m.def(
      "dice_loss", [](const Mask& pred, const Mask& gt, double s) { return dice_loss(to_mask(pred), to_mask(gt), s); },
      py::arg("pred"), py::arg("gt"), py::arg("smoothing") = 1.0);
  m.def(
      "smooth_mask", [](const Mask& mask, int k) { return from_mask(smooth_mask(to_mask(mask), k)); }, py::arg("mask"),
      py::arg("k") = 15);

  m.def(
      "perforation",
      [](const Eigen::Ref<const Points>& points, const Eigen::Vector3d& entry, const Eigen::Vector3d& direction,
         double radius, double length, bool lateral_only) {
        ScrewPlan s;
        s.entry = entry;
        s.direction = direction;
        s.radius = radius;
        s.length = length;
        return perforation(to_points(points), s, PerforationOptions{lateral_only});
      },
      py::arg("points"), py::arg("entry"), py::arg("direction"), py::arg("radius") = 2.5, py::arg("length") = 45.0,
      py::arg("lateral_only") = false, "Deepest intrusion (mm) of points into the screw cylinder, or None.");

  m.def(
      "run_synthetic",
      [](std::uint64_t seed, int frames, double noise_mm, double prior_error_deg, double spacing_mm,
         const std::string& mode, double breathing_mm) {
        RecordingSpec spec;
        spec.frame_count = frames;
        spec.depth_noise_mm = noise_mm;
        spec.prior_error_deg = prior_error_deg;
        spec.markers = false;
        if (breathing_mm > 0.0) {
          Motion b;
          b.translation = Vec3(0.0, breathing_mm, 0.0);
          b.frequency_hz = 0.2;
          spec.motions.push_back(b);
        }
        const SimulatedRecording rec(make_scene(seed, 1.0, spacing_mm), spec, seed);
        PipelineOptions options;
        options.mode = parse_ablation_mode(mode);
        std::vector<FrameResult> est;
        std::vector<std::vector<RigidTransform>> gt;
        {
          py::gil_scoped_release release;
          est = run_pipeline(rec, rec.scene().vertebrae, options);
          for (int f = 1; f <= frames; ++f) gt.push_back(rec.gt_poses(f));
        }
        const int first = frames >= 61 ? 61 : 1;
        return metrics_dict(evaluate_recording(rec.scene().vertebrae, est, gt, spec.target_vertebra,
                                               spec.target_side, first));
      },
      py::arg("seed") = 1, py::arg("frames") = 30, py::arg("noise_mm") = 0.0, py::arg("prior_error_deg") = 0.0,
      py::arg("spacing_mm") = 1.0, py::arg("mode") = "full", py::arg("breathing_mm") = 0.0,
      "Simulates a recording, registers it and returns its metrics.");

  m.def(
      "read_poses", [](const std::string& path) { return parse_file(path, decode_poses); }, py::arg("path"));
  py::class_<PoseRow>(m, "PoseRow")
      .def_readonly("frame", &PoseRow::frame)
      .def_readonly("vertebra", &PoseRow::vertebra)
      .def_readonly("valid", &PoseRow::valid)
      .def_readonly("updated", &PoseRow::updated)
      .def_readonly("pose", &PoseRow::pose);
  m.def(
      "decode_packet",
      [](const py::bytes& data) {
        const PosePacket p = decode_packet(std::string(data));
        py::dict d;
        d["frame_id"] = p.frame_id;
        d["timestamp_us"] = p.timestamp_us;
        py::list slots;
        for (const PoseSlot& s : p.slots) {
          if (s.valid) {
            slots.append(py::make_tuple(s.updated, s.pose));
          } else {
            slots.append(py::none());
          }
        }
        d["slots"] = slots;
        return d;
      },
      py::arg("data"), "Decodes one pose datagram; invalid slots are None, valid ones (updated, pose).");
}
