#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "segstab/metrics.hpp"
#include "segstab/nifti.hpp"
#include "segstab/oracle.hpp"
#include "segstab/resample.hpp"
#include "segstab/roi.hpp"
#include "segstab/stats.hpp"

namespace py = pybind11;
using namespace segstab;

namespace {

// Arrays cross the boundary in Fortran order with shape (nx, ny, nz), which
// matches the library's x-fastest storage and the nibabel convention.

py::array_t<std::int32_t> labels_array(const LabelVolume& vol) {
  py::array_t<std::int32_t, py::array::f_style> out(
      {vol.dims[0], vol.dims[1], vol.dims[2]});
  std::memcpy(out.mutable_data(), vol.labels.data(),
              vol.labels.size() * sizeof(std::int32_t));
  return out;
}

py::array_t<bool> occupancy_array(const BinaryMask& mask) {
  py::array_t<bool, py::array::f_style> out({mask.dims[0], mask.dims[1], mask.dims[2]});
  bool* dst = out.mutable_data();
  for (std::size_t i = 0; i < mask.occupancy.size(); ++i) dst[i] = mask.occupancy[i] != 0;
  return out;
}

py::array_t<double> affine_array(const Affine4& m) {
  py::array_t<double> out({4, 4});
  double* dst = out.mutable_data();
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) dst[r * 4 + c] = m.at(r, c);
  }
  return out;
}

Affine4 affine_from_array(py::array_t<double, py::array::c_style | py::array::forcecast> arr) {
  if (arr.ndim() != 2 || arr.shape(0) != 4 || arr.shape(1) != 4) {
    throw usage_error("affine must be a 4x4 array");
  }
  Affine4 m;
  const double* src = arr.data();
  for (int i = 0; i < 16; ++i) m.m[static_cast<std::size_t>(i)] = src[i];
  return m;
}

LabelVolume volume_from_array(
    py::array_t<std::int32_t, py::array::f_style | py::array::forcecast> labels,
    const Vec3& spacing, py::object affine) {
  if (labels.ndim() != 3) throw usage_error("labels must be a 3-D array");
  LabelVolume vol;
  vol.dims = {static_cast<int>(labels.shape(0)), static_cast<int>(labels.shape(1)),
              static_cast<int>(labels.shape(2))};
  vol.spacing = spacing;
  vol.affine = affine.is_none() ? Affine4::scaling(spacing)
                                : affine_from_array(py::cast<py::array_t<double>>(affine));
  vol.labels.assign(labels.data(), labels.data() + labels.size());
  vol.validate();
  return vol;
}

BinaryMask mask_from_array(
    py::array_t<bool, py::array::f_style | py::array::forcecast> occupancy,
    const Vec3& spacing) {
  if (occupancy.ndim() != 3) throw usage_error("occupancy must be a 3-D array");
  const Index3 dims = {static_cast<int>(occupancy.shape(0)),
                       static_cast<int>(occupancy.shape(1)),
                       static_cast<int>(occupancy.shape(2))};
  std::vector<std::uint8_t> occ(static_cast<std::size_t>(occupancy.size()));
  const bool* src = occupancy.data();
  for (std::size_t i = 0; i < occ.size(); ++i) occ[i] = src[i] ? 1 : 0;
  return BinaryMask::from_occupancy(dims, spacing, std::move(occ));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Reproducibility metrics for brain-segmentation label volumes";

  py::register_exception<parse_error>(m, "ParseError", PyExc_ValueError);
  py::register_exception<usage_error>(m, "UsageError", PyExc_ValueError);

  py::class_<LabelVolume>(m, "LabelVolume")
      .def(py::init(&volume_from_array), py::arg("labels"), py::arg("spacing"),
           py::arg("affine") = py::none())
      .def_property_readonly("dims",
                             [](const LabelVolume& v) {
                               return py::make_tuple(v.dims[0], v.dims[1], v.dims[2]);
                             })
      .def_property_readonly(
          "spacing",
          [](const LabelVolume& v) {
            return py::make_tuple(v.spacing[0], v.spacing[1], v.spacing[2]);
          })
      .def_property_readonly("affine", [](const LabelVolume& v) { return affine_array(v.affine); })
      .def_property_readonly("labels", &labels_array)
      .def("__repr__", [](const LabelVolume& v) {
        return "<LabelVolume " + std::to_string(v.dims[0]) + "x" +
               std::to_string(v.dims[1]) + "x" + std::to_string(v.dims[2]) + ">";
      });

  py::class_<BinaryMask>(m, "BinaryMask")
      .def(py::init(&mask_from_array), py::arg("occupancy"), py::arg("spacing"))
      .def_property_readonly("dims",
                             [](const BinaryMask& v) {
                               return py::make_tuple(v.dims[0], v.dims[1], v.dims[2]);
                             })
      .def_property_readonly(
          "spacing",
          [](const BinaryMask& v) {
            return py::make_tuple(v.spacing[0], v.spacing[1], v.spacing[2]);
          })
      .def_property_readonly("occupancy", &occupancy_array)
      .def_property_readonly("voxel_count", [](const BinaryMask& v) { return v.popcount; })
      .def("volume_cm3", &mask_volume_cm3);

  py::enum_<RoiClass>(m, "RoiClass")
      .value("cortical", RoiClass::cortical)
      .value("subcortical", RoiClass::subcortical);

  py::class_<RoiSpec>(m, "RoiSpec")
      .def_readonly("name", &RoiSpec::name)
      .def_readonly("left_ids", &RoiSpec::left_ids)
      .def_readonly("right_ids", &RoiSpec::right_ids)
      .def_readonly("roi_class", &RoiSpec::roi_class);

  py::class_<RoiRegistry>(m, "RoiRegistry")
      .def_property_readonly("entries",
                             [](const RoiRegistry& r) { return r.entries; })
      .def("names",
           [](const RoiRegistry& r) {
             std::vector<std::string> names;
             for (const RoiSpec& spec : r.entries) names.push_back(spec.name);
             return names;
           })
      .def("get", [](const RoiRegistry& r, const std::string& name) { return r.require(name); },
           py::arg("name"));

  py::class_<PairMetrics>(m, "PairMetrics")
      .def_readonly("dice", &PairMetrics::dice)
      .def_readonly("surface_dice", &PairMetrics::surface_dice)
      .def_readonly("hd95_mm", &PairMetrics::hd95_mm)
      .def_readonly("volume_a_cm3", &PairMetrics::volume_a_cm3)
      .def_readonly("volume_b_cm3", &PairMetrics::volume_b_cm3)
      .def_readonly("tolerance_mm", &PairMetrics::tolerance_mm)
      .def_property_readonly("empty_cause", [](const PairMetrics& p) {
        return std::string(to_string(p.empty_cause));
      });

  py::class_<TrendFit>(m, "TrendFit")
      .def_readonly("slope_cm3_per_year", &TrendFit::slope_cm3_per_year)
      .def_readonly("intercept_cm3", &TrendFit::intercept_cm3)
      .def_readonly("r_squared", &TrendFit::r_squared)
      .def_readonly("slope_stderr", &TrendFit::slope_stderr)
      .def_readonly("n", &TrendFit::n)
      .def_readonly("times_years", &TrendFit::times_years)
      .def_readonly("fitted_cm3", &TrendFit::fitted_cm3)
      .def_readonly("ci95_lower_cm3", &TrendFit::ci95_lower_cm3)
      .def_readonly("ci95_upper_cm3", &TrendFit::ci95_upper_cm3);

  m.def("read_label_volume", &read_label_volume, py::arg("path"));
  m.def("write_label_volume", &write_label_volume, py::arg("volume"), py::arg("path"));

  m.def("default_registry", &default_registry);
  m.def("load_registry", &load_registry, py::arg("path"));

  m.def(
      "extract_mask",
      [](const LabelVolume& volume, const RoiSpec& spec, const std::string& side) {
        return extract_mask(volume, spec, side_from_string(side));
      },
      py::arg("volume"), py::arg("roi"), py::arg("side") = "both");
  m.def("mask_volume_cm3", &mask_volume_cm3, py::arg("mask"));

  m.def("dice", &dice, py::arg("a"), py::arg("b"));
  m.def("surface_dice", &surface_dice, py::arg("a"), py::arg("b"),
        py::arg("tolerance_mm") = 1.0);
  m.def("hd95", &hd95, py::arg("a"), py::arg("b"));
  m.def("pair_metrics", &pair_metrics, py::arg("a"), py::arg("b"),
        py::arg("tolerance_mm") = 1.0);

  m.def(
      "resample_labels",
      [](const LabelVolume& moving, py::array_t<double> matrix,
         const LabelVolume& reference) {
        AffineTransform t;
        t.matrix = affine_from_array(matrix);
        t.source_tag = "python";
        return resample_labels(moving, t, ReferenceGrid::from_volume(reference));
      },
      py::arg("moving"), py::arg("world_transform"), py::arg("reference"),
      "Nearest-neighbor resampling of `moving` onto the grid of `reference`; "
      "`world_transform` maps fixed world mm to moving world mm.");
  m.def(
      "read_affine_transform",
      [](const std::filesystem::path& path) {
        return affine_array(read_affine_transform(path).matrix);
      },
      py::arg("path"));

  m.def(
      "fit_trend",
      [](const std::vector<double>& years, const std::vector<double>& volumes,
         const std::string& band) {
        return fit_trend(std::span<const double>(years), std::span<const double>(volumes),
                         ci_band_from_string(band));
      },
      py::arg("times_years"), py::arg("volumes_cm3"), py::arg("ci_band") = "mean");

  m.def(
      "mape_percent",
      [](const std::vector<double>& reference, const std::vector<double>& predicted) {
        if (reference.size() != predicted.size()) {
          throw usage_error("reference and predicted must have equal length");
        }
        std::vector<MetricRecord> records(reference.size());
        for (std::size_t i = 0; i < reference.size(); ++i) {
          records[i].metrics.volume_a_cm3 = reference[i];
          records[i].metrics.volume_b_cm3 = predicted[i];
        }
        return volume_mape(records);
      },
      py::arg("reference"), py::arg("predicted"),
      "Mean absolute percentage error between paired volume lists.");

  auto oracle_mod = m.def_submodule("oracle", "Brute-force reference implementations");
  oracle_mod.def("dice", &oracle::dice_reference, py::arg("a"), py::arg("b"));
  oracle_mod.def("surface_dice", &oracle::surface_dice_reference, py::arg("a"),
                 py::arg("b"), py::arg("tolerance_mm") = 1.0);
  oracle_mod.def("hd95", &oracle::hd95_reference, py::arg("a"), py::arg("b"));
}
