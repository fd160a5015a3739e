#include "segstab/roi.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "json.hpp"
#include "segstab/errors.hpp"

namespace segstab {

const char* to_string(RoiClass c) {
  return c == RoiClass::cortical ? "cortical" : "subcortical";
}

const char* to_string(Side s) {
  switch (s) {
    case Side::left: return "left";
    case Side::right: return "right";
    default: return "both";
  }
}

RoiClass roi_class_from_string(const std::string& s) {
  if (s == "cortical") return RoiClass::cortical;
  if (s == "subcortical") return RoiClass::subcortical;
  throw usage_error("unknown ROI class '" + s + "' (expected cortical|subcortical)");
}

Side side_from_string(const std::string& s) {
  if (s == "left") return Side::left;
  if (s == "right") return Side::right;
  if (s == "both") return Side::both;
  throw usage_error("unknown side '" + s + "' (expected left|right|both)");
}

std::vector<std::int32_t> RoiSpec::ids_for(Side side) const {
  switch (side) {
    case Side::left: return left_ids;
    case Side::right: return right_ids;
    default: {
      std::vector<std::int32_t> ids = left_ids;
      ids.insert(ids.end(), right_ids.begin(), right_ids.end());
      return ids;
    }
  }
}

const RoiSpec* RoiRegistry::find(const std::string& name) const {
  for (const RoiSpec& spec : entries) {
    if (spec.name == name) return &spec;
  }
  return nullptr;
}

const RoiSpec& RoiRegistry::require(const std::string& name) const {
  const RoiSpec* spec = find(name);
  if (spec == nullptr) throw usage_error("ROI '" + name + "' not found in registry");
  return *spec;
}

void RoiRegistry::validate() const {
  std::set<std::string> names;
  for (const RoiSpec& spec : entries) {
    if (spec.name.empty()) throw usage_error("registry: ROI with empty name");
    if (!names.insert(spec.name).second) {
      throw usage_error("registry: duplicate ROI name '" + spec.name + "'");
    }
    for (const std::int32_t id : spec.left_ids) {
      if (id <= 0) throw usage_error("registry: non-positive label id in '" + spec.name + "'");
      if (std::find(spec.right_ids.begin(), spec.right_ids.end(), id) != spec.right_ids.end()) {
        throw usage_error("registry: id " + std::to_string(id) +
                          " appears on both sides of '" + spec.name + "'");
      }
    }
    for (const std::int32_t id : spec.right_ids) {
      if (id <= 0) throw usage_error("registry: non-positive label id in '" + spec.name + "'");
    }
  }
}

RoiRegistry default_registry() {
  RoiRegistry reg;
  auto add = [&reg](const char* name, std::int32_t left, std::int32_t right, RoiClass cls) {
    reg.entries.push_back(RoiSpec{name, {left}, {right}, cls});
  };
  add("Entorhinal", 1006, 2006, RoiClass::cortical);
  add("CaudalAnteriorCingulate", 1002, 2002, RoiClass::cortical);
  add("InferiorParietal", 1008, 2008, RoiClass::cortical);
  add("Fusiform", 1007, 2007, RoiClass::cortical);
  add("MedialOrbitofrontal", 1014, 2014, RoiClass::cortical);
  add("LateralOrbitofrontal", 1012, 2012, RoiClass::cortical);
  add("SuperiorTemporal", 1030, 2030, RoiClass::cortical);
  add("Insula", 1035, 2035, RoiClass::cortical);
  add("SuperiorFrontal", 1028, 2028, RoiClass::cortical);
  add("Hippocampus", 17, 53, RoiClass::subcortical);
  add("Amygdala", 18, 54, RoiClass::subcortical);
  add("Thalamus", 10, 49, RoiClass::subcortical);
  add("Caudate", 11, 50, RoiClass::subcortical);
  add("Putamen", 12, 51, RoiClass::subcortical);
  add("Pallidum", 13, 52, RoiClass::subcortical);
  add("Accumbens", 26, 58, RoiClass::subcortical);
  add("VentralDC", 28, 60, RoiClass::subcortical);
  reg.validate();
  return reg;
}

RoiRegistry load_registry(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw parse_error(path.string() + ": cannot open registry file");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(path.string() + ": invalid JSON: " + e.what());
  }
  if (!doc.is_array()) {
    throw parse_error(path.string() + ": registry must be a JSON list");
  }
  RoiRegistry reg;
  try {
    for (const auto& item : doc) {
      RoiSpec spec;
      spec.name = item.at("name").get<std::string>();
      spec.left_ids = item.at("left_ids").get<std::vector<std::int32_t>>();
      spec.right_ids = item.at("right_ids").get<std::vector<std::int32_t>>();
      spec.roi_class = roi_class_from_string(item.at("class").get<std::string>());
      reg.entries.push_back(std::move(spec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(path.string() + ": bad registry entry: " + e.what());
  }
  try {
    reg.validate();
  } catch (const usage_error& e) {
    throw parse_error(path.string() + ": " + e.what());
  }
  return reg;
}

BinaryMask BinaryMask::from_occupancy(const Index3& dims, const Vec3& spacing,
                                      std::vector<std::uint8_t> occupancy) {
  BinaryMask mask;
  mask.dims = dims;
  mask.spacing = spacing;
  mask.occupancy = std::move(occupancy);
  const std::size_t expected = static_cast<std::size_t>(dims[0]) *
                               static_cast<std::size_t>(dims[1]) *
                               static_cast<std::size_t>(dims[2]);
  if (mask.occupancy.size() != expected) {
    throw usage_error("BinaryMask: occupancy size does not match dims");
  }
  mask.bbox_min = {dims[0], dims[1], dims[2]};
  mask.bbox_max = {-1, -1, -1};
  std::size_t i = 0;
  for (int z = 0; z < dims[2]; ++z) {
    for (int y = 0; y < dims[1]; ++y) {
      for (int x = 0; x < dims[0]; ++x, ++i) {
        if (mask.occupancy[i] == 0) continue;
        mask.occupancy[i] = 1;
        ++mask.popcount;
        mask.bbox_min[0] = std::min(mask.bbox_min[0], x);
        mask.bbox_min[1] = std::min(mask.bbox_min[1], y);
        mask.bbox_min[2] = std::min(mask.bbox_min[2], z);
        mask.bbox_max[0] = std::max(mask.bbox_max[0], x);
        mask.bbox_max[1] = std::max(mask.bbox_max[1], y);
        mask.bbox_max[2] = std::max(mask.bbox_max[2], z);
      }
    }
  }
  if (mask.popcount == 0) mask.bbox_min = {0, 0, 0};
  return mask;
}

BinaryMask extract_mask(const LabelVolume& volume, const RoiSpec& spec, Side side) {
  const std::vector<std::int32_t> ids = spec.ids_for(side);
  std::vector<std::uint8_t> occ(volume.voxel_count(), 0);
  const std::int32_t* labels = volume.labels.data();
  const std::size_t n = volume.voxel_count();
  if (ids.size() == 1) {
    const std::int32_t id = ids[0];
    for (std::size_t i = 0; i < n; ++i) occ[i] = labels[i] == id ? 1 : 0;
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const std::int32_t v = labels[i];
      for (const std::int32_t id : ids) {
        if (v == id) {
          occ[i] = 1;
          break;
        }
      }
    }
  }
  return BinaryMask::from_occupancy(volume.dims, volume.spacing, std::move(occ));
}

double mask_volume_cm3(const BinaryMask& mask) {
  return static_cast<double>(mask.popcount) * mask.spacing[0] * mask.spacing[1] *
         mask.spacing[2] / 1000.0;
}

}  // namespace segstab
