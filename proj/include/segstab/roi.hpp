#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "segstab/label_volume.hpp"

namespace segstab {

enum class RoiClass { cortical, subcortical };
enum class Side { left, right, both };

const char* to_string(RoiClass c);
const char* to_string(Side s);
RoiClass roi_class_from_string(const std::string& s);
Side side_from_string(const std::string& s);

// A named region mapping to left/right atlas label-ID sets.
struct RoiSpec {
  std::string name;
  std::vector<std::int32_t> left_ids;
  std::vector<std::int32_t> right_ids;
  RoiClass roi_class = RoiClass::subcortical;

  std::vector<std::int32_t> ids_for(Side side) const;
};

struct RoiRegistry {
  std::vector<RoiSpec> entries;

  const RoiSpec* find(const std::string& name) const;
  // Throws usage_error when the name is absent.
  const RoiSpec& require(const std::string& name) const;
  // Throws usage_error on duplicate names or overlapping left/right ids.
  void validate() const;
};

// The built-in registry: 9 bilateral cortical (DKT aparc ids) and
// 8 bilateral subcortical (aseg ids) regions.
RoiRegistry default_registry();

// Override registry: JSON list of {name, left_ids, right_ids, class}.
RoiRegistry load_registry(const std::filesystem::path& path);

// One ROI's voxel occupancy, spacing inherited from the source volume.
// Popcount and occupied-index bounds are cached at construction.
struct BinaryMask {
  Index3 dims{};
  Vec3 spacing{};
  std::vector<std::uint8_t> occupancy;
  std::size_t popcount = 0;
  Index3 bbox_min{0, 0, 0};
  Index3 bbox_max{-1, -1, -1};  // inclusive; below bbox_min when empty

  bool empty() const { return popcount == 0; }

  std::size_t flat_index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(y) +
                static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(z));
  }

  bool at(int x, int y, int z) const { return occupancy[flat_index(x, y, z)] != 0; }

  static BinaryMask from_occupancy(const Index3& dims, const Vec3& spacing,
                                   std::vector<std::uint8_t> occupancy);
};

// Occupancy true exactly where the voxel label is in the requested ID set.
// An all-false mask is a valid result (missing ROI).
BinaryMask extract_mask(const LabelVolume& volume, const RoiSpec& spec, Side side);

// popcount * spacing product / 1000.
double mask_volume_cm3(const BinaryMask& mask);

}  // namespace segstab
