#pragma once

#include <cstdint>
#include <vector>

#include "segstab/geometry.hpp"

namespace segstab {

// Dense 3D grid of integer anatomical labels in x-fastest order, with voxel
// spacing in mm and a grid-to-world (RAS) affine.
struct LabelVolume {
  Index3 dims{};
  Vec3 spacing{};
  Affine4 affine = Affine4::identity();
  std::vector<std::int32_t> labels;

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
           static_cast<std::size_t>(dims[2]);
  }

  std::size_t flat_index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(y) +
                static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(z));
  }

  bool in_bounds(int x, int y, int z) const {
    return x >= 0 && x < dims[0] && y >= 0 && y < dims[1] && z >= 0 && z < dims[2];
  }

  std::int32_t at(int x, int y, int z) const { return labels[flat_index(x, y, z)]; }
  std::int32_t& at(int x, int y, int z) { return labels[flat_index(x, y, z)]; }

  // Checks the type invariants; throws usage_error naming the first violation.
  void validate() const;
};

}  // namespace segstab
