#pragma once

#include <filesystem>
#include <string>

#include "segstab/label_volume.hpp"

namespace segstab {

// World-mm (moving) <- world-mm (fixed/reference) mapping, pull-resampling
// convention. Last row (0,0,0,1); upper 3x3 invertible.
struct AffineTransform {
  Affine4 matrix = Affine4::identity();
  std::string source_tag;
};

struct ReferenceGrid {
  Index3 dims{};
  Vec3 spacing{};
  Affine4 affine = Affine4::identity();

  static ReferenceGrid from_volume(const LabelVolume& volume) {
    return ReferenceGrid{volume.dims, volume.spacing, volume.affine};
  }
};

AffineTransform identity_transform();

// Nearest-neighbor label resampling onto the reference grid: each reference
// voxel center is mapped to world, through the transform, into the moving
// volume's index space; indices round half-away-from-zero per axis.
// Out-of-bounds voxels become background 0.
LabelVolume resample_labels(const LabelVolume& moving, const AffineTransform& transform,
                            const ReferenceGrid& reference);

// Reads a plain-text 4x4 row-major matrix, or an ITK-style text affine
// (12 parameters + fixed center), normalized to the world<-world convention.
AffineTransform read_affine_transform(const std::filesystem::path& path);

}  // namespace segstab
