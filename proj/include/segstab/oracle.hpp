#pragma once

#include "segstab/metrics.hpp"
#include "segstab/resample.hpp"

namespace segstab::oracle {

// Brute-force reference implementations of the metric kernels. They share the
// metric definitions but none of the optimized code paths (no bounding boxes,
// no separable transform), so kernel drift shows up as disagreement. Used by
// the `selftest` subcommand and by the test suites.

double dice_reference(const BinaryMask& a, const BinaryMask& b);

std::vector<Index3> surface_voxels_reference(const BinaryMask& mask);

// min over sites of the exact point-to-point distance, O(N*S).
std::vector<double> distance_field_reference(const std::vector<Index3>& sites,
                                             const Index3& dims, const Vec3& spacing);

double surface_dice_reference(const BinaryMask& a, const BinaryMask& b,
                              double tolerance_mm);

double hd95_reference(const BinaryMask& a, const BinaryMask& b);

// Per-voxel pull-resampling written as the direct definition.
LabelVolume resample_labels_reference(const LabelVolume& moving,
                                      const AffineTransform& transform,
                                      const ReferenceGrid& reference);

}  // namespace segstab::oracle
