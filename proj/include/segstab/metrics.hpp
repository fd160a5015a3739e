#pragma once

#include <optional>
#include <span>
#include <vector>

#include "segstab/roi.hpp"

namespace segstab {

// Boundary voxels of a mask: 6-connectivity face-adjacent-to-outside, with
// grid edges counting as outside. Points are voxel centers in mm
// (index * spacing per axis).
struct SurfacePointSet {
  std::vector<Index3> voxels;
  std::vector<Vec3> points;

  std::size_t count() const { return voxels.size(); }
};

// Per-voxel exact Euclidean distance (mm) to the nearest surface point.
struct DistanceField {
  Index3 dims{};
  std::vector<double> values;

  std::size_t flat_index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(y) +
                static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(z));
  }

  double at(int x, int y, int z) const { return values[flat_index(x, y, z)]; }
};

enum class EmptyCause { none, mask_a_empty, mask_b_empty, both_empty };
const char* to_string(EmptyCause c);

// All similarity metrics for one mask pair. Metrics are undefined (nullopt)
// exactly when a mask is empty; volumes are always reported.
struct PairMetrics {
  std::optional<double> dice;
  std::optional<double> surface_dice;
  std::optional<double> hd95_mm;
  double volume_a_cm3 = 0.0;
  double volume_b_cm3 = 0.0;
  double tolerance_mm = 1.0;
  EmptyCause empty_cause = EmptyCause::none;
};

// 2|A n B| / (|A| + |B|) with exact integer counts. Throws usage_error on
// grid mismatch or when both masks are empty (undefined).
double dice(const BinaryMask& a, const BinaryMask& b);

// Throws usage_error on an empty mask.
SurfacePointSet extract_surface(const BinaryMask& mask);

// Exact separable Euclidean distance transform (squared-parabola lower
// envelopes per axis), honoring anisotropic spacing. Throws usage_error on an
// empty surface.
DistanceField distance_field(const SurfacePointSet& surface, const Index3& dims,
                             const Vec3& spacing);

// (|{x in dA : d(x,dB) <= tol}| + |{y in dB : d(y,dA) <= tol}|) / (|dA| + |dB|).
// Shared denominator; default tolerance 1 mm.
double surface_dice(const BinaryMask& a, const BinaryMask& b, double tolerance_mm = 1.0);

// Max of the two directed 95th-percentile surface distances (mm). Percentile
// uses linear interpolation between closest ranks (inclusive).
double hd95(const BinaryMask& a, const BinaryMask& b);

// Bundles all metrics, reusing one distance field per direction. Only grid
// mismatch throws; empty masks yield undefined metrics with the cause set.
PairMetrics pair_metrics(const BinaryMask& a, const BinaryMask& b,
                         double tolerance_mm = 1.0);

// Inclusive linear-interpolation percentile (rank h = (n-1)*p/100) over an
// ascending-sorted span. Shared by HD95 and the MAPE report percentiles.
double percentile_sorted(std::span<const double> sorted_values, double p);

}  // namespace segstab
