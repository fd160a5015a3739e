#include "segstab/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "segstab/errors.hpp"

namespace segstab::oracle {

namespace {

// Deliberately re-stated percentile (inclusive linear interpolation) so this
// module shares no code with the kernel it checks.
double percentile_ref(std::vector<double> values, double p) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n == 1) return values[0];
  const double h = (static_cast<double>(n) - 1.0) * p / 100.0;
  const auto i = static_cast<std::size_t>(std::floor(h));
  if (i + 1 >= n) return values[n - 1];
  return values[i] + (h - std::floor(h)) * (values[i + 1] - values[i]);
}

double point_sq_dist(const Index3& a, const Index3& b, const Vec3& spacing) {
  const double dx = (a[0] - b[0]) * spacing[0];
  const double dy = (a[1] - b[1]) * spacing[1];
  const double dz = (a[2] - b[2]) * spacing[2];
  return dx * dx + dy * dy + dz * dz;
}

double min_dist_to(const Index3& p, const std::vector<Index3>& sites, const Vec3& spacing) {
  double best = std::numeric_limits<double>::infinity();
  for (const Index3& s : sites) {
    best = std::min(best, point_sq_dist(p, s, spacing));
  }
  return std::sqrt(best);
}

std::vector<double> directed_distances(const std::vector<Index3>& from,
                                       const std::vector<Index3>& to,
                                       const Vec3& spacing) {
  std::vector<double> out;
  out.reserve(from.size());
  for (const Index3& p : from) out.push_back(min_dist_to(p, to, spacing));
  return out;
}

}  // namespace

double dice_reference(const BinaryMask& a, const BinaryMask& b) {
  std::size_t na = 0, nb = 0, ninter = 0;
  for (std::size_t i = 0; i < a.occupancy.size(); ++i) {
    na += a.occupancy[i] != 0;
    nb += b.occupancy[i] != 0;
    ninter += (a.occupancy[i] != 0 && b.occupancy[i] != 0);
  }
  if (na + nb == 0) throw usage_error("dice_reference: both masks empty");
  return 2.0 * static_cast<double>(ninter) / static_cast<double>(na + nb);
}

std::vector<Index3> surface_voxels_reference(const BinaryMask& mask) {
  std::vector<Index3> out;
  auto occupied = [&](int x, int y, int z) {
    if (x < 0 || x >= mask.dims[0] || y < 0 || y >= mask.dims[1] || z < 0 ||
        z >= mask.dims[2]) {
      return false;
    }
    return mask.at(x, y, z);
  };
  for (int z = 0; z < mask.dims[2]; ++z) {
    for (int y = 0; y < mask.dims[1]; ++y) {
      for (int x = 0; x < mask.dims[0]; ++x) {
        if (!occupied(x, y, z)) continue;
        if (!occupied(x - 1, y, z) || !occupied(x + 1, y, z) || !occupied(x, y - 1, z) ||
            !occupied(x, y + 1, z) || !occupied(x, y, z - 1) || !occupied(x, y, z + 1)) {
          out.push_back({x, y, z});
        }
      }
    }
  }
  return out;
}

std::vector<double> distance_field_reference(const std::vector<Index3>& sites,
                                             const Index3& dims, const Vec3& spacing) {
  if (sites.empty()) throw usage_error("distance_field_reference: no sites");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
              static_cast<std::size_t>(dims[2]));
  for (int z = 0; z < dims[2]; ++z) {
    for (int y = 0; y < dims[1]; ++y) {
      for (int x = 0; x < dims[0]; ++x) {
        out.push_back(min_dist_to({x, y, z}, sites, spacing));
      }
    }
  }
  return out;
}

double surface_dice_reference(const BinaryMask& a, const BinaryMask& b,
                              double tolerance_mm) {
  const std::vector<Index3> sa = surface_voxels_reference(a);
  const std::vector<Index3> sb = surface_voxels_reference(b);
  if (sa.empty() || sb.empty()) throw usage_error("surface_dice_reference: empty mask");
  std::size_t hits = 0;
  for (const Index3& p : sa) {
    if (min_dist_to(p, sb, a.spacing) <= tolerance_mm) ++hits;
  }
  for (const Index3& p : sb) {
    if (min_dist_to(p, sa, a.spacing) <= tolerance_mm) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(sa.size() + sb.size());
}

double hd95_reference(const BinaryMask& a, const BinaryMask& b) {
  const std::vector<Index3> sa = surface_voxels_reference(a);
  const std::vector<Index3> sb = surface_voxels_reference(b);
  if (sa.empty() || sb.empty()) throw usage_error("hd95_reference: empty mask");
  const double pa = percentile_ref(directed_distances(sa, sb, a.spacing), 95.0);
  const double pb = percentile_ref(directed_distances(sb, sa, a.spacing), 95.0);
  return std::max(pa, pb);
}

LabelVolume resample_labels_reference(const LabelVolume& moving,
                                      const AffineTransform& transform,
                                      const ReferenceGrid& reference) {
  LabelVolume out;
  out.dims = reference.dims;
  out.spacing = reference.spacing;
  out.affine = reference.affine;
  out.labels.assign(out.voxel_count(), 0);

  const Affine4 inv_moving = moving.affine.inverse();
  for (int z = 0; z < out.dims[2]; ++z) {
    for (int y = 0; y < out.dims[1]; ++y) {
      for (int x = 0; x < out.dims[0]; ++x) {
        const Vec3 world_ref = reference.affine.apply_point(
            {static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)});
        const Vec3 world_mov = transform.matrix.apply_point(world_ref);
        const Vec3 idx = inv_moving.apply_point(world_mov);
        const int mx = static_cast<int>(std::round(idx[0]));
        const int my = static_cast<int>(std::round(idx[1]));
        const int mz = static_cast<int>(std::round(idx[2]));
        if (moving.in_bounds(mx, my, mz)) {
          out.labels[out.flat_index(x, y, z)] = moving.at(mx, my, mz);
        }
      }
    }
  }
  return out;
}

}  // namespace segstab::oracle
