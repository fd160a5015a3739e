#include "segstab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "segstab/errors.hpp"

namespace segstab {

namespace {

// Finite stand-in for "no site": large enough to dominate any squared grid
// distance, small enough to survive additions without overflow.
constexpr double kNoSite = 1e30;

void require_same_grid(const BinaryMask& a, const BinaryMask& b) {
  if (!same_dims(a.dims, b.dims) || !same_spacing(a.spacing, b.spacing)) {
    throw usage_error("grid mismatch: masks differ in dims or spacing");
  }
}

struct Box {
  Index3 lo{};
  Index3 hi{};  // inclusive

  int extent(int axis) const {
    return hi[static_cast<std::size_t>(axis)] - lo[static_cast<std::size_t>(axis)] + 1;
  }
  std::size_t size() const {
    return static_cast<std::size_t>(extent(0)) * static_cast<std::size_t>(extent(1)) *
           static_cast<std::size_t>(extent(2));
  }
  std::size_t flat(int x, int y, int z) const {
    return static_cast<std::size_t>(x - lo[0]) +
           static_cast<std::size_t>(extent(0)) *
               (static_cast<std::size_t>(y - lo[1]) +
                static_cast<std::size_t>(extent(1)) * static_cast<std::size_t>(z - lo[2]));
  }
};

Box union_bbox(const BinaryMask& a, const BinaryMask& b) {
  Box box;
  for (std::size_t i = 0; i < 3; ++i) {
    box.lo[i] = std::min(a.bbox_min[i], b.bbox_min[i]);
    box.hi[i] = std::max(a.bbox_max[i], b.bbox_max[i]);
  }
  return box;
}

// 1D squared-distance transform: out[i] = min_j (f[j] + w*(i-j)^2), computed
// with the lower envelope of parabolas. f and out must not alias.
void edt_1d(const double* f, int n, double w, double* out, int* v, double* z) {
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    const double fq = f[q] + w * static_cast<double>(q) * q;
    double s;
    for (;;) {
      const int p = v[k];
      const double fp = f[p] + w * static_cast<double>(p) * p;
      s = (fq - fp) / (2.0 * w * static_cast<double>(q - p));
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const int p = v[k];
    const double d = static_cast<double>(q - p);
    out[q] = w * d * d + f[p];
  }
}

// Squared EDT over an axis-aligned subgrid. Sites must lie inside the box;
// results are exact for every query voxel inside the box.
std::vector<double> edt_squared_box(const std::vector<Index3>& sites, const Box& box,
                                    const Vec3& spacing) {
  const int nx = box.extent(0), ny = box.extent(1), nz = box.extent(2);
  std::vector<double> field(box.size(), kNoSite);
  for (const Index3& s : sites) field[box.flat(s[0], s[1], s[2])] = 0.0;

  const int nmax = std::max({nx, ny, nz});
  std::vector<double> row(static_cast<std::size_t>(nmax));
  std::vector<double> row_out(static_cast<std::size_t>(nmax));
  std::vector<int> v(static_cast<std::size_t>(nmax));
  std::vector<double> z(static_cast<std::size_t>(nmax) + 1);

  const std::size_t sx = 1;
  const std::size_t sy = static_cast<std::size_t>(nx);
  const std::size_t sz = static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny);

  // x axis
  const double wx = spacing[0] * spacing[0];
  for (int zi = 0; zi < nz; ++zi) {
    for (int yi = 0; yi < ny; ++yi) {
      double* base = field.data() + static_cast<std::size_t>(zi) * sz +
                     static_cast<std::size_t>(yi) * sy;
      std::copy(base, base + nx, row.data());
      edt_1d(row.data(), nx, wx, base, v.data(), z.data());
    }
  }
  // y axis
  const double wy = spacing[1] * spacing[1];
  for (int zi = 0; zi < nz; ++zi) {
    for (int xi = 0; xi < nx; ++xi) {
      double* base = field.data() + static_cast<std::size_t>(zi) * sz +
                     static_cast<std::size_t>(xi) * sx;
      for (int yi = 0; yi < ny; ++yi)
        row[static_cast<std::size_t>(yi)] = base[static_cast<std::size_t>(yi) * sy];
      edt_1d(row.data(), ny, wy, row_out.data(), v.data(), z.data());
      for (int yi = 0; yi < ny; ++yi)
        base[static_cast<std::size_t>(yi) * sy] = row_out[static_cast<std::size_t>(yi)];
    }
  }
  // z axis
  const double wz = spacing[2] * spacing[2];
  for (int yi = 0; yi < ny; ++yi) {
    for (int xi = 0; xi < nx; ++xi) {
      double* base = field.data() + static_cast<std::size_t>(yi) * sy +
                     static_cast<std::size_t>(xi) * sx;
      for (int zi = 0; zi < nz; ++zi)
        row[static_cast<std::size_t>(zi)] = base[static_cast<std::size_t>(zi) * sz];
      edt_1d(row.data(), nz, wz, row_out.data(), v.data(), z.data());
      for (int zi = 0; zi < nz; ++zi)
        base[static_cast<std::size_t>(zi) * sz] = row_out[static_cast<std::size_t>(zi)];
    }
  }
  return field;
}

// Sorted distances (mm) from each voxel of `queries` to the nearest site of
// the squared field computed over `box`.
std::vector<double> distances_at(const std::vector<double>& sq_field, const Box& box,
                                 const std::vector<Index3>& queries) {
  std::vector<double> out;
  out.reserve(queries.size());
  for (const Index3& q : queries) {
    out.push_back(std::sqrt(sq_field[box.flat(q[0], q[1], q[2])]));
  }
  return out;
}

std::size_t count_within(const std::vector<double>& sq_field, const Box& box,
                         const std::vector<Index3>& queries, double tolerance_mm) {
  std::size_t n = 0;
  for (const Index3& q : queries) {
    if (std::sqrt(sq_field[box.flat(q[0], q[1], q[2])]) <= tolerance_mm) ++n;
  }
  return n;
}

std::size_t intersection_count(const BinaryMask& a, const BinaryMask& b) {
  if (a.empty() || b.empty()) return 0;
  Index3 lo, hi;
  for (std::size_t i = 0; i < 3; ++i) {
    lo[i] = std::max(a.bbox_min[i], b.bbox_min[i]);
    hi[i] = std::min(a.bbox_max[i], b.bbox_max[i]);
    if (lo[i] > hi[i]) return 0;
  }
  std::size_t n = 0;
  for (int z = lo[2]; z <= hi[2]; ++z) {
    for (int y = lo[1]; y <= hi[1]; ++y) {
      std::size_t ia = a.flat_index(lo[0], y, z);
      std::size_t ib = b.flat_index(lo[0], y, z);
      for (int x = lo[0]; x <= hi[0]; ++x, ++ia, ++ib) {
        n += static_cast<std::size_t>(a.occupancy[ia] & b.occupancy[ib]);
      }
    }
  }
  return n;
}

// Surface voxels only; world points are filled in by extract_surface.
std::vector<Index3> surface_voxels_of(const BinaryMask& mask) {
  std::vector<Index3> voxels;
  if (mask.empty()) return voxels;
  const Index3& d = mask.dims;
  for (int z = mask.bbox_min[2]; z <= mask.bbox_max[2]; ++z) {
    for (int y = mask.bbox_min[1]; y <= mask.bbox_max[1]; ++y) {
      for (int x = mask.bbox_min[0]; x <= mask.bbox_max[0]; ++x) {
        if (!mask.at(x, y, z)) continue;
        const bool boundary =
            x == 0 || !mask.at(x - 1, y, z) || x == d[0] - 1 || !mask.at(x + 1, y, z) ||
            y == 0 || !mask.at(x, y - 1, z) || y == d[1] - 1 || !mask.at(x, y + 1, z) ||
            z == 0 || !mask.at(x, y, z - 1) || z == d[2] - 1 || !mask.at(x, y, z + 1);
        if (boundary) voxels.push_back({x, y, z});
      }
    }
  }
  return voxels;
}

struct SurfacePair {
  std::vector<Index3> surf_a, surf_b;
  std::vector<double> sq_to_a, sq_to_b;  // squared EDT fields over `box`
  Box box;
};

SurfacePair surface_fields(const BinaryMask& a, const BinaryMask& b) {
  SurfacePair sp;
  sp.surf_a = surface_voxels_of(a);
  sp.surf_b = surface_voxels_of(b);
  sp.box = union_bbox(a, b);
  sp.sq_to_a = edt_squared_box(sp.surf_a, sp.box, a.spacing);
  sp.sq_to_b = edt_squared_box(sp.surf_b, sp.box, a.spacing);
  return sp;
}

double surface_dice_from(const SurfacePair& sp, double tolerance_mm) {
  const std::size_t hits_a = count_within(sp.sq_to_b, sp.box, sp.surf_a, tolerance_mm);
  const std::size_t hits_b = count_within(sp.sq_to_a, sp.box, sp.surf_b, tolerance_mm);
  return static_cast<double>(hits_a + hits_b) /
         static_cast<double>(sp.surf_a.size() + sp.surf_b.size());
}

double hd95_from(const SurfacePair& sp) {
  std::vector<double> da = distances_at(sp.sq_to_b, sp.box, sp.surf_a);
  std::vector<double> db = distances_at(sp.sq_to_a, sp.box, sp.surf_b);
  std::sort(da.begin(), da.end());
  std::sort(db.begin(), db.end());
  return std::max(percentile_sorted(da, 95.0), percentile_sorted(db, 95.0));
}

}  // namespace

const char* to_string(EmptyCause c) {
  switch (c) {
    case EmptyCause::none: return "none";
    case EmptyCause::mask_a_empty: return "mask_a_empty";
    case EmptyCause::mask_b_empty: return "mask_b_empty";
    default: return "both_empty";
  }
}

double percentile_sorted(std::span<const double> sorted_values, double p) {
  if (sorted_values.empty()) {
    throw usage_error("percentile of an empty value set is undefined");
  }
  const std::size_t n = sorted_values.size();
  if (n == 1) return sorted_values[0];
  const double h = (static_cast<double>(n) - 1.0) * p / 100.0;
  const double lo = std::floor(h);
  const std::size_t i = static_cast<std::size_t>(lo);
  if (i + 1 >= n) return sorted_values[n - 1];
  const double frac = h - lo;
  return sorted_values[i] + frac * (sorted_values[i + 1] - sorted_values[i]);
}

double dice(const BinaryMask& a, const BinaryMask& b) {
  require_same_grid(a, b);
  if (a.empty() && b.empty()) {
    throw usage_error("dice undefined: both masks empty");
  }
  const std::size_t inter = intersection_count(a, b);
  return 2.0 * static_cast<double>(inter) /
         static_cast<double>(a.popcount + b.popcount);
}

SurfacePointSet extract_surface(const BinaryMask& mask) {
  if (mask.empty()) throw usage_error("extract_surface: mask is empty");
  SurfacePointSet set;
  set.voxels = surface_voxels_of(mask);
  set.points.reserve(set.voxels.size());
  for (const Index3& v : set.voxels) {
    set.points.push_back({v[0] * mask.spacing[0], v[1] * mask.spacing[1],
                          v[2] * mask.spacing[2]});
  }
  return set;
}

DistanceField distance_field(const SurfacePointSet& surface, const Index3& dims,
                             const Vec3& spacing) {
  if (surface.count() == 0) throw usage_error("distance_field: empty surface");
  for (const Index3& v : surface.voxels) {
    if (v[0] < 0 || v[0] >= dims[0] || v[1] < 0 || v[1] >= dims[1] || v[2] < 0 ||
        v[2] >= dims[2]) {
      throw usage_error("distance_field: surface voxel outside grid");
    }
  }
  Box box;
  box.lo = {0, 0, 0};
  box.hi = {dims[0] - 1, dims[1] - 1, dims[2] - 1};
  std::vector<double> sq = edt_squared_box(surface.voxels, box, spacing);
  DistanceField field;
  field.dims = dims;
  field.values.resize(sq.size());
  for (std::size_t i = 0; i < sq.size(); ++i) field.values[i] = std::sqrt(sq[i]);
  return field;
}

double surface_dice(const BinaryMask& a, const BinaryMask& b, double tolerance_mm) {
  require_same_grid(a, b);
  if (!(tolerance_mm > 0.0)) throw usage_error("surface_dice: tolerance must be > 0");
  if (a.empty() || b.empty()) throw usage_error("surface_dice: empty mask");
  return surface_dice_from(surface_fields(a, b), tolerance_mm);
}

double hd95(const BinaryMask& a, const BinaryMask& b) {
  require_same_grid(a, b);
  if (a.empty() || b.empty()) throw usage_error("hd95: empty mask");
  return hd95_from(surface_fields(a, b));
}

PairMetrics pair_metrics(const BinaryMask& a, const BinaryMask& b, double tolerance_mm) {
  require_same_grid(a, b);
  if (!(tolerance_mm > 0.0)) throw usage_error("pair_metrics: tolerance must be > 0");

  PairMetrics pm;
  pm.tolerance_mm = tolerance_mm;
  pm.volume_a_cm3 = mask_volume_cm3(a);
  pm.volume_b_cm3 = mask_volume_cm3(b);

  if (a.empty() || b.empty()) {
    pm.empty_cause = a.empty() && b.empty() ? EmptyCause::both_empty
                     : a.empty()            ? EmptyCause::mask_a_empty
                                            : EmptyCause::mask_b_empty;
    return pm;
  }

  pm.dice = dice(a, b);
  const SurfacePair sp = surface_fields(a, b);
  pm.surface_dice = surface_dice_from(sp, tolerance_mm);
  pm.hd95_mm = hd95_from(sp);
  return pm;
}

}  // namespace segstab
