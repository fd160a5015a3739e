#pragma once

#include <array>
#include <cmath>
#include <cstddef>

#include "segstab/errors.hpp"

namespace segstab {

using Index3 = std::array<int, 3>;
using Vec3 = std::array<double, 3>;

// Row-major homogeneous 4x4 matrix. Used both as grid-to-world affine
// (voxel index -> world mm) and as world-to-world registration transform.
struct Affine4 {
  std::array<double, 16> m{};

  double& at(int r, int c) { return m[static_cast<std::size_t>(r * 4 + c)]; }
  double at(int r, int c) const { return m[static_cast<std::size_t>(r * 4 + c)]; }

  static Affine4 identity() {
    Affine4 a;
    a.at(0, 0) = a.at(1, 1) = a.at(2, 2) = a.at(3, 3) = 1.0;
    return a;
  }

  // diag(s) with unit homogeneous part.
  static Affine4 scaling(const Vec3& s) {
    Affine4 a;
    a.at(0, 0) = s[0];
    a.at(1, 1) = s[1];
    a.at(2, 2) = s[2];
    a.at(3, 3) = 1.0;
    return a;
  }

  Vec3 apply_point(const Vec3& p) const {
    Vec3 out{};
    for (int r = 0; r < 3; ++r) {
      out[static_cast<std::size_t>(r)] =
          at(r, 0) * p[0] + at(r, 1) * p[1] + at(r, 2) * p[2] + at(r, 3);
    }
    return out;
  }

  Affine4 operator*(const Affine4& rhs) const {
    Affine4 out;
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += at(r, k) * rhs.at(k, c);
        out.at(r, c) = acc;
      }
    }
    return out;
  }

  double det3() const {
    return at(0, 0) * (at(1, 1) * at(2, 2) - at(1, 2) * at(2, 1)) -
           at(0, 1) * (at(1, 0) * at(2, 2) - at(1, 2) * at(2, 0)) +
           at(0, 2) * (at(1, 0) * at(2, 1) - at(1, 1) * at(2, 0));
  }

  bool has_homogeneous_last_row(double tol = 1e-9) const {
    return std::abs(at(3, 0)) <= tol && std::abs(at(3, 1)) <= tol &&
           std::abs(at(3, 2)) <= tol && std::abs(at(3, 3) - 1.0) <= tol;
  }

  // Euclidean norms of the upper-left 3x3 columns; equals voxel spacing for a
  // rotation-times-scaling grid affine.
  Vec3 column_norms() const {
    Vec3 n{};
    for (int c = 0; c < 3; ++c) {
      n[static_cast<std::size_t>(c)] = std::sqrt(
          at(0, c) * at(0, c) + at(1, c) * at(1, c) + at(2, c) * at(2, c));
    }
    return n;
  }

  // Inverse of an affine whose last row is (0,0,0,1).
  Affine4 inverse() const {
    const double det = det3();
    if (std::abs(det) <= 1e-12) {
      throw usage_error("singular transform: |det| <= 1e-12");
    }
    Affine4 inv;
    const double id = 1.0 / det;
    inv.at(0, 0) = (at(1, 1) * at(2, 2) - at(1, 2) * at(2, 1)) * id;
    inv.at(0, 1) = (at(0, 2) * at(2, 1) - at(0, 1) * at(2, 2)) * id;
    inv.at(0, 2) = (at(0, 1) * at(1, 2) - at(0, 2) * at(1, 1)) * id;
    inv.at(1, 0) = (at(1, 2) * at(2, 0) - at(1, 0) * at(2, 2)) * id;
    inv.at(1, 1) = (at(0, 0) * at(2, 2) - at(0, 2) * at(2, 0)) * id;
    inv.at(1, 2) = (at(0, 2) * at(1, 0) - at(0, 0) * at(1, 2)) * id;
    inv.at(2, 0) = (at(1, 0) * at(2, 1) - at(1, 1) * at(2, 0)) * id;
    inv.at(2, 1) = (at(0, 1) * at(2, 0) - at(0, 0) * at(2, 1)) * id;
    inv.at(2, 2) = (at(0, 0) * at(1, 1) - at(0, 1) * at(1, 0)) * id;
    // translation: t' = -A^{-1} t
    for (int r = 0; r < 3; ++r) {
      inv.at(r, 3) = -(inv.at(r, 0) * at(0, 3) + inv.at(r, 1) * at(1, 3) +
                       inv.at(r, 2) * at(2, 3));
    }
    inv.at(3, 3) = 1.0;
    return inv;
  }
};

inline bool same_dims(const Index3& a, const Index3& b) {
  return a[0] == b[0] && a[1] == b[1] && a[2] == b[2];
}

inline bool same_spacing(const Vec3& a, const Vec3& b) {
  return a[0] == b[0] && a[1] == b[1] && a[2] == b[2];
}

}  // namespace segstab
