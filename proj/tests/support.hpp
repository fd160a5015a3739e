#pragma once

// Shared generators and scratch-dir helpers for the test suites. The random
// generators here are test-local on purpose: they must not depend on the
// library's synthetic-data code paths.

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "segstab/label_volume.hpp"
#include "segstab/rng.hpp"
#include "segstab/roi.hpp"

namespace segstab::test {

// unique scratch directory under the system temp dir, removed on destruction
class ScratchDir {
public:
  explicit ScratchDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    dir_ = std::filesystem::temp_directory_path() /
           ("segstab-test-" + tag + "-" + std::to_string(::getpid()) + "-" +
            std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(dir_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(dir_, ec);
  }
  const std::filesystem::path& path() const { return dir_; }
  std::filesystem::path operator/(const std::string& name) const { return dir_ / name; }

private:
  std::filesystem::path dir_;
};

inline Vec3 random_spacing(Rng& rng, double lo = 0.7, double hi = 1.2) {
  return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

// rigid rotation about z times spacing, plus a modest translation: column
// norms equal spacing, offsets stay small enough for float32 round-trips
inline Affine4 random_rigid_affine(Rng& rng, const Vec3& spacing) {
  const double angle = rng.uniform(0.0, 6.28318530717958647692);
  Affine4 m;
  m.at(0, 0) = std::cos(angle) * spacing[0];
  m.at(1, 0) = std::sin(angle) * spacing[0];
  m.at(0, 1) = -std::sin(angle) * spacing[1];
  m.at(1, 1) = std::cos(angle) * spacing[1];
  m.at(2, 2) = spacing[2];
  m.at(0, 3) = rng.uniform(-50.0, 50.0);
  m.at(1, 3) = rng.uniform(-50.0, 50.0);
  m.at(2, 3) = rng.uniform(-50.0, 50.0);
  m.at(3, 3) = 1.0;
  return m;
}

inline LabelVolume random_volume(Rng& rng, int max_dim = 16, std::int32_t max_label = 100) {
  LabelVolume vol;
  vol.dims = {rng.uniform_int(2, max_dim), rng.uniform_int(2, max_dim),
              rng.uniform_int(2, max_dim)};
  vol.spacing = random_spacing(rng, 0.5, 2.0);
  vol.affine = random_rigid_affine(rng, vol.spacing);
  vol.labels.resize(vol.voxel_count());
  for (std::int32_t& v : vol.labels) {
    v = rng.bernoulli(0.5) ? rng.uniform_int(0, max_label) : 0;
  }
  return vol;
}

// ellipsoid blob plus speckle noise; guaranteed non-empty
inline BinaryMask random_mask(Rng& rng, const Index3& dims, const Vec3& spacing,
                              double noise = 0.02) {
  std::vector<std::uint8_t> occ(static_cast<std::size_t>(dims[0]) *
                                    static_cast<std::size_t>(dims[1]) *
                                    static_cast<std::size_t>(dims[2]),
                                0);
  const Vec3 c = {rng.uniform(2.5, dims[0] - 3.5), rng.uniform(2.5, dims[1] - 3.5),
                  rng.uniform(2.5, dims[2] - 3.5)};
  const Vec3 r = {rng.uniform(1.5, 3.5), rng.uniform(1.5, 3.5), rng.uniform(1.5, 3.5)};
  std::size_t i = 0;
  for (int z = 0; z < dims[2]; ++z) {
    for (int y = 0; y < dims[1]; ++y) {
      for (int x = 0; x < dims[0]; ++x, ++i) {
        const double dx = (x - c[0]) / r[0];
        const double dy = (y - c[1]) / r[1];
        const double dz = (z - c[2]) / r[2];
        bool inside = dx * dx + dy * dy + dz * dz <= 1.0;
        if (noise > 0.0 && rng.bernoulli(noise)) inside = !inside;
        occ[i] = inside ? 1 : 0;
      }
    }
  }
  occ[static_cast<std::size_t>(static_cast<int>(c[0])) +
      static_cast<std::size_t>(dims[0]) *
          (static_cast<std::size_t>(static_cast<int>(c[1])) +
           static_cast<std::size_t>(dims[1]) *
               static_cast<std::size_t>(static_cast<int>(c[2])))] = 1;
  return BinaryMask::from_occupancy(dims, spacing, std::move(occ));
}

// axis-aligned solid box mask
inline BinaryMask box_mask(const Index3& dims, const Vec3& spacing, const Index3& lo,
                           const Index3& hi) {
  std::vector<std::uint8_t> occ(static_cast<std::size_t>(dims[0]) *
                                    static_cast<std::size_t>(dims[1]) *
                                    static_cast<std::size_t>(dims[2]),
                                0);
  for (int z = lo[2]; z <= hi[2]; ++z) {
    for (int y = lo[1]; y <= hi[1]; ++y) {
      for (int x = lo[0]; x <= hi[0]; ++x) {
        occ[static_cast<std::size_t>(x) +
            static_cast<std::size_t>(dims[0]) *
                (static_cast<std::size_t>(y) +
                 static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(z))] = 1;
      }
    }
  }
  return BinaryMask::from_occupancy(dims, spacing, std::move(occ));
}

inline void write_text(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace segstab::test
