#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <map>
#include <set>

#include "segstab/errors.hpp"
#include "segstab/oracle.hpp"
#include "segstab/resample.hpp"
#include "support.hpp"

using namespace segstab;
using segstab::test::ScratchDir;

namespace {

LabelVolume blob_volume(const Index3& dims, const Vec3& spacing, const Vec3& center_vox,
                        double radius_vox, std::int32_t label) {
  LabelVolume vol;
  vol.dims = dims;
  vol.spacing = spacing;
  vol.affine = Affine4::scaling(spacing);
  vol.labels.assign(vol.voxel_count(), 0);
  for (int z = 0; z < dims[2]; ++z) {
    for (int y = 0; y < dims[1]; ++y) {
      for (int x = 0; x < dims[0]; ++x) {
        const double dx = x - center_vox[0], dy = y - center_vox[1], dz = z - center_vox[2];
        if (dx * dx + dy * dy + dz * dz <= radius_vox * radius_vox) {
          vol.at(x, y, z) = label;
        }
      }
    }
  }
  return vol;
}

std::map<std::int32_t, std::size_t> label_histogram(const LabelVolume& vol) {
  std::map<std::int32_t, std::size_t> hist;
  for (const std::int32_t v : vol.labels) ++hist[v];
  return hist;
}

}  // namespace

TEST_CASE("identity transform on the same grid is a bitwise no-op") {
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const LabelVolume vol = test::random_volume(rng, 10);
    const LabelVolume out =
        resample_labels(vol, identity_transform(), ReferenceGrid::from_volume(vol));
    CHECK(out.labels == vol.labels);
    CHECK(out.dims == vol.dims);
    CHECK(out.spacing == vol.spacing);
    CHECK(out.affine.m == vol.affine.m);
  }
}

TEST_CASE("one-voxel x translation shifts indices and zero-fills the boundary") {
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const Vec3 spacing = test::random_spacing(rng);
    LabelVolume vol;
    vol.dims = {rng.uniform_int(4, 10), rng.uniform_int(4, 10), rng.uniform_int(4, 10)};
    vol.spacing = spacing;
    vol.affine = Affine4::scaling(spacing);
    vol.labels.resize(vol.voxel_count());
    for (std::int32_t& v : vol.labels) v = rng.uniform_int(0, 9);

    AffineTransform shift;
    shift.matrix.at(0, 3) = spacing[0];  // +1 voxel in world mm
    shift.source_tag = "unit-shift";
    const ReferenceGrid grid = ReferenceGrid::from_volume(vol);
    const LabelVolume out = resample_labels(vol, shift, grid);

    // brute-force remap oracle
    const LabelVolume ref = oracle::resample_labels_reference(vol, shift, grid);
    CHECK(out.labels == ref.labels);

    // analytic index shift
    for (int z = 0; z < vol.dims[2]; ++z) {
      for (int y = 0; y < vol.dims[1]; ++y) {
        for (int x = 0; x < vol.dims[0]; ++x) {
          const std::int32_t expect = x + 1 < vol.dims[0] ? vol.at(x + 1, y, z) : 0;
          REQUIRE(out.at(x, y, z) == expect);
        }
      }
    }
  }
}

TEST_CASE("90-degree z rotation on a cubic grid preserves the label multiset") {
  const int n = 12;
  LabelVolume vol;
  vol.dims = {n, n, n};
  vol.spacing = {1.0, 1.0, 1.0};
  vol.affine = Affine4::scaling(vol.spacing);
  vol.labels.assign(vol.voxel_count(), 0);
  Rng rng(3);
  for (std::int32_t& v : vol.labels) v = rng.uniform_int(0, 4);

  // rotate about the grid center: w' = R (w - c) + c, offset t = c - R c
  const double c = (n - 1) / 2.0;
  AffineTransform rot;
  rot.matrix.at(0, 0) = 0.0;
  rot.matrix.at(0, 1) = -1.0;
  rot.matrix.at(1, 0) = 1.0;
  rot.matrix.at(1, 1) = 0.0;
  rot.matrix.at(0, 3) = 2 * c;  // c - (0*c + -1*c)
  rot.matrix.at(1, 3) = 0.0;    // c - (1*c + 0*c)
  rot.source_tag = "rot90";

  const ReferenceGrid grid = ReferenceGrid::from_volume(vol);
  const LabelVolume out = resample_labels(vol, rot, grid);

  // a quarter turn about the center maps the cube onto itself exactly
  CHECK(label_histogram(out) == label_histogram(vol));
  CHECK(out.labels == oracle::resample_labels_reference(vol, rot, grid).labels);
}

TEST_CASE("nearest-neighbor output never invents labels") {
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const LabelVolume vol = test::random_volume(rng, 10, 7);
    AffineTransform t;
    const double a = rng.uniform(-0.6, 0.6);
    t.matrix.at(0, 0) = std::cos(a);
    t.matrix.at(0, 1) = -std::sin(a);
    t.matrix.at(1, 0) = std::sin(a);
    t.matrix.at(1, 1) = std::cos(a);
    t.matrix.at(0, 3) = rng.uniform(-4.0, 4.0);
    t.matrix.at(2, 3) = rng.uniform(-4.0, 4.0);
    t.source_tag = "random";

    const LabelVolume out = resample_labels(vol, t, ReferenceGrid::from_volume(vol));
    std::set<std::int32_t> allowed(vol.labels.begin(), vol.labels.end());
    allowed.insert(0);
    for (const std::int32_t v : out.labels) CHECK(allowed.count(v) == 1);
  }
}

TEST_CASE("transform-inverse round trip through a finer grid preserves a blob") {
  const LabelVolume vol = blob_volume({32, 32, 32}, {1, 1, 1}, {15.5, 15.5, 15.5}, 10.0, 7);

  AffineTransform t;
  const double a = 0.12;
  t.matrix.at(0, 0) = std::cos(a);
  t.matrix.at(0, 1) = -std::sin(a);
  t.matrix.at(1, 0) = std::sin(a);
  t.matrix.at(1, 1) = std::cos(a);
  t.matrix.at(0, 3) = 0.4;
  t.matrix.at(1, 3) = -0.7;
  t.matrix.at(2, 3) = 0.3;
  t.source_tag = "fwd";
  AffineTransform t_inv;
  t_inv.matrix = t.matrix.inverse();
  t_inv.source_tag = "inv";

  // fine intermediate grid: same FOV at half the voxel size
  ReferenceGrid fine;
  fine.dims = {64, 64, 64};
  fine.spacing = {0.5, 0.5, 0.5};
  fine.affine = Affine4::scaling(fine.spacing);

  const LabelVolume warped = resample_labels(vol, t, fine);
  const LabelVolume back = resample_labels(warped, t_inv, ReferenceGrid::from_volume(vol));

  std::size_t blob = 0, preserved = 0;
  for (std::size_t i = 0; i < vol.labels.size(); ++i) {
    if (vol.labels[i] == 7) {
      ++blob;
      preserved += back.labels[i] == 7;
    }
  }
  REQUIRE(blob > 3000);
  CHECK(static_cast<double>(preserved) >= 0.99 * static_cast<double>(blob));
}

TEST_CASE("pure translation moves the world centroid by at most half a voxel diagonal") {
  Rng rng(5);
  for (int i = 0; i < 10; ++i) {
    const Vec3 spacing = test::random_spacing(rng);
    const LabelVolume vol =
        blob_volume({24, 24, 24}, spacing, {11.5, 11.5, 11.5}, 6.0, 3);

    const Vec3 t = {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
    AffineTransform shift;
    shift.matrix.at(0, 3) = t[0];
    shift.matrix.at(1, 3) = t[1];
    shift.matrix.at(2, 3) = t[2];
    shift.source_tag = "move";

    const LabelVolume out = resample_labels(vol, shift, ReferenceGrid::from_volume(vol));

    auto centroid = [](const LabelVolume& v, std::int32_t label) {
      Vec3 acc{0, 0, 0};
      std::size_t n = 0;
      for (int z = 0; z < v.dims[2]; ++z)
        for (int y = 0; y < v.dims[1]; ++y)
          for (int x = 0; x < v.dims[0]; ++x)
            if (v.at(x, y, z) == label) {
              const Vec3 w = v.affine.apply_point(
                  {static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)});
              acc = {acc[0] + w[0], acc[1] + w[1], acc[2] + w[2]};
              ++n;
            }
      REQUIRE(n > 0);
      return Vec3{acc[0] / n, acc[1] / n, acc[2] / n};
    };

    const Vec3 c_in = centroid(vol, 3);
    const Vec3 c_out = centroid(out, 3);
    // pull resampling by +t displaces content by -t in the reference frame
    const Vec3 expect = {c_in[0] - t[0], c_in[1] - t[1], c_in[2] - t[2]};
    const double err = std::sqrt((c_out[0] - expect[0]) * (c_out[0] - expect[0]) +
                                 (c_out[1] - expect[1]) * (c_out[1] - expect[1]) +
                                 (c_out[2] - expect[2]) * (c_out[2] - expect[2]));
    const double half_diag =
        0.5 * std::sqrt(spacing[0] * spacing[0] + spacing[1] * spacing[1] +
                        spacing[2] * spacing[2]);
    CHECK(err <= half_diag);
  }
}

TEST_CASE("singular transforms are rejected") {
  const LabelVolume vol = blob_volume({8, 8, 8}, {1, 1, 1}, {3.5, 3.5, 3.5}, 2.0, 1);
  AffineTransform degenerate;
  degenerate.matrix.at(0, 0) = 0.0;  // collapses x
  degenerate.source_tag = "flat";
  CHECK_THROWS_WITH_AS(
      resample_labels(vol, degenerate, ReferenceGrid::from_volume(vol)),
      doctest::Contains("singular"), usage_error);
}

TEST_CASE("read_affine_transform: plain 4x4 text") {
  ScratchDir scratch("xfm-plain");
  test::write_text(scratch / "identity.txt",
                   "1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n");
  const AffineTransform t = read_affine_transform(scratch / "identity.txt");
  CHECK(t.matrix.m == Affine4::identity().m);
  CHECK(t.source_tag == "identity.txt");

  test::write_text(scratch / "move.txt", "1 0 0 1.5\n0 1 0 -2\n0 0 1 3\n0 0 0 1\n");
  const AffineTransform m = read_affine_transform(scratch / "move.txt");
  CHECK(m.matrix.at(0, 3) == 1.5);
  CHECK(m.matrix.at(1, 3) == -2.0);

  test::write_text(scratch / "nine.txt", "1 0 0\n0 1 0\n0 0 1\n");
  CHECK_THROWS_WITH_AS(read_affine_transform(scratch / "nine.txt"),
                       doctest::Contains("16 values"), parse_error);

  test::write_text(scratch / "badrow.txt", "1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 1 1\n");
  CHECK_THROWS_AS(read_affine_transform(scratch / "badrow.txt"), parse_error);

  test::write_text(scratch / "singular.txt", "1 0 0 0\n2 0 0 0\n0 0 1 0\n0 0 0 1\n");
  CHECK_THROWS_AS(read_affine_transform(scratch / "singular.txt"), usage_error);
}

TEST_CASE("read_affine_transform: ITK text affine") {
  ScratchDir scratch("xfm-itk");
  test::write_text(scratch / "itk.txt",
                   "#Insight Transform File V1.0\n"
                   "#Transform 0\n"
                   "Transform: AffineTransform_double_3_3\n"
                   "Parameters: 1 0 0 0 1 0 0 0 1 1 2 3\n"
                   "FixedParameters: 0 0 0\n");
  const AffineTransform t = read_affine_transform(scratch / "itk.txt");
  CHECK(t.matrix.at(0, 3) == 1.0);
  CHECK(t.matrix.at(1, 3) == 2.0);
  CHECK(t.matrix.at(2, 3) == 3.0);
  CHECK(t.matrix.at(0, 0) == 1.0);

  // a nonzero fixed center folds into the offset: t + c - A c
  test::write_text(scratch / "itk-center.txt",
                   "#Insight Transform File V1.0\n"
                   "Transform: MatrixOffsetTransformBase_double_3_3\n"
                   "Parameters: 0 -1 0 1 0 0 0 0 1 0 0 0\n"
                   "FixedParameters: 10 20 5\n");
  const AffineTransform c = read_affine_transform(scratch / "itk-center.txt");
  // offset = 0 + c - A c with A = Rz(90): A c = (-20, 10, 5)
  CHECK(c.matrix.at(0, 3) == doctest::Approx(30.0));
  CHECK(c.matrix.at(1, 3) == doctest::Approx(10.0));
  CHECK(c.matrix.at(2, 3) == doctest::Approx(0.0));

  test::write_text(scratch / "itk-bad.txt",
                   "#Insight Transform File V1.0\n"
                   "Transform: AffineTransform_double_3_3\n"
                   "Parameters: 1 0 0 0 1 0 0 0 1\n"
                   "FixedParameters: 0 0 0\n");
  CHECK_THROWS_WITH_AS(read_affine_transform(scratch / "itk-bad.txt"),
                       doctest::Contains("12"), parse_error);
}
