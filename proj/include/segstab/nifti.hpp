#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include "segstab/label_volume.hpp"

namespace segstab {

// The NIfTI-1 header fields this library honors, stored post byte-swap.
// The on-disk header is exactly 348 bytes before the 4-byte extender.
struct NiftiHeader {
  std::int32_t sizeof_hdr = 348;
  std::array<std::int16_t, 8> dim{};
  std::int16_t datatype = 0;
  std::int16_t bitpix = 0;
  std::array<float, 8> pixdim{};
  float vox_offset = 352.0f;
  float scl_slope = 0.0f;
  float scl_inter = 0.0f;
  std::int16_t qform_code = 0;
  std::int16_t sform_code = 0;
  float quatern_b = 0.0f, quatern_c = 0.0f, quatern_d = 0.0f;
  float qoffset_x = 0.0f, qoffset_y = 0.0f, qoffset_z = 0.0f;
  std::array<float, 4> srow_x{}, srow_y{}, srow_z{};
  std::array<char, 4> magic{};
  bool byte_swapped = false;
};

// Parses only the header (plain or gzip). Used when voxel data is not needed,
// e.g. when scanning a dataset for session geometry.
NiftiHeader read_nifti_header(const std::filesystem::path& path);

// Grid-to-world affine resolved from a header: sform when sform_code > 0, else
// qform, else diag(pixdim).
Affine4 header_affine(const NiftiHeader& hdr);

// Voxel spacing in mm: column norms of the resolved affine (pixdim on the
// diagonal fallback path).
Vec3 header_voxel_size(const NiftiHeader& hdr);

// Reads a single-file NIfTI-1 label map (.nii or .nii.gz, either endianness).
// Float-typed inputs must hold integral values after scl_slope/scl_inter.
LabelVolume read_label_volume(const std::filesystem::path& path);

// Writes a single-file NIfTI-1 volume, gzip-compressed when the path ends in
// .gz. Datatype is the smallest of uint8/int16/int32 that fits the max label.
void write_label_volume(const LabelVolume& volume, const std::filesystem::path& path);

}  // namespace segstab
