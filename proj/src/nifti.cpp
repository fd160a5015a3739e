#include "segstab/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>

#include "segstab/errors.hpp"

namespace segstab {

namespace {

constexpr std::size_t kHeaderBytes = 348;
constexpr std::size_t kMinVoxOffset = 352;

// NIfTI-1 datatype codes.
enum : std::int16_t {
  DT_UINT8 = 2,
  DT_INT16 = 4,
  DT_INT32 = 8,
  DT_FLOAT32 = 16,
  DT_FLOAT64 = 64,
  DT_UINT16 = 512,
};

std::uint16_t bswap16(std::uint16_t v) { return static_cast<std::uint16_t>((v >> 8) | (v << 8)); }

std::uint32_t bswap32(std::uint32_t v) {
  return ((v & 0xff000000u) >> 24) | ((v & 0x00ff0000u) >> 8) |
         ((v & 0x0000ff00u) << 8) | ((v & 0x000000ffu) << 24);
}

std::uint64_t bswap64(std::uint64_t v) {
  return (static_cast<std::uint64_t>(bswap32(static_cast<std::uint32_t>(v))) << 32) |
         bswap32(static_cast<std::uint32_t>(v >> 32));
}

template <typename T>
T load_at(const unsigned char* buf, std::size_t offset, bool swap) {
  static_assert(sizeof(T) == 1 || sizeof(T) == 2 || sizeof(T) == 4 || sizeof(T) == 8);
  T value;
  std::memcpy(&value, buf + offset, sizeof(T));
  if (swap && sizeof(T) > 1) {
    if constexpr (sizeof(T) == 2) {
      std::uint16_t u;
      std::memcpy(&u, &value, 2);
      u = bswap16(u);
      std::memcpy(&value, &u, 2);
    } else if constexpr (sizeof(T) == 4) {
      std::uint32_t u;
      std::memcpy(&u, &value, 4);
      u = bswap32(u);
      std::memcpy(&value, &u, 4);
    } else {
      std::uint64_t u;
      std::memcpy(&u, &value, 8);
      u = bswap64(u);
      std::memcpy(&value, &u, 8);
    }
  }
  return value;
}

// gzread also reads plain (uncompressed) files transparently, so one input
// path covers .nii and .nii.gz.
class GzInput {
public:
  explicit GzInput(const std::filesystem::path& path) : path_(path.string()) {
    file_ = gzopen(path_.c_str(), "rb");
  }
  ~GzInput() {
    if (file_ != nullptr) gzclose(file_);
  }
  GzInput(const GzInput&) = delete;
  GzInput& operator=(const GzInput&) = delete;

  bool ok() const { return file_ != nullptr; }

  bool read_exact(void* dst, std::size_t n) {
    auto* out = static_cast<unsigned char*>(dst);
    while (n > 0) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 24));
      const int got = gzread(file_, out, chunk);
      if (got <= 0) return false;
      out += got;
      n -= static_cast<std::size_t>(got);
    }
    return true;
  }

  bool skip(std::size_t n) {
    unsigned char scratch[4096];
    while (n > 0) {
      const std::size_t chunk = std::min<std::size_t>(n, sizeof(scratch));
      if (!read_exact(scratch, chunk)) return false;
      n -= chunk;
    }
    return true;
  }

private:
  std::string path_;
  gzFile file_ = nullptr;
};

[[noreturn]] void fail_parse(const std::filesystem::path& path, const std::string& what) {
  throw parse_error(path.string() + ": " + what);
}

NiftiHeader parse_header(const unsigned char* buf, const std::filesystem::path& path) {
  NiftiHeader hdr;
  std::memcpy(hdr.magic.data(), buf + 344, 4);
  if (std::memcmp(hdr.magic.data(), "ni1", 4) == 0) {
    fail_parse(path, "paired NIfTI unsupported (magic \"ni1\"); use single-file \"n+1\"");
  }
  if (std::memcmp(hdr.magic.data(), "n+1", 4) != 0) {
    fail_parse(path, "not a NIfTI-1 file (bad magic)");
  }

  // Byte order is detected from dim[0], which must lie in 1..7 when read with
  // the file's native order.
  const std::int16_t dim0_raw = load_at<std::int16_t>(buf, 40, false);
  bool swap = false;
  if (dim0_raw >= 1 && dim0_raw <= 7) {
    swap = false;
  } else {
    const std::int16_t dim0_sw = load_at<std::int16_t>(buf, 40, true);
    if (dim0_sw >= 1 && dim0_sw <= 7) {
      swap = true;
    } else {
      fail_parse(path, "malformed header (dim[0] implausible in either byte order)");
    }
  }
  hdr.byte_swapped = swap;

  hdr.sizeof_hdr = load_at<std::int32_t>(buf, 0, swap);
  if (hdr.sizeof_hdr != 348) fail_parse(path, "malformed header (sizeof_hdr != 348)");

  for (std::size_t i = 0; i < 8; ++i) {
    hdr.dim[i] = load_at<std::int16_t>(buf, 40 + 2 * i, swap);
    hdr.pixdim[i] = load_at<float>(buf, 76 + 4 * i, swap);
  }
  hdr.datatype = load_at<std::int16_t>(buf, 70, swap);
  hdr.bitpix = load_at<std::int16_t>(buf, 72, swap);
  hdr.vox_offset = load_at<float>(buf, 108, swap);
  hdr.scl_slope = load_at<float>(buf, 112, swap);
  hdr.scl_inter = load_at<float>(buf, 116, swap);
  hdr.qform_code = load_at<std::int16_t>(buf, 252, swap);
  hdr.sform_code = load_at<std::int16_t>(buf, 254, swap);
  hdr.quatern_b = load_at<float>(buf, 256, swap);
  hdr.quatern_c = load_at<float>(buf, 260, swap);
  hdr.quatern_d = load_at<float>(buf, 264, swap);
  hdr.qoffset_x = load_at<float>(buf, 268, swap);
  hdr.qoffset_y = load_at<float>(buf, 272, swap);
  hdr.qoffset_z = load_at<float>(buf, 276, swap);
  for (std::size_t i = 0; i < 4; ++i) {
    hdr.srow_x[i] = load_at<float>(buf, 280 + 4 * i, swap);
    hdr.srow_y[i] = load_at<float>(buf, 296 + 4 * i, swap);
    hdr.srow_z[i] = load_at<float>(buf, 312 + 4 * i, swap);
  }
  return hdr;
}

int bytes_per_voxel(std::int16_t datatype) {
  switch (datatype) {
    case DT_UINT8: return 1;
    case DT_INT16: return 2;
    case DT_UINT16: return 2;
    case DT_INT32: return 4;
    case DT_FLOAT32: return 4;
    case DT_FLOAT64: return 8;
    default: return 0;
  }
}

void check_dims(const NiftiHeader& hdr, const std::filesystem::path& path) {
  if (hdr.dim[0] != 3 && hdr.dim[0] != 4) {
    fail_parse(path, "only 3-D label volumes supported (dim[0] = " +
                         std::to_string(hdr.dim[0]) + ")");
  }
  if (hdr.dim[0] == 4 && hdr.dim[4] != 1) {
    fail_parse(path, "4th dimension must be singleton (dim[4] = " +
                         std::to_string(hdr.dim[4]) + ")");
  }
  for (int i = 1; i <= 3; ++i) {
    if (hdr.dim[static_cast<std::size_t>(i)] < 1) {
      fail_parse(path, "malformed header (dim[" + std::to_string(i) + "] < 1)");
    }
  }
}

Affine4 quaternion_affine(const NiftiHeader& hdr) {
  const double b = hdr.quatern_b;
  const double c = hdr.quatern_c;
  const double d = hdr.quatern_d;
  const double a = std::sqrt(std::max(0.0, 1.0 - b * b - c * c - d * d));
  const double qfac = hdr.pixdim[0] < 0.0f ? -1.0 : 1.0;
  const double sx = hdr.pixdim[1];
  const double sy = hdr.pixdim[2];
  const double sz = hdr.pixdim[3];

  Affine4 m = Affine4::identity();
  m.at(0, 0) = (a * a + b * b - c * c - d * d) * sx;
  m.at(1, 0) = 2.0 * (b * c + a * d) * sx;
  m.at(2, 0) = 2.0 * (b * d - a * c) * sx;
  m.at(0, 1) = 2.0 * (b * c - a * d) * sy;
  m.at(1, 1) = (a * a + c * c - b * b - d * d) * sy;
  m.at(2, 1) = 2.0 * (c * d + a * b) * sy;
  m.at(0, 2) = 2.0 * (b * d + a * c) * sz * qfac;
  m.at(1, 2) = 2.0 * (c * d - a * b) * sz * qfac;
  m.at(2, 2) = (a * a + d * d - b * b - c * c) * sz * qfac;
  m.at(0, 3) = hdr.qoffset_x;
  m.at(1, 3) = hdr.qoffset_y;
  m.at(2, 3) = hdr.qoffset_z;
  return m;
}

// Decodes raw voxel bytes to int32 labels, applying scl scaling (when set)
// before the integrality check.
std::vector<std::int32_t> decode_labels(const unsigned char* data, std::size_t n,
                                        const NiftiHeader& hdr,
                                        const std::filesystem::path& path) {
  const bool swap = hdr.byte_swapped;
  const bool scale = hdr.scl_slope != 0.0f &&
                     !(hdr.scl_slope == 1.0f && hdr.scl_inter == 0.0f);
  const double slope = hdr.scl_slope;
  const double inter = hdr.scl_inter;

  std::vector<std::int32_t> out(n);

  auto store_real = [&](std::size_t i, double v) {
    const double scaled = scale ? v * slope + inter : v;
    const double rounded = std::nearbyint(scaled);
    if (std::abs(scaled - rounded) > 1e-6 || !std::isfinite(scaled)) {
      fail_parse(path, "non-integral label value " + std::to_string(scaled) +
                           " at voxel " + std::to_string(i));
    }
    if (rounded < 0.0) {
      fail_parse(path, "negative label value " + std::to_string(rounded) +
                           " at voxel " + std::to_string(i));
    }
    if (rounded > static_cast<double>(std::numeric_limits<std::int32_t>::max())) {
      fail_parse(path, "label value exceeds int32 range at voxel " + std::to_string(i));
    }
    out[i] = static_cast<std::int32_t>(rounded);
  };

  auto store_int = [&](std::size_t i, std::int64_t v) {
    if (scale) {
      store_real(i, static_cast<double>(v));
      return;
    }
    if (v < 0) {
      fail_parse(path, "negative label value " + std::to_string(v) + " at voxel " +
                           std::to_string(i));
    }
    out[i] = static_cast<std::int32_t>(v);
  };

  switch (hdr.datatype) {
    case DT_UINT8:
      for (std::size_t i = 0; i < n; ++i) store_int(i, data[i]);
      break;
    case DT_INT16:
      for (std::size_t i = 0; i < n; ++i)
        store_int(i, load_at<std::int16_t>(data, 2 * i, swap));
      break;
    case DT_UINT16:
      for (std::size_t i = 0; i < n; ++i)
        store_int(i, load_at<std::uint16_t>(data, 2 * i, swap));
      break;
    case DT_INT32:
      for (std::size_t i = 0; i < n; ++i)
        store_int(i, load_at<std::int32_t>(data, 4 * i, swap));
      break;
    case DT_FLOAT32:
      for (std::size_t i = 0; i < n; ++i)
        store_real(i, load_at<float>(data, 4 * i, swap));
      break;
    case DT_FLOAT64:
      for (std::size_t i = 0; i < n; ++i)
        store_real(i, load_at<double>(data, 8 * i, swap));
      break;
    default:
      fail_parse(path, "unsupported datatype code " + std::to_string(hdr.datatype));
  }
  return out;
}

template <typename T>
void store_le(std::vector<unsigned char>& buf, std::size_t offset, T value) {
  static_assert(std::endian::native == std::endian::little,
                "writer assumes a little-endian host");
  std::memcpy(buf.data() + offset, &value, sizeof(T));
}

}  // namespace

void LabelVolume::validate() const {
  for (int i = 0; i < 3; ++i) {
    if (dims[static_cast<std::size_t>(i)] <= 0) {
      throw usage_error("LabelVolume: dims must be positive");
    }
    if (!(spacing[static_cast<std::size_t>(i)] > 0.0)) {
      throw usage_error("LabelVolume: spacing must be positive");
    }
  }
  if (labels.size() != voxel_count()) {
    throw usage_error("LabelVolume: label count " + std::to_string(labels.size()) +
                      " does not match dims product " + std::to_string(voxel_count()));
  }
  if (!affine.has_homogeneous_last_row()) {
    throw usage_error("LabelVolume: affine last row must be (0,0,0,1)");
  }
  const Vec3 norms = affine.column_norms();
  for (std::size_t i = 0; i < 3; ++i) {
    if (std::abs(norms[i] - spacing[i]) > 1e-4) {
      throw usage_error("LabelVolume: affine column norm " + std::to_string(norms[i]) +
                        " disagrees with spacing " + std::to_string(spacing[i]));
    }
  }
  for (const std::int32_t v : labels) {
    if (v < 0) throw usage_error("LabelVolume: labels must be non-negative");
  }
}

NiftiHeader read_nifti_header(const std::filesystem::path& path) {
  GzInput in(path);
  if (!in.ok()) fail_parse(path, "cannot open file");
  unsigned char buf[kHeaderBytes];
  if (!in.read_exact(buf, kHeaderBytes)) fail_parse(path, "truncated header");
  NiftiHeader hdr = parse_header(buf, path);
  check_dims(hdr, path);
  return hdr;
}

Affine4 header_affine(const NiftiHeader& hdr) {
  if (hdr.sform_code > 0) {
    Affine4 m = Affine4::identity();
    for (int c = 0; c < 4; ++c) {
      m.at(0, c) = hdr.srow_x[static_cast<std::size_t>(c)];
      m.at(1, c) = hdr.srow_y[static_cast<std::size_t>(c)];
      m.at(2, c) = hdr.srow_z[static_cast<std::size_t>(c)];
    }
    return m;
  }
  if (hdr.qform_code > 0) return quaternion_affine(hdr);
  return Affine4::scaling({hdr.pixdim[1], hdr.pixdim[2], hdr.pixdim[3]});
}

Vec3 header_voxel_size(const NiftiHeader& hdr) {
  if (hdr.sform_code > 0 || hdr.qform_code > 0) {
    return header_affine(hdr).column_norms();
  }
  return {hdr.pixdim[1], hdr.pixdim[2], hdr.pixdim[3]};
}

LabelVolume read_label_volume(const std::filesystem::path& path) {
  GzInput in(path);
  if (!in.ok()) fail_parse(path, "cannot open file");

  unsigned char buf[kHeaderBytes];
  if (!in.read_exact(buf, kHeaderBytes)) fail_parse(path, "truncated header");
  const NiftiHeader hdr = parse_header(buf, path);
  check_dims(hdr, path);

  const int vox_bytes = bytes_per_voxel(hdr.datatype);
  if (vox_bytes == 0) {
    fail_parse(path, "unsupported datatype code " + std::to_string(hdr.datatype));
  }
  if (hdr.bitpix != vox_bytes * 8) {
    fail_parse(path, "malformed header (bitpix " + std::to_string(hdr.bitpix) +
                         " inconsistent with datatype)");
  }
  const double off = hdr.vox_offset;
  if (!(off >= static_cast<double>(kMinVoxOffset)) || off != std::floor(off)) {
    fail_parse(path, "malformed header (vox_offset must be an integer >= 352)");
  }
  if (!in.skip(static_cast<std::size_t>(off) - kHeaderBytes)) {
    fail_parse(path, "truncated file (shorter than vox_offset)");
  }

  LabelVolume vol;
  vol.dims = {hdr.dim[1], hdr.dim[2], hdr.dim[3]};
  const std::size_t n = vol.voxel_count();

  // Exactly vox_offset + n*vox_bytes bytes are consumed; trailing bytes are
  // never touched.
  std::vector<unsigned char> raw(n * static_cast<std::size_t>(vox_bytes));
  if (!in.read_exact(raw.data(), raw.size())) {
    fail_parse(path, "truncated data (expected " + std::to_string(raw.size()) +
                         " bytes at offset " + std::to_string(static_cast<long>(off)) + ")");
  }
  vol.labels = decode_labels(raw.data(), n, hdr, path);

  vol.affine = header_affine(hdr);
  if (!vol.affine.has_homogeneous_last_row()) {
    fail_parse(path, "malformed affine (last row not (0,0,0,1))");
  }
  vol.spacing = header_voxel_size(hdr);
  for (std::size_t i = 0; i < 3; ++i) {
    if (!(vol.spacing[i] > 0.0) || !std::isfinite(vol.spacing[i])) {
      fail_parse(path, "degenerate voxel spacing along axis " + std::to_string(i));
    }
  }

  try {
    vol.validate();
  } catch (const usage_error& e) {
    fail_parse(path, std::string("inconsistent geometry: ") + e.what());
  }
  return vol;
}

void write_label_volume(const LabelVolume& volume, const std::filesystem::path& path) {
  volume.validate();

  std::int32_t max_label = 0;
  for (const std::int32_t v : volume.labels) max_label = std::max(max_label, v);

  std::int16_t datatype;
  std::int16_t bitpix;
  if (max_label <= 255) {
    datatype = DT_UINT8;
    bitpix = 8;
  } else if (max_label <= 32767) {
    datatype = DT_INT16;
    bitpix = 16;
  } else {
    datatype = DT_INT32;
    bitpix = 32;
  }

  std::vector<unsigned char> hdr(kHeaderBytes, 0);
  store_le<std::int32_t>(hdr, 0, 348);
  store_le<std::int16_t>(hdr, 40, 3);  // dim[0]
  for (int i = 0; i < 3; ++i) {
    store_le<std::int16_t>(hdr, 42 + 2 * static_cast<std::size_t>(i),
                           static_cast<std::int16_t>(volume.dims[static_cast<std::size_t>(i)]));
  }
  for (std::size_t i = 4; i < 8; ++i) store_le<std::int16_t>(hdr, 40 + 2 * i, 1);
  store_le<std::int16_t>(hdr, 70, datatype);
  store_le<std::int16_t>(hdr, 72, bitpix);
  store_le<float>(hdr, 76, 1.0f);  // pixdim[0] (qfac, unused: qform_code = 0)
  for (std::size_t i = 0; i < 3; ++i) {
    store_le<float>(hdr, 80 + 4 * i, static_cast<float>(volume.spacing[i]));
  }
  store_le<float>(hdr, 108, 352.0f);  // vox_offset
  store_le<float>(hdr, 112, 1.0f);    // scl_slope
  store_le<float>(hdr, 116, 0.0f);    // scl_inter
  hdr[123] = 2;                       // xyzt_units: NIFTI_UNITS_MM
  store_le<std::int16_t>(hdr, 252, 0);  // qform_code
  store_le<std::int16_t>(hdr, 254, 1);  // sform_code: scanner anat
  for (std::size_t c = 0; c < 4; ++c) {
    store_le<float>(hdr, 280 + 4 * c, static_cast<float>(volume.affine.at(0, static_cast<int>(c))));
    store_le<float>(hdr, 296 + 4 * c, static_cast<float>(volume.affine.at(1, static_cast<int>(c))));
    store_le<float>(hdr, 312 + 4 * c, static_cast<float>(volume.affine.at(2, static_cast<int>(c))));
  }
  std::memcpy(hdr.data() + 344, "n+1", 4);

  const std::size_t n = volume.voxel_count();
  std::vector<unsigned char> data(n * static_cast<std::size_t>(bitpix / 8));
  switch (datatype) {
    case DT_UINT8:
      for (std::size_t i = 0; i < n; ++i)
        data[i] = static_cast<unsigned char>(volume.labels[i]);
      break;
    case DT_INT16:
      for (std::size_t i = 0; i < n; ++i)
        store_le<std::int16_t>(data, 2 * i, static_cast<std::int16_t>(volume.labels[i]));
      break;
    default:
      for (std::size_t i = 0; i < n; ++i)
        store_le<std::int32_t>(data, 4 * i, volume.labels[i]);
      break;
  }

  const unsigned char extender[4] = {0, 0, 0, 0};
  const std::string path_str = path.string();
  const bool gz = path_str.size() >= 3 && path_str.compare(path_str.size() - 3, 3, ".gz") == 0;

  if (gz) {
    gzFile f = gzopen(path_str.c_str(), "wb");
    if (f == nullptr) throw usage_error(path_str + ": cannot open for writing");
    const bool ok =
        gzwrite(f, hdr.data(), static_cast<unsigned>(hdr.size())) ==
            static_cast<int>(hdr.size()) &&
        gzwrite(f, extender, 4) == 4 &&
        (data.empty() ||
         gzwrite(f, data.data(), static_cast<unsigned>(data.size())) ==
             static_cast<int>(data.size()));
    const bool closed = gzclose(f) == Z_OK;
    if (!ok || !closed) throw usage_error(path_str + ": write failed");
  } else {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw usage_error(path_str + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(hdr.data()), static_cast<std::streamsize>(hdr.size()));
    out.write(reinterpret_cast<const char*>(extender), 4);
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    out.flush();
    if (!out) throw usage_error(path_str + ": write failed");
  }
}

}  // namespace segstab
