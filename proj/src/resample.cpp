#include "segstab/resample.hpp"

#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>
#include <vector>

#include "segstab/errors.hpp"

namespace segstab {

namespace {

void require_invertible(const Affine4& m, const std::string& what) {
  if (!m.has_homogeneous_last_row(1e-6)) {
    throw usage_error(what + ": last row must be (0,0,0,1)");
  }
  if (std::abs(m.det3()) <= 1e-12) {
    throw usage_error(what + ": singular matrix (|det| <= 1e-12)");
  }
}

AffineTransform parse_itk_affine(const std::string& text,
                                 const std::filesystem::path& path) {
  // Insight Transform File V1.0: Parameters are the row-major 3x3 matrix A
  // followed by the translation t; FixedParameters hold the center c. The
  // homogeneous form is [A | t + c - A*c].
  std::smatch m;
  static const std::regex transform_re(R"(Transform:\s*(\S+))");
  static const std::regex params_re(R"(Parameters:\s*([^\n\r]+))");
  static const std::regex fixed_re(R"(FixedParameters:\s*([^\n\r]+))");

  if (std::regex_search(text, m, transform_re)) {
    const std::string kind = m[1].str();
    static const std::regex kind_re(R"(.*_(double|float)_3_3$)");
    if (!std::regex_match(kind, kind_re)) {
      throw parse_error(path.string() + ": unsupported ITK transform type '" + kind + "'");
    }
  }

  auto parse_numbers = [&](const std::regex& re, const char* label) {
    std::smatch match;
    if (!std::regex_search(text, match, re)) {
      throw parse_error(path.string() + ": missing " + label + " line");
    }
    std::istringstream iss(match[1].str());
    std::vector<double> values;
    double v = 0.0;
    while (iss >> v) values.push_back(v);
    return values;
  };

  const std::vector<double> params = parse_numbers(params_re, "Parameters");
  if (params.size() != 12) {
    throw parse_error(path.string() + ": expected 12 affine parameters, got " +
                      std::to_string(params.size()));
  }
  const std::vector<double> fixed = parse_numbers(fixed_re, "FixedParameters");
  if (fixed.size() != 3) {
    throw parse_error(path.string() + ": expected 3 fixed parameters, got " +
                      std::to_string(fixed.size()));
  }

  Affine4 out = Affine4::identity();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      out.at(r, c) = params[static_cast<std::size_t>(r * 3 + c)];
    }
  }
  for (int r = 0; r < 3; ++r) {
    double ac = 0.0;
    for (int c = 0; c < 3; ++c) ac += out.at(r, c) * fixed[static_cast<std::size_t>(c)];
    out.at(r, 3) = params[9 + static_cast<std::size_t>(r)] +
                   fixed[static_cast<std::size_t>(r)] - ac;
  }

  AffineTransform t;
  t.matrix = out;
  t.source_tag = path.filename().string();
  return t;
}

}  // namespace

AffineTransform identity_transform() {
  AffineTransform t;
  t.matrix = Affine4::identity();
  t.source_tag = "identity";
  return t;
}

LabelVolume resample_labels(const LabelVolume& moving, const AffineTransform& transform,
                            const ReferenceGrid& reference) {
  require_invertible(transform.matrix, "transform '" + transform.source_tag + "'");
  require_invertible(moving.affine, "moving volume affine");
  require_invertible(reference.affine, "reference grid affine");

  // One composite map: reference index -> reference world -> moving world ->
  // moving index.
  const Affine4 to_moving_index =
      moving.affine.inverse() * transform.matrix * reference.affine;

  LabelVolume out;
  out.dims = reference.dims;
  out.spacing = reference.spacing;
  out.affine = reference.affine;
  out.labels.assign(out.voxel_count(), 0);

  std::size_t i = 0;
  for (int z = 0; z < out.dims[2]; ++z) {
    for (int y = 0; y < out.dims[1]; ++y) {
      for (int x = 0; x < out.dims[0]; ++x, ++i) {
        const Vec3 idx = to_moving_index.apply_point(
            {static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)});
        // std::round rounds half away from zero on every axis.
        const double fx = std::round(idx[0]);
        const double fy = std::round(idx[1]);
        const double fz = std::round(idx[2]);
        const int mx = static_cast<int>(fx);
        const int my = static_cast<int>(fy);
        const int mz = static_cast<int>(fz);
        if (moving.in_bounds(mx, my, mz)) {
          out.labels[i] = moving.at(mx, my, mz);
        }
      }
    }
  }
  return out;
}

AffineTransform read_affine_transform(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw parse_error(path.string() + ": cannot open transform file");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();

  AffineTransform t;
  if (text.find("Insight Transform File") != std::string::npos ||
      text.find("Transform:") != std::string::npos) {
    t = parse_itk_affine(text, path);
  } else {
    std::istringstream iss(text);
    std::vector<double> values;
    double v = 0.0;
    while (iss >> v) values.push_back(v);
    if (!iss.eof() && iss.fail()) {
      // trailing non-numeric content
      iss.clear();
      std::string tail;
      iss >> tail;
      if (!tail.empty()) {
        throw parse_error(path.string() + ": unexpected token '" + tail + "'");
      }
    }
    if (values.size() != 16) {
      throw parse_error(path.string() + ": expected a 4x4 matrix (16 values), got " +
                        std::to_string(values.size()));
    }
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) {
        t.matrix.at(r, c) = values[static_cast<std::size_t>(r * 4 + c)];
      }
    }
    t.source_tag = path.filename().string();
  }

  if (!t.matrix.has_homogeneous_last_row(1e-6)) {
    throw parse_error(path.string() + ": last row must be (0,0,0,1)");
  }
  if (std::abs(t.matrix.det3()) <= 1e-12) {
    throw usage_error(path.string() + ": singular transform matrix");
  }
  return t;
}

}  // namespace segstab
