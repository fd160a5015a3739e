#include "segstab/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"
#include "segstab/errors.hpp"
#include "segstab/nifti.hpp"
#include "segstab/oracle.hpp"
#include "segstab/rng.hpp"

namespace fs = std::filesystem;

namespace segstab {

namespace {

std::string session_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "ses-%02d", index + 1);
  return buf;
}

Date date_for_session(const SynthSpec& spec, int index) {
  // serial-day arithmetic back to a calendar date
  long serial = spec.start_date.serial_day() + static_cast<long>(index) * spec.interval_days;
  // civil_from_days (Hinnant)
  serial += 719468;
  const long era = (serial >= 0 ? serial : serial - 146096) / 146097;
  const auto doe = static_cast<unsigned long>(serial - era * 146097);
  const unsigned long yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const long y = static_cast<long>(yoe) + era * 400;
  const unsigned long doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned long mp = (5 * doy + 2) / 153;
  const unsigned long d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned long m = mp < 10 ? mp + 3 : mp - 9;
  return Date{static_cast<int>(y + (m <= 2)), static_cast<int>(m), static_cast<int>(d)};
}

struct BlobSite {
  std::int32_t label = 0;
  Vec3 center{};
  Vec3 radius{};
};

// Left blobs sit in the x < dims/2 half, right blobs in the other; ROIs are
// laid out on a y-z grid of cells.
std::vector<BlobSite> blob_sites(const SynthSpec& spec, const RoiRegistry& registry) {
  const std::size_t k = spec.rois.size();
  if (k == 0) throw usage_error("synth spec lists no ROIs");
  const int cells = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(k))));
  std::vector<BlobSite> sites;
  for (std::size_t i = 0; i < k; ++i) {
    const SynthRoi& roi = spec.rois[i];
    const RoiSpec& reg = registry.require(roi.name);
    if (reg.left_ids.empty() || reg.right_ids.empty()) {
      throw usage_error("ROI '" + roi.name + "' lacks ids on one side");
    }
    const int row = static_cast<int>(i) % cells;
    const int col = static_cast<int>(i) / cells;
    const double cy = (row + 0.5) * spec.dims[1] / static_cast<double>(cells);
    const double cz = (col + 0.5) * spec.dims[2] / static_cast<double>(cells);
    sites.push_back({reg.left_ids[0], {0.25 * spec.dims[0], cy, cz}, roi.radius_vox});
    sites.push_back({reg.right_ids[0], {0.75 * spec.dims[0], cy, cz}, roi.radius_vox});
  }
  return sites;
}

LabelVolume base_volume(const SynthSpec& spec, const RoiRegistry& registry) {
  LabelVolume vol;
  vol.dims = spec.dims;
  vol.spacing = spec.spacing;
  vol.affine = Affine4::scaling(spec.spacing);
  vol.labels.assign(vol.voxel_count(), 0);

  for (const BlobSite& site : blob_sites(spec, registry)) {
    const int x0 = std::max(0, static_cast<int>(std::floor(site.center[0] - site.radius[0])));
    const int x1 = std::min(spec.dims[0] - 1,
                            static_cast<int>(std::ceil(site.center[0] + site.radius[0])));
    const int y0 = std::max(0, static_cast<int>(std::floor(site.center[1] - site.radius[1])));
    const int y1 = std::min(spec.dims[1] - 1,
                            static_cast<int>(std::ceil(site.center[1] + site.radius[1])));
    const int z0 = std::max(0, static_cast<int>(std::floor(site.center[2] - site.radius[2])));
    const int z1 = std::min(spec.dims[2] - 1,
                            static_cast<int>(std::ceil(site.center[2] + site.radius[2])));
    for (int z = z0; z <= z1; ++z) {
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const double dx = (x - site.center[0]) / site.radius[0];
          const double dy = (y - site.center[1]) / site.radius[1];
          const double dz = (z - site.center[2]) / site.radius[2];
          if (dx * dx + dy * dy + dz * dz > 1.0) continue;
          std::int32_t& cell = vol.at(x, y, z);
          if (cell != 0 && cell != site.label) {
            throw usage_error("synth blobs overlap (labels " + std::to_string(cell) +
                              " and " + std::to_string(site.label) +
                              "); enlarge dims or shrink radii");
          }
          cell = site.label;
        }
      }
    }
  }
  return vol;
}

std::vector<Index3> label_voxels(const LabelVolume& vol, std::int32_t label) {
  std::vector<Index3> out;
  for (int z = 0; z < vol.dims[2]; ++z) {
    for (int y = 0; y < vol.dims[1]; ++y) {
      for (int x = 0; x < vol.dims[0]; ++x) {
        if (vol.at(x, y, z) == label) out.push_back({x, y, z});
      }
    }
  }
  return out;
}

BinaryMask mask_of_label(const LabelVolume& vol, std::int32_t label) {
  std::vector<std::uint8_t> occ(vol.voxel_count(), 0);
  for (std::size_t i = 0; i < vol.labels.size(); ++i) occ[i] = vol.labels[i] == label;
  return BinaryMask::from_occupancy(vol.dims, vol.spacing, std::move(occ));
}

std::vector<Index3> boundary_of_label(const LabelVolume& vol, std::int32_t label) {
  auto has = [&](int x, int y, int z) {
    return vol.in_bounds(x, y, z) && vol.at(x, y, z) == label;
  };
  std::vector<Index3> out;
  for (const Index3& v : label_voxels(vol, label)) {
    const int x = v[0], y = v[1], z = v[2];
    if (!has(x - 1, y, z) || !has(x + 1, y, z) || !has(x, y - 1, z) ||
        !has(x, y + 1, z) || !has(x, y, z - 1) || !has(x, y, z + 1)) {
      out.push_back(v);
    }
  }
  return out;
}

std::int32_t resolve_label(const RoiRegistry& registry, const SynthPerturbation& p) {
  const RoiSpec& spec = registry.require(p.roi_name);
  if (p.side == Side::both) {
    throw usage_error("synth perturbations target one side (left|right)");
  }
  const auto& ids = p.side == Side::left ? spec.left_ids : spec.right_ids;
  if (ids.empty()) throw usage_error("ROI '" + p.roi_name + "' has no ids for that side");
  return ids[0];
}

std::size_t apply_shift(LabelVolume& vol, std::int32_t label, const Index3& shift) {
  const std::vector<Index3> voxels = label_voxels(vol, label);
  for (const Index3& v : voxels) vol.at(v[0], v[1], v[2]) = 0;
  std::size_t changed = voxels.size();
  for (const Index3& v : voxels) {
    const int x = v[0] + shift[0], y = v[1] + shift[1], z = v[2] + shift[2];
    if (!vol.in_bounds(x, y, z)) continue;
    std::int32_t& cell = vol.at(x, y, z);
    if (cell == 0) {
      cell = label;
      ++changed;  // counts both removals and additions; net effect recorded
    }
  }
  return changed;
}

std::size_t apply_erode(LabelVolume& vol, std::int32_t label, int shells) {
  std::size_t changed = 0;
  for (int s = 0; s < shells; ++s) {
    const std::vector<Index3> boundary = boundary_of_label(vol, label);
    for (const Index3& v : boundary) vol.at(v[0], v[1], v[2]) = 0;
    changed += boundary.size();
  }
  return changed;
}

std::size_t apply_noise_flips(LabelVolume& vol, std::int32_t label, int flips, Rng& rng) {
  const std::vector<Index3> voxels = label_voxels(vol, label);
  if (voxels.empty()) throw usage_error("noise_flips: blob is empty");
  Index3 lo = voxels.front(), hi = voxels.front();
  for (const Index3& v : voxels) {
    for (std::size_t i = 0; i < 3; ++i) {
      lo[i] = std::min(lo[i], v[i]);
      hi[i] = std::max(hi[i], v[i]);
    }
  }
  std::size_t changed = 0;
  for (int f = 0; f < flips; ++f) {
    const int x = rng.uniform_int(std::max(0, lo[0] - 2), std::min(vol.dims[0] - 1, hi[0] + 2));
    const int y = rng.uniform_int(std::max(0, lo[1] - 2), std::min(vol.dims[1] - 1, hi[1] + 2));
    const int z = rng.uniform_int(std::max(0, lo[2] - 2), std::min(vol.dims[2] - 1, hi[2] + 2));
    std::int32_t& cell = vol.at(x, y, z);
    if (cell == label) {
      cell = 0;
      ++changed;
    } else if (cell == 0) {
      cell = label;
      ++changed;
    }
  }
  return changed;
}

// Digs voxel craters at random boundary points until the brute-force surface
// dice against the unperturbed blob drops under target_max.
std::size_t apply_erode_to_sdice(LabelVolume& vol, std::int32_t label,
                                 const BinaryMask& base_mask, const SynthPerturbation& p,
                                 Rng& rng, double& achieved) {
  constexpr int kMaxCraters = 4096;
  constexpr double kCraterRadius = 1.6;
  std::size_t changed = 0;
  achieved = 1.0;
  for (int iter = 0; iter < kMaxCraters; ++iter) {
    BinaryMask current = mask_of_label(vol, label);
    if (current.empty()) {
      throw internal_error("erode_to_surface_dice emptied the blob before reaching target");
    }
    achieved = oracle::surface_dice_reference(base_mask, current, p.tolerance_mm);
    if (achieved < p.target_max) {
      if (achieved < p.target_min) {
        throw internal_error("erode_to_surface_dice overshot the target band (sdice " +
                             std::to_string(achieved) + " < " + std::to_string(p.target_min) + ")");
      }
      return changed;
    }
    const std::vector<Index3> boundary = boundary_of_label(vol, label);
    if (boundary.empty()) throw internal_error("erode_to_surface_dice: no boundary left");
    const Index3 c = boundary[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int>(boundary.size()) - 1))];
    const int r = static_cast<int>(std::ceil(kCraterRadius));
    for (int dz = -r; dz <= r; ++dz) {
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          if (dx * dx + dy * dy + dz * dz > kCraterRadius * kCraterRadius) continue;
          const int x = c[0] + dx, y = c[1] + dy, z = c[2] + dz;
          if (!vol.in_bounds(x, y, z)) continue;
          std::int32_t& cell = vol.at(x, y, z);
          if (cell == label) {
            cell = 0;
            ++changed;
          }
        }
      }
    }
  }
  throw internal_error("erode_to_surface_dice did not converge");
}

template <typename T>
std::optional<T> cycled(const std::vector<T>& values, int index) {
  if (values.empty()) return std::nullopt;
  return values[static_cast<std::size_t>(index) % values.size()];
}

}  // namespace

const char* to_string(PerturbKind k) {
  switch (k) {
    case PerturbKind::shift: return "shift";
    case PerturbKind::erode_shells: return "erode_shells";
    case PerturbKind::noise_flips: return "noise_flips";
    default: return "erode_to_surface_dice";
  }
}

PerturbKind perturb_kind_from_string(const std::string& s) {
  if (s == "shift") return PerturbKind::shift;
  if (s == "erode_shells") return PerturbKind::erode_shells;
  if (s == "noise_flips") return PerturbKind::noise_flips;
  if (s == "erode_to_surface_dice") return PerturbKind::erode_to_surface_dice;
  throw usage_error("unknown perturbation kind '" + s + "'");
}

SynthSpec load_synth_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw parse_error(path.string() + ": cannot open synth spec");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(path.string() + ": invalid JSON: " + e.what());
  }

  SynthSpec spec;
  try {
    if (doc.contains("subject")) spec.subject = doc["subject"].get<std::string>();
    spec.sessions = doc.at("sessions").get<int>();
    if (doc.contains("dims")) {
      const auto d = doc["dims"].get<std::vector<int>>();
      if (d.size() != 3) throw parse_error(path.string() + ": dims must have 3 entries");
      spec.dims = {d[0], d[1], d[2]};
    }
    if (doc.contains("spacing")) {
      const auto s = doc["spacing"].get<std::vector<double>>();
      if (s.size() != 3) throw parse_error(path.string() + ": spacing must have 3 entries");
      spec.spacing = {s[0], s[1], s[2]};
    }
    if (doc.contains("start_date")) spec.start_date = parse_date(doc["start_date"].get<std::string>());
    if (doc.contains("interval_days")) spec.interval_days = doc["interval_days"].get<int>();
    if (doc.contains("scanner_tags")) spec.scanner_tags = doc["scanner_tags"].get<std::vector<std::string>>();
    if (doc.contains("site_tags")) spec.site_tags = doc["site_tags"].get<std::vector<std::string>>();
    if (doc.contains("echo_times_s")) spec.echo_times_s = doc["echo_times_s"].get<std::vector<double>>();
    if (doc.contains("repetition_times_s")) spec.repetition_times_s = doc["repetition_times_s"].get<std::vector<double>>();

    for (const auto& r : doc.at("rois")) {
      SynthRoi roi;
      roi.name = r.at("name").get<std::string>();
      if (r.contains("radius_vox")) {
        if (r["radius_vox"].is_number()) {
          const double v = r["radius_vox"].get<double>();
          roi.radius_vox = {v, v, v};
        } else {
          const auto v = r["radius_vox"].get<std::vector<double>>();
          if (v.size() != 3) throw parse_error(path.string() + ": radius_vox must have 3 entries");
          roi.radius_vox = {v[0], v[1], v[2]};
        }
      }
      spec.rois.push_back(std::move(roi));
    }

    if (doc.contains("perturbations")) {
      for (const auto& p : doc["perturbations"]) {
        SynthPerturbation pert;
        pert.session_id = p.at("session").get<std::string>();
        pert.roi_name = p.at("roi").get<std::string>();
        pert.side = side_from_string(p.at("side").get<std::string>());
        pert.kind = perturb_kind_from_string(p.at("kind").get<std::string>());
        if (p.contains("shift_vox")) {
          const auto s = p["shift_vox"].get<std::vector<int>>();
          if (s.size() != 3) throw parse_error(path.string() + ": shift_vox must have 3 entries");
          pert.shift_vox = {s[0], s[1], s[2]};
        }
        if (p.contains("shells")) pert.shells = p["shells"].get<int>();
        if (p.contains("flips")) pert.flips = p["flips"].get<int>();
        if (p.contains("target_max")) pert.target_max = p["target_max"].get<double>();
        if (p.contains("target_min")) pert.target_min = p["target_min"].get<double>();
        if (p.contains("tolerance_mm")) pert.tolerance_mm = p["tolerance_mm"].get<double>();
        spec.perturbations.push_back(std::move(pert));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(path.string() + ": bad synth spec: " + e.what());
  }

  if (spec.sessions < 1) throw parse_error(path.string() + ": sessions must be >= 1");
  return spec;
}

SynthOutput generate_synth_sessions(const SynthSpec& spec, const RoiRegistry& registry,
                                    std::uint64_t seed) {
  for (const SynthPerturbation& p : spec.perturbations) {
    registry.require(p.roi_name);  // unknown names fail before any work
    bool known_session = false;
    for (int i = 0; i < spec.sessions; ++i) {
      if (session_name(i) == p.session_id) known_session = true;
    }
    if (!known_session) {
      throw usage_error("perturbation references unknown session '" + p.session_id + "'");
    }
  }

  const LabelVolume base = base_volume(spec, registry);
  Rng root(seed);

  SynthOutput out;
  for (int i = 0; i < spec.sessions; ++i) {
    SessionMeta meta;
    meta.subject_id = spec.subject;
    meta.session_id = session_name(i);
    meta.acquisition_date = date_for_session(spec, i);
    meta.scanner_tag = cycled(spec.scanner_tags, i);
    meta.site_tag = cycled(spec.site_tags, i);
    if (auto te = cycled(spec.echo_times_s, i)) meta.echo_time_ms = *te * 1000.0;
    if (auto tr = cycled(spec.repetition_times_s, i)) meta.repetition_time_ms = *tr * 1000.0;
    meta.voxel_size_mm = spec.spacing;

    LabelVolume vol = base;
    std::size_t pert_index = 0;
    for (const SynthPerturbation& p : spec.perturbations) {
      ++pert_index;
      if (p.session_id != meta.session_id) continue;
      const std::int32_t label = resolve_label(registry, p);
      const BinaryMask base_mask = mask_of_label(base, label);
      Rng rng = root.derive(static_cast<std::uint64_t>(i) * 1000 + pert_index);

      PerturbationRecord rec;
      rec.perturbation = p;
      switch (p.kind) {
        case PerturbKind::shift:
          rec.voxels_changed = apply_shift(vol, label, p.shift_vox);
          break;
        case PerturbKind::erode_shells:
          rec.voxels_changed = apply_erode(vol, label, p.shells);
          break;
        case PerturbKind::noise_flips:
          rec.voxels_changed = apply_noise_flips(vol, label, p.flips, rng);
          break;
        case PerturbKind::erode_to_surface_dice:
          rec.voxels_changed =
              apply_erode_to_sdice(vol, label, base_mask, p, rng, rec.achieved_surface_dice);
          break;
      }
      if (p.kind != PerturbKind::erode_to_surface_dice) {
        const BinaryMask after = mask_of_label(vol, label);
        rec.achieved_surface_dice =
            after.empty() ? 0.0
                          : oracle::surface_dice_reference(base_mask, after, p.tolerance_mm);
      }
      out.applied.push_back(std::move(rec));
    }

    out.metas.push_back(std::move(meta));
    out.volumes.push_back(std::move(vol));
  }
  return out;
}

void write_synth_dataset(const SynthSpec& spec, const RoiRegistry& registry,
                         std::uint64_t seed, const std::filesystem::path& out_dir) {
  const SynthOutput output = generate_synth_sessions(spec, registry, seed);

  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < output.metas.size(); ++i) {
    const SessionMeta& meta = output.metas[i];
    const fs::path anat = out_dir / meta.subject_id / meta.session_id / "anat";
    fs::create_directories(anat);
    const std::string stem = meta.subject_id + "_" + meta.session_id + "_dseg";
    write_label_volume(output.volumes[i], anat / (stem + ".nii.gz"));

    nlohmann::json sidecar;
    sidecar["AcquisitionDateTime"] = meta.acquisition_date->iso() + "T00:00:00";
    if (meta.scanner_tag) sidecar["DeviceSerialNumber"] = *meta.scanner_tag;
    if (meta.site_tag) sidecar["InstitutionName"] = *meta.site_tag;
    if (meta.echo_time_ms) sidecar["EchoTime"] = *meta.echo_time_ms / 1000.0;
    if (meta.repetition_time_ms) sidecar["RepetitionTime"] = *meta.repetition_time_ms / 1000.0;
    std::ofstream side(anat / (stem + ".json"));
    side << sidecar.dump(2) << "\n";
    if (!side) throw usage_error((anat / (stem + ".json")).string() + ": write failed");
  }

  nlohmann::json manifest;
  manifest["seed"] = seed;
  manifest["subject"] = spec.subject;
  manifest["sessions"] = spec.sessions;
  manifest["dims"] = {spec.dims[0], spec.dims[1], spec.dims[2]};
  manifest["spacing"] = {spec.spacing[0], spec.spacing[1], spec.spacing[2]};
  nlohmann::json rois = nlohmann::json::array();
  for (const SynthRoi& r : spec.rois) {
    rois.push_back({{"name", r.name},
                    {"radius_vox", {r.radius_vox[0], r.radius_vox[1], r.radius_vox[2]}}});
  }
  manifest["rois"] = std::move(rois);
  nlohmann::json applied = nlohmann::json::array();
  for (const PerturbationRecord& rec : output.applied) {
    applied.push_back({{"session", rec.perturbation.session_id},
                       {"roi", rec.perturbation.roi_name},
                       {"side", to_string(rec.perturbation.side)},
                       {"kind", to_string(rec.perturbation.kind)},
                       {"voxels_changed", rec.voxels_changed},
                       {"achieved_surface_dice", rec.achieved_surface_dice}});
  }
  manifest["perturbations"] = std::move(applied);
  std::ofstream mf(out_dir / "manifest.json");
  mf << manifest.dump(2) << "\n";
  if (!mf) throw usage_error((out_dir / "manifest.json").string() + ": write failed");
}

}  // namespace segstab
