#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "segstab/harness.hpp"
#include "segstab/roi.hpp"

namespace segstab {

// Ellipsoidal stand-in structure for one bilateral ROI; left/right blobs are
// written with the ROI's first left/right atlas id.
struct SynthRoi {
  std::string name;
  Vec3 radius_vox{4.0, 4.0, 4.0};
};

enum class PerturbKind { shift, erode_shells, noise_flips, erode_to_surface_dice };
const char* to_string(PerturbKind k);
PerturbKind perturb_kind_from_string(const std::string& s);

struct SynthPerturbation {
  std::string session_id;
  std::string roi_name;
  Side side = Side::left;
  PerturbKind kind = PerturbKind::shift;
  Index3 shift_vox{1, 0, 0};     // shift
  int shells = 1;                // erode_shells
  int flips = 0;                 // noise_flips
  double target_max = 0.92;      // erode_to_surface_dice: stop when sdice < max
  double target_min = 0.80;      // abort below this floor
  double tolerance_mm = 1.0;
};

struct SynthSpec {
  std::string subject = "sub-01";
  int sessions = 2;
  Index3 dims{48, 48, 48};
  Vec3 spacing{1.0, 1.0, 1.0};
  Date start_date{2020, 1, 1};
  int interval_days = 30;
  std::vector<std::string> scanner_tags;  // cycled across sessions; empty = untagged
  std::vector<std::string> site_tags;
  std::vector<double> echo_times_s;       // cycled; empty = absent
  std::vector<double> repetition_times_s;
  std::vector<SynthRoi> rois;
  std::vector<SynthPerturbation> perturbations;
};

SynthSpec load_synth_spec(const std::filesystem::path& path);

// Injected ground truth: what was perturbed and the brute-force-checked
// surface dice of the perturbed blob against the unperturbed base.
struct PerturbationRecord {
  SynthPerturbation perturbation;
  double achieved_surface_dice = 1.0;
  std::size_t voxels_changed = 0;
};

struct SynthOutput {
  std::vector<SessionMeta> metas;
  std::vector<LabelVolume> volumes;
  std::vector<PerturbationRecord> applied;
};

// Deterministic for (spec, seed). ROI names must exist in the registry; blob
// placement is validated to be collision-free.
SynthOutput generate_synth_sessions(const SynthSpec& spec, const RoiRegistry& registry,
                                    std::uint64_t seed);

// Writes the BIDS-like tree (sub-*/ses-*/anat/*_dseg.nii.gz + sidecars) and a
// manifest.json of injected perturbations under out_dir.
void write_synth_dataset(const SynthSpec& spec, const RoiRegistry& registry,
                         std::uint64_t seed, const std::filesystem::path& out_dir);

}  // namespace segstab
