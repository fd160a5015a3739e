#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "segstab/metrics.hpp"
#include "segstab/resample.hpp"
#include "segstab/roi.hpp"

namespace segstab {

// Proleptic-Gregorian calendar date; arithmetic via a serial day number.
struct Date {
  int year = 1970;
  int month = 1;
  int day = 1;

  // days since 1970-01-01 (negative before)
  long serial_day() const;
  std::string iso() const;

  friend bool operator==(const Date&, const Date&) = default;
  friend auto operator<=>(const Date& a, const Date& b) {
    return a.serial_day() <=> b.serial_day();
  }
};

// Parses strict ISO-8601 YYYY-MM-DD (a leading datetime's date part is
// accepted: "2020-01-02T10:00:00" -> 2020-01-02).
Date parse_date(const std::string& text);

struct SessionMeta {
  std::string subject_id;
  std::string session_id;
  std::optional<Date> acquisition_date;
  std::optional<std::string> site_tag;
  std::optional<std::string> scanner_tag;
  std::optional<double> echo_time_ms;
  std::optional<double> repetition_time_ms;
  std::optional<Vec3> voxel_size_mm;
};

struct DatasetSession {
  SessionMeta meta;
  std::filesystem::path volume_path;
};

enum class DatasetLayout { bids_like, flat_pairs };
enum class PairPolicy { consecutive, first_reference, all_pairs };
enum class GroupTag { within_scanner, cross_scanner, unknown };

const char* to_string(DatasetLayout l);
const char* to_string(PairPolicy p);
const char* to_string(GroupTag g);
DatasetLayout layout_from_string(const std::string& s);
PairPolicy policy_from_string(const std::string& s);

// Discovers sessions under root. bids_like expects
// sub-*/ses-*/anat/*_dseg.nii[.gz] with optional sidecar JSON; flat_pairs
// expects *.nii[.gz] files named sub-<s>_ses-<x>*. Throws usage_error when no
// session is found or a (subject, session) key repeats.
std::vector<DatasetSession> scan_dataset(const std::filesystem::path& root,
                                         DatasetLayout layout);

struct PlannedPair {
  DatasetSession a;
  DatasetSession b;
};

struct ComparisonPlan {
  PairPolicy policy = PairPolicy::consecutive;
  std::vector<PlannedPair> pairs;
};

// Pairs sessions per policy. Per subject, sessions are ordered by
// (acquisition date, session id); when any date is missing the subject falls
// back to lexicographic session-id order.
ComparisonPlan build_plan(const std::vector<DatasetSession>& sessions, PairPolicy policy);

struct MetricRecord {
  std::string subject_id;
  std::string session_a;
  std::string session_b;
  std::string roi_name;
  RoiClass roi_class = RoiClass::subcortical;
  Side side = Side::left;
  PairMetrics metrics;
  GroupTag group_tag = GroupTag::unknown;
};

struct ResampleOptions {
  enum class Reference { first_session, atlas };
  Reference reference = Reference::first_session;
  std::filesystem::path atlas_path;  // used when reference == atlas
  // Directory of per-session transform files named
  // <subject>_<session>_xfm.txt; a missing file means identity.
  std::optional<std::filesystem::path> transform_dir;
};

// Native vs post-resampling ROI volume, reported so interpolation effects can
// be bounded by the user.
struct ResampleDelta {
  std::string subject_id;
  std::string session_id;
  std::string roi_name;
  Side side = Side::left;
  double native_cm3 = 0.0;
  double resampled_cm3 = 0.0;
};

struct EvaluateOptions {
  double tolerance_mm = 1.0;
  std::vector<Side> sides = {Side::left, Side::right};
  int jobs = 0;  // 0 = hardware concurrency
  std::optional<ResampleOptions> resample;
};

struct EvaluationResult {
  std::vector<MetricRecord> records;
  std::vector<ResampleDelta> resample_deltas;
};

// One record per (pair, ROI, side) in deterministic order
// (plan x registry x sides), regardless of worker count. Grid mismatch
// without resample options is an error naming the offending files.
EvaluationResult evaluate_plan(const ComparisonPlan& plan, const RoiRegistry& registry,
                               const EvaluateOptions& options);

struct ParamSummary {
  std::optional<double> min;
  std::optional<double> max;
  std::size_t n_unique = 0;
  std::size_t n_present = 0;
};

struct AcquisitionSummary {
  ParamSummary retest_gap_days;  // consecutive-by-date gaps, pooled per subject
  ParamSummary echo_time_ms;
  ParamSummary repetition_time_ms;
  ParamSummary voxel_x_mm;
  ParamSummary voxel_y_mm;
  ParamSummary voxel_z_mm;
};

// Missing metadata is reported as absent, never as zero.
AcquisitionSummary summarize_acquisition(const std::vector<DatasetSession>& sessions);

}  // namespace segstab
