#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "segstab/stats.hpp"
#include "segstab/synth.hpp"

namespace segstab {

// CLI exit codes: 0 success, 2 usage/geometry error, 3 input parse error,
// 4 internal invariant violation.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitParse = 3;
inline constexpr int kExitInternal = 4;

// Worker-cap override; takes precedence over config/flag job counts.
inline constexpr const char* kJobsEnvVar = "SEGSTAB_JOBS";

// Surface Dice 0.92 / 0.90 and Dice 0.80, subcortical scope.
std::vector<FilterRule> default_filter_rules();

struct RunConfig {
  std::filesystem::path dataset_root;
  DatasetLayout layout = DatasetLayout::bids_like;
  PairPolicy policy = PairPolicy::consecutive;
  std::optional<std::filesystem::path> registry_path;
  double tolerance_mm = 1.0;
  std::vector<Side> sides = {Side::left, Side::right};
  std::vector<FilterRule> filter_rules = default_filter_rules();
  std::optional<ResampleOptions> resample;
  std::filesystem::path output_dir;
  int jobs = 0;
  std::uint64_t seed = 0;
  CiBand ci_band = CiBand::mean;

  friend bool operator==(const RunConfig&, const RunConfig&);
};

bool operator==(const FilterRule&, const FilterRule&);
bool operator==(const ResampleOptions&, const ResampleOptions&);

RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& config);
RunConfig run_config_from_json(const std::string& text, const std::string& origin);
void save_run_config(const RunConfig& config, const std::filesystem::path& path);

struct CompareOptions {
  std::filesystem::path volume_a;
  std::filesystem::path volume_b;
  std::optional<std::filesystem::path> registry_path;
  double tolerance_mm = 1.0;
  std::optional<std::filesystem::path> json_out;
  // world(b) <- world(a) transform; volume_b is resampled onto volume_a's grid
  std::optional<std::filesystem::path> transform_path;
};

// Prints one row per (ROI, side) to `out`; optionally writes the JSON form.
void run_compare(const CompareOptions& options, std::ostream& out);

// Full pipeline: scan -> plan -> evaluate -> filter -> stats. Writes
// records.csv, summary.json, trend.csv, filter_report.json atomically into
// config.output_dir; identical inputs and config give byte-identical outputs.
void run_batch(const RunConfig& config);

struct SynthCliOptions {
  std::filesystem::path spec_path;
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> registry_path;
};

void run_synth(const SynthCliOptions& options);

struct SelftestOptions {
  std::uint64_t seed = 20240901;
  int cases = 25;
  // when set, checks summary.json totals against records.csv in that dir
  std::optional<std::filesystem::path> batch_dir;
};

// Runs the brute-force oracles against the optimized kernels on seeded random
// instances; prints one line per check. Returns false on any disagreement.
bool run_selftest(const SelftestOptions& options, std::ostream& out);

}  // namespace segstab
