#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "segstab/harness.hpp"

namespace segstab {

enum class FilterMetric { dice, surface_dice };
const char* to_string(FilterMetric m);
FilterMetric filter_metric_from_string(const std::string& s);

enum class FilterScope { cortical, subcortical, all };
const char* to_string(FilterScope s);
FilterScope filter_scope_from_string(const std::string& s);

struct FilterRule {
  FilterMetric metric = FilterMetric::surface_dice;
  double threshold = 0.92;  // must lie in (0,1)
  FilterScope scope = FilterScope::all;
};

// Counts cover judged (in-scope) records only; MAPE percentiles are computed
// over retained judged records, with session_a volume as reference.
struct FilterReport {
  FilterRule rule;
  std::size_t structures_total = 0;
  std::size_t structures_removed = 0;
  std::size_t undefined_removed = 0;
  double percent_filtered = 0.0;
  std::optional<double> mape_p75;
  std::optional<double> mape_p95;
};

struct FilterOutcome {
  std::vector<MetricRecord> retained;
  std::vector<MetricRecord> removed;
  FilterReport report;
};

// Removes judged records whose metric is undefined or below the threshold.
// Out-of-scope records pass through untouched and uncounted.
FilterOutcome apply_filter(const std::vector<MetricRecord>& records, const FilterRule& rule);

// Eq-style mean absolute percentage error over records: mean of
// 100*|V_b - V_a|/V_a with the session_a volume as reference.
// Throws usage_error on an empty set or a zero reference volume.
double volume_mape(const std::vector<MetricRecord>& records);

// Per-record absolute percentage error, same reference convention.
double record_ape_percent(const MetricRecord& record);

struct GroupStats {
  std::size_t n = 0;
  bool sufficient = false;  // needs >= 2 observations
  std::optional<double> mean;
  std::optional<double> sd;  // sample SD, n-1 denominator
  std::optional<double> min;
  std::optional<double> max;
};

GroupStats summarize_group(std::span<const double> values);

struct TaggedValue {
  double value = 0.0;
  GroupTag tag = GroupTag::unknown;
};

// Per-group mean/SD/range; groups with < 2 observations are reported as
// insufficient rather than NaN.
std::map<GroupTag, GroupStats> group_variability(std::span<const TaggedValue> observations);

enum class CiBand { mean, observation };
const char* to_string(CiBand b);
CiBand ci_band_from_string(const std::string& s);

struct TrendFit {
  std::string roi_name;  // filled by callers that fit per ROI
  Side side = Side::left;
  double slope_cm3_per_year = 0.0;
  double intercept_cm3 = 0.0;
  double r_squared = 0.0;
  double slope_stderr = 0.0;
  std::size_t n = 0;
  CiBand band = CiBand::mean;
  std::vector<double> times_years;
  std::vector<double> fitted_cm3;
  std::vector<double> ci95_lower_cm3;
  std::vector<double> ci95_upper_cm3;
};

// Ordinary least squares of volume on time, with a 95% t-based confidence
// band (prediction-of-mean by default, switchable to observation).
// Requires >= 3 points and >= 2 distinct times.
TrendFit fit_trend(std::span<const double> times_years, std::span<const double> volumes_cm3,
                   CiBand band = CiBand::mean);

// Convenience overload: times as dates, converted to years since the first.
TrendFit fit_trend(std::span<const Date> dates, std::span<const double> volumes_cm3,
                   CiBand band = CiBand::mean);

}  // namespace segstab
