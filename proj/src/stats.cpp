#include "segstab/stats.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/distributions/students_t.hpp>

#include "segstab/errors.hpp"

namespace segstab {

namespace {

std::optional<double> rule_metric_value(const MetricRecord& record, FilterMetric metric) {
  return metric == FilterMetric::dice ? record.metrics.dice : record.metrics.surface_dice;
}

bool in_scope(const MetricRecord& record, FilterScope scope) {
  switch (scope) {
    case FilterScope::cortical: return record.roi_class == RoiClass::cortical;
    case FilterScope::subcortical: return record.roi_class == RoiClass::subcortical;
    default: return true;
  }
}

}  // namespace

const char* to_string(FilterMetric m) {
  return m == FilterMetric::dice ? "dice" : "surface_dice";
}

FilterMetric filter_metric_from_string(const std::string& s) {
  if (s == "dice") return FilterMetric::dice;
  if (s == "surface_dice") return FilterMetric::surface_dice;
  throw usage_error("unknown filter metric '" + s + "' (expected dice|surface_dice)");
}

const char* to_string(FilterScope s) {
  switch (s) {
    case FilterScope::cortical: return "cortical";
    case FilterScope::subcortical: return "subcortical";
    default: return "all";
  }
}

FilterScope filter_scope_from_string(const std::string& s) {
  if (s == "cortical") return FilterScope::cortical;
  if (s == "subcortical") return FilterScope::subcortical;
  if (s == "all") return FilterScope::all;
  throw usage_error("unknown filter scope '" + s + "' (expected cortical|subcortical|all)");
}

double record_ape_percent(const MetricRecord& record) {
  const double ref = record.metrics.volume_a_cm3;
  if (!(ref > 0.0)) {
    throw usage_error("APE undefined: zero reference volume for " + record.roi_name);
  }
  return 100.0 * std::abs(record.metrics.volume_b_cm3 - ref) / ref;
}

double volume_mape(const std::vector<MetricRecord>& records) {
  if (records.empty()) throw usage_error("volume_mape: no records");
  double acc = 0.0;
  for (const MetricRecord& r : records) acc += record_ape_percent(r);
  return acc / static_cast<double>(records.size());
}

FilterOutcome apply_filter(const std::vector<MetricRecord>& records, const FilterRule& rule) {
  if (records.empty()) throw usage_error("apply_filter: no records");
  if (!(rule.threshold > 0.0) || !(rule.threshold < 1.0)) {
    throw usage_error("filter threshold must lie in (0,1)");
  }

  FilterOutcome out;
  out.report.rule = rule;
  std::vector<double> retained_apes;

  for (const MetricRecord& record : records) {
    if (!in_scope(record, rule.scope)) {
      out.retained.push_back(record);
      continue;
    }
    ++out.report.structures_total;
    const std::optional<double> value = rule_metric_value(record, rule.metric);
    const bool remove = !value.has_value() || *value < rule.threshold;
    if (remove) {
      ++out.report.structures_removed;
      if (!value.has_value()) ++out.report.undefined_removed;
      out.removed.push_back(record);
    } else {
      retained_apes.push_back(record_ape_percent(record));
      out.retained.push_back(record);
    }
  }

  if (out.report.structures_total > 0) {
    out.report.percent_filtered = 100.0 *
                                  static_cast<double>(out.report.structures_removed) /
                                  static_cast<double>(out.report.structures_total);
  }
  if (!retained_apes.empty()) {
    std::sort(retained_apes.begin(), retained_apes.end());
    out.report.mape_p75 = percentile_sorted(retained_apes, 75.0);
    out.report.mape_p95 = percentile_sorted(retained_apes, 95.0);
  }
  return out;
}

GroupStats summarize_group(std::span<const double> values) {
  GroupStats stats;
  stats.n = values.size();
  if (values.empty()) return stats;
  stats.min = *std::min_element(values.begin(), values.end());
  stats.max = *std::max_element(values.begin(), values.end());
  double sum = 0.0;
  for (const double v : values) sum += v;
  stats.mean = sum / static_cast<double>(values.size());
  if (values.size() >= 2) {
    stats.sufficient = true;
    double ss = 0.0;
    for (const double v : values) ss += (v - *stats.mean) * (v - *stats.mean);
    stats.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return stats;
}

std::map<GroupTag, GroupStats> group_variability(std::span<const TaggedValue> observations) {
  std::map<GroupTag, std::vector<double>> grouped;
  for (const TaggedValue& obs : observations) grouped[obs.tag].push_back(obs.value);
  std::map<GroupTag, GroupStats> out;
  for (const auto& [tag, values] : grouped) out[tag] = summarize_group(values);
  return out;
}

const char* to_string(CiBand b) { return b == CiBand::mean ? "mean" : "observation"; }

CiBand ci_band_from_string(const std::string& s) {
  if (s == "mean") return CiBand::mean;
  if (s == "observation") return CiBand::observation;
  throw usage_error("unknown CI band '" + s + "' (expected mean|observation)");
}

TrendFit fit_trend(std::span<const double> times_years, std::span<const double> volumes_cm3,
                   CiBand band) {
  const std::size_t n = times_years.size();
  if (n != volumes_cm3.size()) {
    throw usage_error("fit_trend: times and volumes differ in length");
  }
  if (n < 3) throw usage_error("fit_trend: need at least 3 time points");

  double tbar = 0.0, vbar = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    tbar += times_years[i];
    vbar += volumes_cm3[i];
  }
  tbar /= static_cast<double>(n);
  vbar /= static_cast<double>(n);

  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dt = times_years[i] - tbar;
    sxx += dt * dt;
    sxy += dt * (volumes_cm3[i] - vbar);
  }
  if (!(sxx > 0.0)) throw usage_error("fit_trend: all time points identical");

  TrendFit fit;
  fit.n = n;
  fit.band = band;
  fit.slope_cm3_per_year = sxy / sxx;
  fit.intercept_cm3 = vbar - fit.slope_cm3_per_year * tbar;

  double ss_res = 0.0, ss_tot = 0.0;
  fit.times_years.assign(times_years.begin(), times_years.end());
  fit.fitted_cm3.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    fit.fitted_cm3[i] = fit.intercept_cm3 + fit.slope_cm3_per_year * times_years[i];
    const double res = volumes_cm3[i] - fit.fitted_cm3[i];
    ss_res += res * res;
    const double dev = volumes_cm3[i] - vbar;
    ss_tot += dev * dev;
  }
  fit.r_squared = ss_tot > 0.0 ? std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0) : 0.0;

  const double df = static_cast<double>(n - 2);
  const double sigma = std::sqrt(ss_res / df);
  fit.slope_stderr = sigma / std::sqrt(sxx);

  const boost::math::students_t_distribution<double> tdist(df);
  const double tq = boost::math::quantile(tdist, 0.975);

  fit.ci95_lower_cm3.resize(n);
  fit.ci95_upper_cm3.resize(n);
  const double extra = band == CiBand::observation ? 1.0 : 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dt = times_years[i] - tbar;
    const double half =
        tq * sigma * std::sqrt(extra + 1.0 / static_cast<double>(n) + dt * dt / sxx);
    fit.ci95_lower_cm3[i] = fit.fitted_cm3[i] - half;
    fit.ci95_upper_cm3[i] = fit.fitted_cm3[i] + half;
  }
  return fit;
}

TrendFit fit_trend(std::span<const Date> dates, std::span<const double> volumes_cm3,
                   CiBand band) {
  if (dates.empty()) throw usage_error("fit_trend: no dates");
  const long day0 = dates.front().serial_day();
  std::vector<double> years;
  years.reserve(dates.size());
  for (const Date& d : dates) {
    years.push_back(static_cast<double>(d.serial_day() - day0) / 365.25);
  }
  return fit_trend(years, volumes_cm3, band);
}

}  // namespace segstab
