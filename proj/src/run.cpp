#include "segstab/run.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "segstab/errors.hpp"
#include "segstab/nifti.hpp"
#include "segstab/oracle.hpp"
#include "segstab/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace segstab {

namespace {

// All floating-point output uses 6 significant digits so byte-level
// determinism is textual, not just numeric.
std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string fmt6_opt(const std::optional<double>& v) { return v ? fmt6(*v) : ""; }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

// Minimal RFC-4180 row splitter for the selftest consistency check.
std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

json group_stats_json(const GroupStats& g) {
  json out;
  out["n"] = g.n;
  out["sufficient"] = g.sufficient;
  out["mean"] = g.mean ? json(*g.mean) : json(nullptr);
  out["sd"] = g.sd ? json(*g.sd) : json(nullptr);
  out["min"] = g.min ? json(*g.min) : json(nullptr);
  out["max"] = g.max ? json(*g.max) : json(nullptr);
  return out;
}

json param_summary_json(const ParamSummary& p) {
  json out;
  out["n_present"] = p.n_present;
  out["n_unique"] = p.n_unique;
  out["min"] = p.min ? json(*p.min) : json(nullptr);
  out["max"] = p.max ? json(*p.max) : json(nullptr);
  return out;
}

// Writes every (path, content) pair via temp + atomic rename. Any failure
// removes the temp files so no partial output survives.
void write_outputs_atomically(const std::vector<std::pair<fs::path, std::string>>& outputs) {
  std::vector<fs::path> temps;
  try {
    for (const auto& [path, content] : outputs) {
      const fs::path tmp = path.string() + ".tmp";
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw usage_error(tmp.string() + ": cannot open for writing");
      out << content;
      out.flush();
      if (!out) throw usage_error(tmp.string() + ": write failed");
      temps.push_back(tmp);
    }
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      fs::rename(temps[i], outputs[i].first);
    }
  } catch (...) {
    for (const fs::path& tmp : temps) {
      std::error_code ec;
      fs::remove(tmp, ec);
    }
    throw;
  }
}

RoiRegistry resolve_registry(const std::optional<fs::path>& override_path) {
  return override_path ? load_registry(*override_path) : default_registry();
}

int effective_jobs(int configured) {
  if (const char* env = std::getenv(kJobsEnvVar)) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<int>(v);
    throw usage_error(std::string(kJobsEnvVar) + " must be a positive integer, got '" +
                      env + "'");
  }
  return configured;
}

json resample_json(const std::optional<ResampleOptions>& rs) {
  if (!rs) return json(nullptr);
  json out;
  out["reference"] =
      rs->reference == ResampleOptions::Reference::atlas ? "atlas" : "first_session";
  out["atlas"] = rs->reference == ResampleOptions::Reference::atlas
                     ? json(rs->atlas_path.string())
                     : json(nullptr);
  out["transform_dir"] =
      rs->transform_dir ? json(rs->transform_dir->string()) : json(nullptr);
  return out;
}

std::optional<ResampleOptions> resample_from_json(const json& j, const std::string& origin) {
  if (j.is_null()) return std::nullopt;
  ResampleOptions rs;
  const std::string ref = j.at("reference").get<std::string>();
  if (ref == "atlas") {
    rs.reference = ResampleOptions::Reference::atlas;
    if (!j.contains("atlas") || j["atlas"].is_null()) {
      throw parse_error(origin + ": resample.reference 'atlas' requires an atlas path");
    }
    rs.atlas_path = j["atlas"].get<std::string>();
  } else if (ref == "first_session") {
    rs.reference = ResampleOptions::Reference::first_session;
  } else {
    throw parse_error(origin + ": unknown resample reference '" + ref + "'");
  }
  if (j.contains("transform_dir") && !j["transform_dir"].is_null()) {
    rs.transform_dir = fs::path(j["transform_dir"].get<std::string>());
  }
  return rs;
}

struct RoiSideKey {
  std::string roi;
  Side side;
  auto operator<=>(const RoiSideKey&) const = default;
};

const char* empty_cause_field(const PairMetrics& m) { return to_string(m.empty_cause); }

}  // namespace

bool operator==(const FilterRule& a, const FilterRule& b) {
  return a.metric == b.metric && a.threshold == b.threshold && a.scope == b.scope;
}

bool operator==(const ResampleOptions& a, const ResampleOptions& b) {
  return a.reference == b.reference && a.atlas_path == b.atlas_path &&
         a.transform_dir == b.transform_dir;
}

bool operator==(const RunConfig& a, const RunConfig& b) {
  return a.dataset_root == b.dataset_root && a.layout == b.layout && a.policy == b.policy &&
         a.registry_path == b.registry_path && a.tolerance_mm == b.tolerance_mm &&
         a.sides == b.sides && a.filter_rules == b.filter_rules &&
         a.resample == b.resample && a.output_dir == b.output_dir && a.jobs == b.jobs &&
         a.seed == b.seed && a.ci_band == b.ci_band;
}

std::vector<FilterRule> default_filter_rules() {
  return {
      {FilterMetric::surface_dice, 0.92, FilterScope::subcortical},
      {FilterMetric::surface_dice, 0.90, FilterScope::subcortical},
      {FilterMetric::dice, 0.80, FilterScope::subcortical},
  };
}

std::string run_config_to_json(const RunConfig& config) {
  json doc;
  doc["dataset_root"] = config.dataset_root.string();
  doc["layout"] = to_string(config.layout);
  doc["policy"] = to_string(config.policy);
  doc["registry"] = config.registry_path ? json(config.registry_path->string()) : json(nullptr);
  doc["tolerance_mm"] = config.tolerance_mm;
  json sides = json::array();
  for (const Side s : config.sides) sides.push_back(to_string(s));
  doc["sides"] = std::move(sides);
  json filters = json::array();
  for (const FilterRule& rule : config.filter_rules) {
    filters.push_back({{"metric", to_string(rule.metric)},
                       {"threshold", rule.threshold},
                       {"scope", to_string(rule.scope)}});
  }
  doc["filters"] = std::move(filters);
  doc["resample"] = resample_json(config.resample);
  doc["output_dir"] = config.output_dir.string();
  doc["jobs"] = config.jobs;
  doc["seed"] = config.seed;
  doc["ci_band"] = to_string(config.ci_band);
  return doc.dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& text, const std::string& origin) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw parse_error(origin + ": invalid JSON: " + e.what());
  }
  RunConfig config;
  try {
    config.dataset_root = fs::path(doc.at("dataset_root").get<std::string>());
    config.output_dir = fs::path(doc.at("output_dir").get<std::string>());
    if (doc.contains("layout")) config.layout = layout_from_string(doc["layout"].get<std::string>());
    if (doc.contains("policy")) config.policy = policy_from_string(doc["policy"].get<std::string>());
    if (doc.contains("registry") && !doc["registry"].is_null()) {
      config.registry_path = fs::path(doc["registry"].get<std::string>());
    }
    if (doc.contains("tolerance_mm")) config.tolerance_mm = doc["tolerance_mm"].get<double>();
    if (doc.contains("sides")) {
      config.sides.clear();
      for (const auto& s : doc["sides"]) config.sides.push_back(side_from_string(s.get<std::string>()));
    }
    if (doc.contains("filters")) {
      config.filter_rules.clear();
      for (const auto& f : doc["filters"]) {
        FilterRule rule;
        rule.metric = filter_metric_from_string(f.at("metric").get<std::string>());
        rule.threshold = f.at("threshold").get<double>();
        if (f.contains("scope")) rule.scope = filter_scope_from_string(f["scope"].get<std::string>());
        config.filter_rules.push_back(rule);
      }
    } else {
      config.filter_rules = default_filter_rules();
    }
    if (doc.contains("resample")) {
      config.resample = resample_from_json(doc["resample"], origin);
    }
    if (doc.contains("jobs")) config.jobs = doc["jobs"].get<int>();
    if (doc.contains("seed")) config.seed = doc["seed"].get<std::uint64_t>();
    if (doc.contains("ci_band")) config.ci_band = ci_band_from_string(doc["ci_band"].get<std::string>());
  } catch (const json::exception& e) {
    throw parse_error(origin + ": bad config: " + e.what());
  }
  if (!(config.tolerance_mm > 0.0)) {
    throw parse_error(origin + ": tolerance_mm must be > 0");
  }
  if (config.sides.empty()) throw parse_error(origin + ": sides must not be empty");
  return config;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw parse_error(path.string() + ": cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return run_config_from_json(ss.str(), path.string());
}

void save_run_config(const RunConfig& config, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw usage_error(path.string() + ": cannot open for writing");
  out << run_config_to_json(config);
  if (!out) throw usage_error(path.string() + ": write failed");
}

// ---- compare ----

namespace {

struct CompareRow {
  std::string roi;
  Side side;
  PairMetrics metrics;
};

json compare_row_json(const CompareRow& row) {
  json out;
  out["roi"] = row.roi;
  out["side"] = to_string(row.side);
  out["dice"] = row.metrics.dice ? json(*row.metrics.dice) : json(nullptr);
  out["surface_dice"] =
      row.metrics.surface_dice ? json(*row.metrics.surface_dice) : json(nullptr);
  out["hd95_mm"] = row.metrics.hd95_mm ? json(*row.metrics.hd95_mm) : json(nullptr);
  out["vol_a_cm3"] = row.metrics.volume_a_cm3;
  out["vol_b_cm3"] = row.metrics.volume_b_cm3;
  out["vol_diff_cm3"] = row.metrics.volume_b_cm3 - row.metrics.volume_a_cm3;
  out["empty_cause"] = empty_cause_field(row.metrics);
  return out;
}

}  // namespace

void run_compare(const CompareOptions& options, std::ostream& out) {
  if (!(options.tolerance_mm > 0.0)) throw usage_error("tolerance must be > 0");
  const RoiRegistry registry = resolve_registry(options.registry_path);

  const LabelVolume vol_a = read_label_volume(options.volume_a);
  LabelVolume vol_b = read_label_volume(options.volume_b);

  if (options.transform_path) {
    const AffineTransform transform = read_affine_transform(*options.transform_path);
    vol_b = resample_labels(vol_b, transform, ReferenceGrid::from_volume(vol_a));
  }
  if (!same_dims(vol_a.dims, vol_b.dims) || !same_spacing(vol_a.spacing, vol_b.spacing)) {
    throw usage_error("grid mismatch between " + options.volume_a.string() + " and " +
                      options.volume_b.string() + " (pass --transform to resample)");
  }

  std::vector<CompareRow> rows;
  for (const RoiSpec& spec : registry.entries) {
    for (const Side side : {Side::left, Side::right}) {
      const BinaryMask mask_a = extract_mask(vol_a, spec, side);
      const BinaryMask mask_b = extract_mask(vol_b, spec, side);
      rows.push_back({spec.name, side, pair_metrics(mask_a, mask_b, options.tolerance_mm)});
    }
  }

  out << std::left << std::setw(26) << "roi" << std::setw(7) << "side" << std::right
      << std::setw(9) << "dice" << std::setw(14) << "surface_dice" << std::setw(10)
      << "hd95_mm" << std::setw(12) << "vol_a_cm3" << std::setw(12) << "vol_b_cm3"
      << std::setw(14) << "vol_diff_cm3" << "\n";
  auto cell = [](const std::optional<double>& v) { return v ? fmt6(*v) : std::string("n/a"); };
  for (const CompareRow& row : rows) {
    out << std::left << std::setw(26) << row.roi << std::setw(7) << to_string(row.side)
        << std::right << std::setw(9) << cell(row.metrics.dice) << std::setw(14)
        << cell(row.metrics.surface_dice) << std::setw(10) << cell(row.metrics.hd95_mm)
        << std::setw(12) << fmt6(row.metrics.volume_a_cm3) << std::setw(12)
        << fmt6(row.metrics.volume_b_cm3) << std::setw(14)
        << fmt6(row.metrics.volume_b_cm3 - row.metrics.volume_a_cm3) << "\n";
  }

  if (options.json_out) {
    json doc;
    doc["tool"] = "segstab";
    doc["volume_a"] = options.volume_a.string();
    doc["volume_b"] = options.volume_b.string();
    doc["tolerance_mm"] = options.tolerance_mm;
    json jrows = json::array();
    for (const CompareRow& row : rows) jrows.push_back(compare_row_json(row));
    doc["rows"] = std::move(jrows);
    write_outputs_atomically({{*options.json_out, doc.dump(2) + "\n"}});
  }
}

// ---- batch ----

namespace {

std::string records_csv(const std::vector<MetricRecord>& records) {
  std::string out =
      "subject,session_a,session_b,roi,class,side,group,dice,surface_dice,hd95_mm,"
      "vol_a_cm3,vol_b_cm3,vol_diff_cm3,empty_cause\n";
  for (const MetricRecord& r : records) {
    out += csv_field(r.subject_id) + ",";
    out += csv_field(r.session_a) + ",";
    out += csv_field(r.session_b) + ",";
    out += csv_field(r.roi_name) + ",";
    out += std::string(to_string(r.roi_class)) + ",";
    out += std::string(to_string(r.side)) + ",";
    out += std::string(to_string(r.group_tag)) + ",";
    out += fmt6_opt(r.metrics.dice) + ",";
    out += fmt6_opt(r.metrics.surface_dice) + ",";
    out += fmt6_opt(r.metrics.hd95_mm) + ",";
    out += fmt6(r.metrics.volume_a_cm3) + ",";
    out += fmt6(r.metrics.volume_b_cm3) + ",";
    out += fmt6(r.metrics.volume_b_cm3 - r.metrics.volume_a_cm3) + ",";
    out += std::string(empty_cause_field(r.metrics)) + "\n";
  }
  return out;
}

// session volume per (subject, roi, side, session): identical in every record
// that mentions it, so last-write-wins collection is safe.
struct SessionVolumeKey {
  std::string subject, roi, session;
  Side side;
  auto operator<=>(const SessionVolumeKey&) const = default;
};

struct SessionVolumeInfo {
  std::optional<Date> date;
  double volume_cm3 = 0.0;
};

std::map<SessionVolumeKey, SessionVolumeInfo> collect_session_volumes(
    const std::vector<MetricRecord>& records,
    const std::map<std::string, std::optional<Date>>& session_dates) {
  std::map<SessionVolumeKey, SessionVolumeInfo> out;
  auto date_of = [&](const std::string& subject, const std::string& session) {
    const auto it = session_dates.find(subject + "/" + session);
    return it == session_dates.end() ? std::optional<Date>{} : it->second;
  };
  for (const MetricRecord& r : records) {
    out[{r.subject_id, r.roi_name, r.session_a, r.side}] = {
        date_of(r.subject_id, r.session_a), r.metrics.volume_a_cm3};
    out[{r.subject_id, r.roi_name, r.session_b, r.side}] = {
        date_of(r.subject_id, r.session_b), r.metrics.volume_b_cm3};
  }
  return out;
}

json summary_roi_sections(const std::vector<MetricRecord>& records,
                          const std::map<SessionVolumeKey, SessionVolumeInfo>& volumes) {
  std::map<RoiSideKey, std::vector<const MetricRecord*>> grouped;
  for (const MetricRecord& r : records) grouped[{r.roi_name, r.side}].push_back(&r);

  json rois = json::array();
  for (const auto& [key, recs] : grouped) {
    json entry;
    entry["roi"] = key.roi;
    entry["side"] = to_string(key.side);

    std::vector<double> session_vols;
    for (const auto& [vkey, info] : volumes) {
      if (vkey.roi == key.roi && vkey.side == key.side) session_vols.push_back(info.volume_cm3);
    }
    entry["volume_cm3"] = group_stats_json(summarize_group(session_vols));

    json groups;
    for (const GroupTag tag :
         {GroupTag::within_scanner, GroupTag::cross_scanner, GroupTag::unknown}) {
      std::vector<double> dice_vals, sdice_vals, hd95_vals, vol_diff_vals;
      std::vector<MetricRecord> defined;
      std::size_t n_pairs = 0;
      for (const MetricRecord* r : recs) {
        if (r->group_tag != tag) continue;
        ++n_pairs;
        vol_diff_vals.push_back(
            std::abs(r->metrics.volume_b_cm3 - r->metrics.volume_a_cm3));
        if (r->metrics.dice) dice_vals.push_back(*r->metrics.dice);
        if (r->metrics.surface_dice) sdice_vals.push_back(*r->metrics.surface_dice);
        if (r->metrics.hd95_mm) hd95_vals.push_back(*r->metrics.hd95_mm);
        if (r->metrics.dice && r->metrics.volume_a_cm3 > 0.0) defined.push_back(*r);
      }
      if (n_pairs == 0) continue;
      json g;
      g["n_pairs"] = n_pairs;
      g["dice"] = group_stats_json(summarize_group(dice_vals));
      g["surface_dice"] = group_stats_json(summarize_group(sdice_vals));
      g["hd95_mm"] = group_stats_json(summarize_group(hd95_vals));
      g["abs_vol_diff_cm3"] = group_stats_json(summarize_group(vol_diff_vals));
      g["mape_percent"] = defined.empty() ? json(nullptr) : json(volume_mape(defined));
      groups[to_string(tag)] = std::move(g);
    }
    entry["groups"] = std::move(groups);
    rois.push_back(std::move(entry));
  }
  return rois;
}

std::string trend_csv(const std::vector<MetricRecord>& records,
                      const std::map<SessionVolumeKey, SessionVolumeInfo>& volumes,
                      CiBand band) {
  std::string out =
      "subject,roi,side,session,date,years,volume_cm3,fitted_cm3,ci95_lower_cm3,"
      "ci95_upper_cm3,slope_cm3_per_year,intercept_cm3,r_squared,slope_stderr,n_points\n";

  struct FitGroupKey {
    std::string subject, roi;
    Side side;
    auto operator<=>(const FitGroupKey&) const = default;
  };
  struct Point {
    std::string session;
    Date date;
    double volume;
  };
  std::map<FitGroupKey, std::vector<Point>> groups;
  for (const auto& [key, info] : volumes) {
    if (!info.date) continue;
    groups[{key.subject, key.roi, key.side}].push_back({key.session, *info.date, info.volume_cm3});
  }
  (void)records;

  for (auto& [key, points] : groups) {
    std::sort(points.begin(), points.end(), [](const Point& a, const Point& b) {
      if (a.date.serial_day() != b.date.serial_day())
        return a.date.serial_day() < b.date.serial_day();
      return a.session < b.session;
    });
    if (points.size() < 3) continue;
    std::set<long> distinct;
    for (const Point& p : points) distinct.insert(p.date.serial_day());
    if (distinct.size() < 2) continue;

    std::vector<Date> dates;
    std::vector<double> vols;
    for (const Point& p : points) {
      dates.push_back(p.date);
      vols.push_back(p.volume);
    }
    const TrendFit fit = fit_trend(dates, vols, band);

    for (std::size_t i = 0; i < points.size(); ++i) {
      out += csv_field(key.subject) + ",";
      out += csv_field(key.roi) + ",";
      out += std::string(to_string(key.side)) + ",";
      out += csv_field(points[i].session) + ",";
      out += points[i].date.iso() + ",";
      out += fmt6(fit.times_years[i]) + ",";
      out += fmt6(vols[i]) + ",";
      out += fmt6(fit.fitted_cm3[i]) + ",";
      out += fmt6(fit.ci95_lower_cm3[i]) + ",";
      out += fmt6(fit.ci95_upper_cm3[i]) + ",";
      out += fmt6(fit.slope_cm3_per_year) + ",";
      out += fmt6(fit.intercept_cm3) + ",";
      out += fmt6(fit.r_squared) + ",";
      out += fmt6(fit.slope_stderr) + ",";
      out += std::to_string(fit.n) + "\n";
    }
  }
  return out;
}

json filter_report_json_entry(const FilterReport& report) {
  json out;
  out["metric"] = to_string(report.rule.metric);
  out["threshold"] = report.rule.threshold;
  out["scope"] = to_string(report.rule.scope);
  out["structures_total"] = report.structures_total;
  out["structures_removed"] = report.structures_removed;
  out["undefined_removed"] = report.undefined_removed;
  out["percent_filtered"] = report.percent_filtered;
  out["mape_p75"] = report.mape_p75 ? json(*report.mape_p75) : json(nullptr);
  out["mape_p95"] = report.mape_p95 ? json(*report.mape_p95) : json(nullptr);
  return out;
}

}  // namespace

void run_batch(const RunConfig& config) {
  const RoiRegistry registry = resolve_registry(config.registry_path);

  const std::vector<DatasetSession> sessions = scan_dataset(config.dataset_root, config.layout);
  const ComparisonPlan plan = build_plan(sessions, config.policy);

  EvaluateOptions eval;
  eval.tolerance_mm = config.tolerance_mm;
  eval.sides = config.sides;
  eval.jobs = effective_jobs(config.jobs);
  eval.resample = config.resample;
  const EvaluationResult result = evaluate_plan(plan, registry, eval);

  std::map<std::string, std::optional<Date>> session_dates;
  for (const DatasetSession& s : sessions) {
    session_dates[s.meta.subject_id + "/" + s.meta.session_id] = s.meta.acquisition_date;
  }
  const auto session_volumes = collect_session_volumes(result.records, session_dates);

  // summary.json
  json summary;
  summary["tool"] = "segstab";
  // worker count is an execution detail; outputs must not depend on it
  json config_echo = json::parse(run_config_to_json(config));
  config_echo.erase("jobs");
  summary["config"] = config_echo;
  std::size_t undefined_records = 0;
  for (const MetricRecord& r : result.records) {
    if (!r.metrics.dice) ++undefined_records;
  }
  summary["totals"] = {{"sessions", sessions.size()},
                       {"pairs", plan.pairs.size()},
                       {"records", result.records.size()},
                       {"undefined_records", undefined_records}};
  const AcquisitionSummary acq = summarize_acquisition(sessions);
  summary["acquisition"] = {{"retest_gap_days", param_summary_json(acq.retest_gap_days)},
                            {"echo_time_ms", param_summary_json(acq.echo_time_ms)},
                            {"repetition_time_ms", param_summary_json(acq.repetition_time_ms)},
                            {"voxel_x_mm", param_summary_json(acq.voxel_x_mm)},
                            {"voxel_y_mm", param_summary_json(acq.voxel_y_mm)},
                            {"voxel_z_mm", param_summary_json(acq.voxel_z_mm)}};
  summary["rois"] = summary_roi_sections(result.records, session_volumes);
  json deltas = json::array();
  for (const ResampleDelta& d : result.resample_deltas) {
    deltas.push_back({{"subject", d.subject_id},
                      {"session", d.session_id},
                      {"roi", d.roi_name},
                      {"side", to_string(d.side)},
                      {"native_cm3", d.native_cm3},
                      {"resampled_cm3", d.resampled_cm3},
                      {"delta_cm3", d.resampled_cm3 - d.native_cm3}});
  }
  summary["resample_deltas"] = std::move(deltas);

  // filter_report.json
  json filter_reports = json::array();
  for (const FilterRule& rule : config.filter_rules) {
    const FilterOutcome outcome = apply_filter(result.records, rule);
    filter_reports.push_back(filter_report_json_entry(outcome.report));
  }

  fs::create_directories(config.output_dir);
  write_outputs_atomically({
      {config.output_dir / "records.csv", records_csv(result.records)},
      {config.output_dir / "summary.json", summary.dump(2) + "\n"},
      {config.output_dir / "trend.csv",
       trend_csv(result.records, session_volumes, config.ci_band)},
      {config.output_dir / "filter_report.json", filter_reports.dump(2) + "\n"},
  });
}

// ---- synth ----

void run_synth(const SynthCliOptions& options) {
  const SynthSpec spec = load_synth_spec(options.spec_path);
  const RoiRegistry registry = resolve_registry(options.registry_path);
  write_synth_dataset(spec, registry, options.seed, options.out_dir);
}

// ---- selftest ----

namespace {

BinaryMask random_blob_mask(Rng& rng, const Index3& dims, const Vec3& spacing) {
  std::vector<std::uint8_t> occ(
      static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
          static_cast<std::size_t>(dims[2]),
      0);
  const Vec3 center = {rng.uniform(3.0, dims[0] - 4.0), rng.uniform(3.0, dims[1] - 4.0),
                       rng.uniform(3.0, dims[2] - 4.0)};
  const Vec3 radius = {rng.uniform(2.0, 4.0), rng.uniform(2.0, 4.0), rng.uniform(2.0, 4.0)};
  std::size_t i = 0;
  for (int z = 0; z < dims[2]; ++z) {
    for (int y = 0; y < dims[1]; ++y) {
      for (int x = 0; x < dims[0]; ++x, ++i) {
        const double dx = (x - center[0]) / radius[0];
        const double dy = (y - center[1]) / radius[1];
        const double dz = (z - center[2]) / radius[2];
        bool inside = dx * dx + dy * dy + dz * dz <= 1.0;
        if (rng.bernoulli(0.02)) inside = !inside;  // speckle noise
        occ[i] = inside ? 1 : 0;
      }
    }
  }
  // keep the mask non-empty
  occ[static_cast<std::size_t>(static_cast<int>(center[0])) +
      static_cast<std::size_t>(dims[0]) *
          (static_cast<std::size_t>(static_cast<int>(center[1])) +
           static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(static_cast<int>(center[2])))] = 1;
  return BinaryMask::from_occupancy(dims, spacing, std::move(occ));
}

LabelVolume random_label_volume(Rng& rng, const Index3& dims, const Vec3& spacing) {
  LabelVolume vol;
  vol.dims = dims;
  vol.spacing = spacing;
  vol.affine = Affine4::scaling(spacing);
  vol.labels.resize(vol.voxel_count());
  for (std::int32_t& v : vol.labels) {
    v = rng.bernoulli(0.3) ? rng.uniform_int(1, 5) : 0;
  }
  return vol;
}

struct CheckReporter {
  std::ostream& out;
  bool all_ok = true;

  void report(const std::string& name, bool ok, const std::string& detail = "") {
    out << (ok ? "[PASS] " : "[FAIL] ") << name;
    if (!detail.empty()) out << " (" << detail << ")";
    out << "\n";
    all_ok = all_ok && ok;
  }
};

bool approx(double a, double b, double tol) { return std::abs(a - b) <= tol; }

void selftest_metric_kernels(const SelftestOptions& options, CheckReporter& rep) {
  Rng rng(options.seed);
  bool dice_ok = true, sdice_ok = true, hd95_ok = true, field_ok = true;
  double worst_sdice = 0.0, worst_hd95 = 0.0, worst_field = 0.0;

  for (int c = 0; c < options.cases; ++c) {
    const Index3 dims = {rng.uniform_int(10, 14), rng.uniform_int(10, 14),
                         rng.uniform_int(10, 14)};
    const Vec3 spacing = {rng.uniform(0.7, 1.2), rng.uniform(0.7, 1.2),
                          rng.uniform(0.7, 1.2)};
    const BinaryMask a = random_blob_mask(rng, dims, spacing);
    const BinaryMask b = random_blob_mask(rng, dims, spacing);

    dice_ok = dice_ok && dice(a, b) == oracle::dice_reference(a, b);

    const double sd = surface_dice(a, b, 1.0);
    const double sd_ref = oracle::surface_dice_reference(a, b, 1.0);
    worst_sdice = std::max(worst_sdice, std::abs(sd - sd_ref));
    sdice_ok = sdice_ok && approx(sd, sd_ref, 1e-9);

    const double h = hd95(a, b);
    const double h_ref = oracle::hd95_reference(a, b);
    worst_hd95 = std::max(worst_hd95, std::abs(h - h_ref));
    hd95_ok = hd95_ok && approx(h, h_ref, 1e-6);

    if (c % 5 == 0) {
      const SurfacePointSet surf = extract_surface(a);
      const DistanceField field = distance_field(surf, dims, spacing);
      const std::vector<double> ref =
          oracle::distance_field_reference(surf.voxels, dims, spacing);
      for (std::size_t i = 0; i < ref.size(); ++i) {
        worst_field = std::max(worst_field, std::abs(field.values[i] - ref[i]));
        field_ok = field_ok && approx(field.values[i], ref[i], 1e-6);
      }
    }
  }

  const std::string n = std::to_string(options.cases) + " cases";
  rep.report("dice kernel == counting oracle, " + n, dice_ok);
  rep.report("surface_dice kernel vs exhaustive oracle <= 1e-9, " + n, sdice_ok,
             "max |diff| " + fmt6(worst_sdice));
  rep.report("hd95 kernel vs exhaustive oracle <= 1e-6 mm, " + n, hd95_ok,
             "max |diff| " + fmt6(worst_hd95));
  rep.report("distance field vs brute-force oracle <= 1e-6 mm", field_ok,
             "max |diff| " + fmt6(worst_field));
}

void selftest_resample(const SelftestOptions& options, CheckReporter& rep) {
  Rng rng(options.seed + 1);
  bool identity_ok = true, translation_ok = true, rotation_ok = true, labels_ok = true;

  for (int c = 0; c < std::max(5, options.cases / 5); ++c) {
    const Index3 dims = {rng.uniform_int(8, 12), rng.uniform_int(8, 12),
                         rng.uniform_int(8, 12)};
    const Vec3 spacing = {rng.uniform(0.7, 1.2), rng.uniform(0.7, 1.2),
                          rng.uniform(0.7, 1.2)};
    const LabelVolume vol = random_label_volume(rng, dims, spacing);
    const ReferenceGrid grid = ReferenceGrid::from_volume(vol);

    const LabelVolume same = resample_labels(vol, identity_transform(), grid);
    identity_ok = identity_ok && same.labels == vol.labels;

    // one-voxel translation along x: out[x] == in[x+1]
    AffineTransform shift;
    shift.matrix = Affine4::identity();
    shift.matrix.at(0, 3) = spacing[0];
    shift.source_tag = "selftest-shift";
    const LabelVolume shifted = resample_labels(vol, shift, grid);
    for (int z = 0; z < dims[2] && translation_ok; ++z) {
      for (int y = 0; y < dims[1] && translation_ok; ++y) {
        for (int x = 0; x < dims[0]; ++x) {
          const std::int32_t expect = x + 1 < dims[0] ? vol.at(x + 1, y, z) : 0;
          if (shifted.at(x, y, z) != expect) {
            translation_ok = false;
            break;
          }
        }
      }
    }

    // arbitrary small rotation vs the direct per-voxel oracle
    const double angle = rng.uniform(-0.5, 0.5);
    AffineTransform rot;
    rot.matrix = Affine4::identity();
    rot.matrix.at(0, 0) = std::cos(angle);
    rot.matrix.at(0, 1) = -std::sin(angle);
    rot.matrix.at(1, 0) = std::sin(angle);
    rot.matrix.at(1, 1) = std::cos(angle);
    rot.matrix.at(0, 3) = rng.uniform(-2.0, 2.0);
    rot.matrix.at(1, 3) = rng.uniform(-2.0, 2.0);
    rot.source_tag = "selftest-rot";
    const LabelVolume rotated = resample_labels(vol, rot, grid);
    const LabelVolume rotated_ref = oracle::resample_labels_reference(vol, rot, grid);
    rotation_ok = rotation_ok && rotated.labels == rotated_ref.labels;

    std::set<std::int32_t> input_labels(vol.labels.begin(), vol.labels.end());
    input_labels.insert(0);
    for (const std::int32_t v : rotated.labels) {
      labels_ok = labels_ok && input_labels.count(v) > 0;
    }
  }

  rep.report("resample identity is a bitwise no-op", identity_ok);
  rep.report("resample one-voxel translation matches the index-shift oracle", translation_ok);
  rep.report("resample rotation matches the per-voxel remap oracle", rotation_ok);
  rep.report("resample never invents labels", labels_ok);
}

void selftest_batch_consistency(const fs::path& dir, CheckReporter& rep) {
  std::ifstream csv_in(dir / "records.csv");
  if (!csv_in) throw parse_error((dir / "records.csv").string() + ": cannot open");
  std::string line;
  if (!std::getline(csv_in, line)) {
    throw parse_error((dir / "records.csv").string() + ": empty file");
  }
  const std::vector<std::string> header = split_csv_row(line);
  auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw parse_error("records.csv: missing column '" + name + "'");
    }
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t col_roi = column("roi");
  const std::size_t col_side = column("side");
  const std::size_t col_group = column("group");
  const std::size_t col_dice = column("dice");

  struct Agg {
    std::size_t n = 0;
    double dice_sum = 0.0;
    std::size_t dice_n = 0;
  };
  std::map<std::string, Agg> agg;  // key roi|side|group
  std::size_t rows = 0, undefined_rows = 0;
  while (std::getline(csv_in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> f = split_csv_row(line);
    ++rows;
    const bool undefined = f[col_dice].empty();
    if (undefined) ++undefined_rows;
    Agg& a = agg[f[col_roi] + "|" + f[col_side] + "|" + f[col_group]];
    ++a.n;
    if (!undefined) {
      a.dice_sum += std::stod(f[col_dice]);
      ++a.dice_n;
    }
  }

  std::ifstream json_in(dir / "summary.json");
  if (!json_in) throw parse_error((dir / "summary.json").string() + ": cannot open");
  json summary;
  try {
    json_in >> summary;
  } catch (const json::exception& e) {
    throw parse_error((dir / "summary.json").string() + ": " + e.what());
  }

  bool totals_ok = summary.at("totals").at("records").get<std::size_t>() == rows &&
                   summary.at("totals").at("undefined_records").get<std::size_t>() ==
                       undefined_rows;
  rep.report("summary.json totals equal records.csv recomputation", totals_ok,
             std::to_string(rows) + " rows");

  bool groups_ok = true;
  for (const auto& roi : summary.at("rois")) {
    const std::string base = roi.at("roi").get<std::string>() + "|" +
                             roi.at("side").get<std::string>() + "|";
    for (const auto& [tag, g] : roi.at("groups").items()) {
      const auto it = agg.find(base + tag);
      if (it == agg.end()) {
        groups_ok = false;
        continue;
      }
      groups_ok = groups_ok && g.at("n_pairs").get<std::size_t>() == it->second.n;
      const auto& mean = g.at("dice").at("mean");
      if (it->second.dice_n > 0) {
        const double recomputed = it->second.dice_sum / static_cast<double>(it->second.dice_n);
        // records.csv carries 6 significant digits
        groups_ok = groups_ok && !mean.is_null() &&
                    std::abs(mean.get<double>() - recomputed) <=
                        1e-5 * std::max(1.0, std::abs(recomputed));
      } else {
        groups_ok = groups_ok && mean.is_null();
      }
    }
  }
  rep.report("summary.json per-group stats equal records.csv recomputation", groups_ok);
}

}  // namespace

bool run_selftest(const SelftestOptions& options, std::ostream& out) {
  CheckReporter rep{out};
  if (options.batch_dir) {
    selftest_batch_consistency(*options.batch_dir, rep);
  } else {
    selftest_metric_kernels(options, rep);
    selftest_resample(options, rep);
  }
  return rep.all_ok;
}

}  // namespace segstab
