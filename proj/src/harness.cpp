#include "segstab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "segstab/errors.hpp"
#include "segstab/nifti.hpp"

namespace fs = std::filesystem;

namespace segstab {

namespace {

// days_from_civil (proleptic Gregorian), Hinnant's algorithm
long days_from_civil(int y, unsigned m, unsigned d) {
  y -= m <= 2;
  const long era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<long>(doe) - 719468;
}

bool is_leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

int days_in_month(int y, int m) {
  static const int table[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  if (m == 2 && is_leap(y)) return 29;
  return table[m - 1];
}

std::optional<std::string> json_string(const nlohmann::json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_string()) return std::nullopt;
  std::string v = it->get<std::string>();
  if (v.empty()) return std::nullopt;
  return v;
}

std::optional<double> json_number(const nlohmann::json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_number()) return std::nullopt;
  return it->get<double>();
}

// Sidecar keys follow BIDS: EchoTime/RepetitionTime in seconds (converted to
// ms here), InstitutionName as the site, DeviceSerialNumber or StationName as
// the scanner identity.
void apply_sidecar(SessionMeta& meta, const fs::path& sidecar) {
  std::ifstream in(sidecar);
  if (!in) return;
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(sidecar.string() + ": invalid sidecar JSON: " + e.what());
  }
  if (!doc.is_object()) {
    throw parse_error(sidecar.string() + ": sidecar must be a JSON object");
  }
  if (auto v = json_string(doc, "AcquisitionDateTime")) {
    meta.acquisition_date = parse_date(*v);
  } else if (auto d = json_string(doc, "AcquisitionDate")) {
    meta.acquisition_date = parse_date(*d);
  }
  meta.site_tag = json_string(doc, "InstitutionName");
  meta.scanner_tag = json_string(doc, "DeviceSerialNumber");
  if (!meta.scanner_tag) meta.scanner_tag = json_string(doc, "StationName");
  if (auto v = json_number(doc, "EchoTime")) meta.echo_time_ms = *v * 1000.0;
  if (auto v = json_number(doc, "RepetitionTime")) meta.repetition_time_ms = *v * 1000.0;
}

fs::path sidecar_path(const fs::path& volume) {
  std::string name = volume.filename().string();
  if (name.size() > 3 && name.compare(name.size() - 3, 3, ".gz") == 0) {
    name.resize(name.size() - 3);
  }
  if (name.size() > 4 && name.compare(name.size() - 4, 4, ".nii") == 0) {
    name.resize(name.size() - 4);
  }
  return volume.parent_path() / (name + ".json");
}

bool is_nifti_name(const std::string& name) {
  return name.ends_with(".nii") || name.ends_with(".nii.gz");
}

std::vector<fs::path> sorted_children(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

void fill_voxel_size(SessionMeta& meta, const fs::path& volume) {
  const NiftiHeader hdr = read_nifti_header(volume);
  meta.voxel_size_mm = header_voxel_size(hdr);
}

void check_duplicates(const std::vector<DatasetSession>& sessions) {
  std::set<std::pair<std::string, std::string>> seen;
  for (const DatasetSession& s : sessions) {
    if (!seen.insert({s.meta.subject_id, s.meta.session_id}).second) {
      throw usage_error("duplicate session " + s.meta.subject_id + "/" +
                        s.meta.session_id + " (" + s.volume_path.string() + ")");
    }
  }
}

// Session ordering used by all policies: by date when every session of the
// subject has one, else lexicographic by session id.
void sort_subject_sessions(std::vector<DatasetSession>& sessions) {
  const bool all_dated =
      std::all_of(sessions.begin(), sessions.end(),
                  [](const DatasetSession& s) { return s.meta.acquisition_date.has_value(); });
  if (all_dated) {
    std::sort(sessions.begin(), sessions.end(),
              [](const DatasetSession& a, const DatasetSession& b) {
                const long da = a.meta.acquisition_date->serial_day();
                const long db = b.meta.acquisition_date->serial_day();
                if (da != db) return da < db;
                return a.meta.session_id < b.meta.session_id;
              });
  } else {
    std::sort(sessions.begin(), sessions.end(),
              [](const DatasetSession& a, const DatasetSession& b) {
                return a.meta.session_id < b.meta.session_id;
              });
  }
}

GroupTag group_of(const SessionMeta& a, const SessionMeta& b) {
  if (!a.scanner_tag || !b.scanner_tag) return GroupTag::unknown;
  return *a.scanner_tag == *b.scanner_tag ? GroupTag::within_scanner
                                          : GroupTag::cross_scanner;
}

bool affines_close(const Affine4& a, const Affine4& b, double tol) {
  for (std::size_t i = 0; i < 16; ++i) {
    if (std::abs(a.m[i] - b.m[i]) > tol) return false;
  }
  return true;
}

void summarize_values(ParamSummary& out, const std::vector<double>& values) {
  out.n_present = values.size();
  if (values.empty()) return;
  out.min = *std::min_element(values.begin(), values.end());
  out.max = *std::max_element(values.begin(), values.end());
  out.n_unique = std::set<double>(values.begin(), values.end()).size();
}

// Shared volume loader; loads each file at most once across workers.
class VolumeCache {
public:
  std::shared_ptr<const LabelVolume> get(const fs::path& path) {
    const std::string key = path.string();
    {
      std::lock_guard lock(mutex_);
      const auto it = cache_.find(key);
      if (it != cache_.end()) return it->second;
    }
    auto vol = std::make_shared<LabelVolume>(read_label_volume(path));
    std::lock_guard lock(mutex_);
    return cache_.try_emplace(key, std::move(vol)).first->second;
  }

private:
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const LabelVolume>> cache_;
};

// Resolves per-session volumes, applying the configured resampling.
class SessionVolumes {
public:
  SessionVolumes(const ComparisonPlan& plan, const EvaluateOptions& options)
      : options_(options) {
    if (!options.resample) return;
    const ResampleOptions& rs = *options.resample;
    if (rs.reference == ResampleOptions::Reference::atlas) {
      atlas_ = std::make_shared<LabelVolume>(read_label_volume(rs.atlas_path));
    } else {
      // earliest session per subject, using the planning order convention
      std::map<std::string, std::vector<DatasetSession>> by_subject;
      for (const PlannedPair& p : plan.pairs) {
        by_subject[p.a.meta.subject_id].push_back(p.a);
        by_subject[p.b.meta.subject_id].push_back(p.b);
      }
      for (auto& [subject, sessions] : by_subject) {
        std::sort(sessions.begin(), sessions.end(),
                  [](const DatasetSession& a, const DatasetSession& b) {
                    return a.meta.session_id < b.meta.session_id;
                  });
        sessions.erase(std::unique(sessions.begin(), sessions.end(),
                                   [](const DatasetSession& a, const DatasetSession& b) {
                                     return a.meta.session_id == b.meta.session_id;
                                   }),
                       sessions.end());
        sort_subject_sessions(sessions);
        first_session_[subject] = sessions.front();
      }
    }
  }

  std::shared_ptr<const LabelVolume> native(const DatasetSession& s) {
    return cache_.get(s.volume_path);
  }

  // The volume used for metric evaluation; resampled onto the reference grid
  // when resampling is configured and the session is not already on it.
  std::shared_ptr<const LabelVolume> prepared(const DatasetSession& s) {
    if (!options_.resample) return native(s);
    const std::string key = s.meta.subject_id + "/" + s.meta.session_id;
    {
      std::lock_guard lock(mutex_);
      const auto it = prepared_.find(key);
      if (it != prepared_.end()) return it->second;
    }

    auto src = native(s);
    const ReferenceGrid ref = reference_grid(s);
    const std::optional<fs::path> tpath = transform_path(s);
    std::shared_ptr<const LabelVolume> result;
    bool was_resampled = false;
    if (!tpath && same_dims(src->dims, ref.dims) && same_spacing(src->spacing, ref.spacing) &&
        affines_close(src->affine, ref.affine, 1e-9)) {
      result = src;
    } else {
      const AffineTransform transform =
          tpath ? read_affine_transform(*tpath) : identity_transform();
      result = std::make_shared<LabelVolume>(resample_labels(*src, transform, ref));
      was_resampled = true;
    }
    std::lock_guard lock(mutex_);
    resampled_flag_[key] = was_resampled;
    return prepared_.try_emplace(key, std::move(result)).first->second;
  }

  bool was_resampled(const DatasetSession& s) {
    std::lock_guard lock(mutex_);
    const auto it = resampled_flag_.find(s.meta.subject_id + "/" + s.meta.session_id);
    return it != resampled_flag_.end() && it->second;
  }

private:
  ReferenceGrid reference_grid(const DatasetSession& s) {
    if (atlas_) return ReferenceGrid::from_volume(*atlas_);
    const auto it = first_session_.find(s.meta.subject_id);
    if (it == first_session_.end()) {
      throw internal_error("no reference session for subject " + s.meta.subject_id);
    }
    return ReferenceGrid::from_volume(*native(it->second));
  }

  std::optional<fs::path> transform_path(const DatasetSession& s) const {
    if (!options_.resample || !options_.resample->transform_dir) return std::nullopt;
    const fs::path p = *options_.resample->transform_dir /
                       (s.meta.subject_id + "_" + s.meta.session_id + "_xfm.txt");
    if (fs::exists(p)) return p;
    return std::nullopt;
  }

  EvaluateOptions options_;
  VolumeCache cache_;
  std::shared_ptr<const LabelVolume> atlas_;
  std::map<std::string, DatasetSession> first_session_;
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const LabelVolume>> prepared_;
  std::map<std::string, bool> resampled_flag_;
};

}  // namespace

long Date::serial_day() const {
  return days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day));
}

std::string Date::iso() const {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", year, month, day);
  return buf;
}

Date parse_date(const std::string& text) {
  static const std::regex re(R"(^(\d{4})-(\d{2})-(\d{2})($|[T ].*))");
  std::smatch m;
  if (!std::regex_match(text, m, re)) {
    throw parse_error("invalid ISO-8601 date '" + text + "' (expected YYYY-MM-DD)");
  }
  Date d;
  d.year = std::stoi(m[1].str());
  d.month = std::stoi(m[2].str());
  d.day = std::stoi(m[3].str());
  if (d.month < 1 || d.month > 12 || d.day < 1 || d.day > days_in_month(d.year, d.month)) {
    throw parse_error("invalid calendar date '" + text + "'");
  }
  return d;
}

const char* to_string(DatasetLayout l) {
  return l == DatasetLayout::bids_like ? "bids_like" : "flat_pairs";
}

const char* to_string(PairPolicy p) {
  switch (p) {
    case PairPolicy::consecutive: return "consecutive";
    case PairPolicy::first_reference: return "first_reference";
    default: return "all_pairs";
  }
}

const char* to_string(GroupTag g) {
  switch (g) {
    case GroupTag::within_scanner: return "within_scanner";
    case GroupTag::cross_scanner: return "cross_scanner";
    default: return "unknown";
  }
}

DatasetLayout layout_from_string(const std::string& s) {
  if (s == "bids_like" || s == "bids") return DatasetLayout::bids_like;
  if (s == "flat_pairs" || s == "flat") return DatasetLayout::flat_pairs;
  throw usage_error("unknown layout '" + s + "' (expected bids_like|flat_pairs)");
}

PairPolicy policy_from_string(const std::string& s) {
  if (s == "consecutive") return PairPolicy::consecutive;
  if (s == "first_reference") return PairPolicy::first_reference;
  if (s == "all_pairs") return PairPolicy::all_pairs;
  throw usage_error("unknown policy '" + s +
                    "' (expected consecutive|first_reference|all_pairs)");
}

std::vector<DatasetSession> scan_dataset(const std::filesystem::path& root,
                                         DatasetLayout layout) {
  if (!fs::exists(root) || !fs::is_directory(root)) {
    throw usage_error(root.string() + ": dataset root is not a directory");
  }

  std::vector<DatasetSession> sessions;

  if (layout == DatasetLayout::bids_like) {
    for (const fs::path& sub : sorted_children(root)) {
      if (!fs::is_directory(sub) || !sub.filename().string().starts_with("sub-")) continue;
      for (const fs::path& ses : sorted_children(sub)) {
        if (!fs::is_directory(ses) || !ses.filename().string().starts_with("ses-")) continue;
        const fs::path anat = ses / "anat";
        if (!fs::is_directory(anat)) continue;
        for (const fs::path& file : sorted_children(anat)) {
          const std::string name = file.filename().string();
          if (!is_nifti_name(name)) continue;
          if (name.find("_dseg") == std::string::npos) continue;
          DatasetSession s;
          s.meta.subject_id = sub.filename().string();
          s.meta.session_id = ses.filename().string();
          s.volume_path = file;
          apply_sidecar(s.meta, sidecar_path(file));
          fill_voxel_size(s.meta, file);
          sessions.push_back(std::move(s));
        }
      }
    }
  } else {
    static const std::regex id_re(R"((sub-[A-Za-z0-9]+).*?(ses-[A-Za-z0-9]+))");
    for (const fs::path& file : sorted_children(root)) {
      if (!fs::is_regular_file(file)) continue;
      const std::string name = file.filename().string();
      if (!is_nifti_name(name)) continue;
      std::smatch m;
      if (!std::regex_search(name, m, id_re)) continue;
      DatasetSession s;
      s.meta.subject_id = m[1].str();
      s.meta.session_id = m[2].str();
      s.volume_path = file;
      apply_sidecar(s.meta, sidecar_path(file));
      fill_voxel_size(s.meta, file);
      sessions.push_back(std::move(s));
    }
  }

  if (sessions.empty()) {
    throw usage_error(root.string() + ": no sessions found (layout " +
                      std::string(to_string(layout)) + ")");
  }
  check_duplicates(sessions);
  return sessions;
}

ComparisonPlan build_plan(const std::vector<DatasetSession>& sessions, PairPolicy policy) {
  std::map<std::string, std::vector<DatasetSession>> by_subject;
  for (const DatasetSession& s : sessions) by_subject[s.meta.subject_id].push_back(s);

  ComparisonPlan plan;
  plan.policy = policy;
  for (auto& [subject, subject_sessions] : by_subject) {
    if (subject_sessions.size() < 2) continue;
    sort_subject_sessions(subject_sessions);
    const std::size_t n = subject_sessions.size();
    switch (policy) {
      case PairPolicy::consecutive:
        for (std::size_t i = 0; i + 1 < n; ++i) {
          plan.pairs.push_back({subject_sessions[i], subject_sessions[i + 1]});
        }
        break;
      case PairPolicy::first_reference:
        for (std::size_t i = 1; i < n; ++i) {
          plan.pairs.push_back({subject_sessions[0], subject_sessions[i]});
        }
        break;
      case PairPolicy::all_pairs:
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = i + 1; j < n; ++j) {
            plan.pairs.push_back({subject_sessions[i], subject_sessions[j]});
          }
        }
        break;
    }
  }
  if (plan.pairs.empty()) {
    throw usage_error("cannot build a comparison plan: no subject has 2 or more sessions");
  }
  return plan;
}

EvaluationResult evaluate_plan(const ComparisonPlan& plan, const RoiRegistry& registry,
                               const EvaluateOptions& options) {
  registry.validate();
  if (!(options.tolerance_mm > 0.0)) {
    throw usage_error("tolerance_mm must be > 0");
  }

  SessionVolumes volumes(plan, options);

  const std::size_t n_pairs = plan.pairs.size();
  std::vector<std::vector<MetricRecord>> per_pair(n_pairs);

  auto evaluate_pair = [&](std::size_t pi) {
    const PlannedPair& pair = plan.pairs[pi];
    const auto vol_a = volumes.prepared(pair.a);
    const auto vol_b = volumes.prepared(pair.b);
    if (!same_dims(vol_a->dims, vol_b->dims) ||
        !same_spacing(vol_a->spacing, vol_b->spacing) ||
        !affines_close(vol_a->affine, vol_b->affine, 1e-3)) {
      throw usage_error("grid mismatch between " + pair.a.volume_path.string() + " and " +
                        pair.b.volume_path.string() +
                        " (supply resampling configuration to align them)");
    }
    const GroupTag tag = group_of(pair.a.meta, pair.b.meta);
    std::vector<MetricRecord>& records = per_pair[pi];
    records.reserve(registry.entries.size() * options.sides.size());
    for (const RoiSpec& spec : registry.entries) {
      for (const Side side : options.sides) {
        MetricRecord rec;
        rec.subject_id = pair.a.meta.subject_id;
        rec.session_a = pair.a.meta.session_id;
        rec.session_b = pair.b.meta.session_id;
        rec.roi_name = spec.name;
        rec.roi_class = spec.roi_class;
        rec.side = side;
        rec.group_tag = tag;
        const BinaryMask mask_a = extract_mask(*vol_a, spec, side);
        const BinaryMask mask_b = extract_mask(*vol_b, spec, side);
        rec.metrics = pair_metrics(mask_a, mask_b, options.tolerance_mm);
        records.push_back(std::move(rec));
      }
    }
  };

  unsigned jobs = options.jobs > 0 ? static_cast<unsigned>(options.jobs)
                                   : std::max(1u, std::thread::hardware_concurrency());
  jobs = static_cast<unsigned>(std::min<std::size_t>(jobs, n_pairs));

  if (jobs <= 1) {
    for (std::size_t pi = 0; pi < n_pairs; ++pi) evaluate_pair(pi);
  } else {
    std::atomic<std::size_t> next{0};
    std::mutex err_mutex;
    std::exception_ptr first_error;
    auto worker = [&] {
      for (;;) {
        const std::size_t pi = next.fetch_add(1);
        if (pi >= n_pairs) return;
        try {
          evaluate_pair(pi);
        } catch (...) {
          std::lock_guard lock(err_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    pool.reserve(jobs);
    for (unsigned t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  EvaluationResult result;
  for (std::vector<MetricRecord>& records : per_pair) {
    for (MetricRecord& r : records) result.records.push_back(std::move(r));
  }

  // Per-session native vs resampled ROI volume deltas, for bounding the
  // interpolation effect.
  if (options.resample) {
    std::map<std::string, DatasetSession> unique_sessions;
    for (const PlannedPair& p : plan.pairs) {
      unique_sessions.try_emplace(p.a.meta.subject_id + "/" + p.a.meta.session_id, p.a);
      unique_sessions.try_emplace(p.b.meta.subject_id + "/" + p.b.meta.session_id, p.b);
    }
    for (const auto& [key, session] : unique_sessions) {
      if (!volumes.was_resampled(session)) continue;
      const auto nat = volumes.native(session);
      const auto prep = volumes.prepared(session);
      for (const RoiSpec& spec : registry.entries) {
        for (const Side side : options.sides) {
          ResampleDelta delta;
          delta.subject_id = session.meta.subject_id;
          delta.session_id = session.meta.session_id;
          delta.roi_name = spec.name;
          delta.side = side;
          delta.native_cm3 = mask_volume_cm3(extract_mask(*nat, spec, side));
          delta.resampled_cm3 = mask_volume_cm3(extract_mask(*prep, spec, side));
          result.resample_deltas.push_back(std::move(delta));
        }
      }
    }
  }
  return result;
}

AcquisitionSummary summarize_acquisition(const std::vector<DatasetSession>& sessions) {
  AcquisitionSummary summary;

  std::vector<double> te, tr, vx, vy, vz, gaps;
  for (const DatasetSession& s : sessions) {
    if (s.meta.echo_time_ms) te.push_back(*s.meta.echo_time_ms);
    if (s.meta.repetition_time_ms) tr.push_back(*s.meta.repetition_time_ms);
    if (s.meta.voxel_size_mm) {
      vx.push_back((*s.meta.voxel_size_mm)[0]);
      vy.push_back((*s.meta.voxel_size_mm)[1]);
      vz.push_back((*s.meta.voxel_size_mm)[2]);
    }
  }

  std::map<std::string, std::vector<long>> dated;
  for (const DatasetSession& s : sessions) {
    if (s.meta.acquisition_date) {
      dated[s.meta.subject_id].push_back(s.meta.acquisition_date->serial_day());
    }
  }
  for (auto& [subject, days] : dated) {
    std::sort(days.begin(), days.end());
    for (std::size_t i = 0; i + 1 < days.size(); ++i) {
      gaps.push_back(static_cast<double>(days[i + 1] - days[i]));
    }
  }

  summarize_values(summary.echo_time_ms, te);
  summarize_values(summary.repetition_time_ms, tr);
  summarize_values(summary.voxel_x_mm, vx);
  summarize_values(summary.voxel_y_mm, vy);
  summarize_values(summary.voxel_z_mm, vz);
  summarize_values(summary.retest_gap_days, gaps);
  return summary;
}

}  // namespace segstab
