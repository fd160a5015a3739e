#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <sstream>

#include "json.hpp"
#include "segstab/errors.hpp"
#include "segstab/nifti.hpp"
#include "segstab/run.hpp"
#include "support.hpp"

using namespace segstab;
using segstab::test::ScratchDir;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;
};

CliResult run_cli(const std::string& args, const std::filesystem::path& scratch) {
  const std::filesystem::path log = scratch / "cli-output.txt";
  const std::string cmd =
      std::string(SEGSTAB_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  CliResult result;
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  result.output = test::read_text(log);
  return result;
}

LabelVolume hippo_volume() {
  LabelVolume vol;
  vol.dims = {20, 20, 20};
  vol.spacing = {1.0, 1.0, 1.0};
  vol.affine = Affine4::scaling(vol.spacing);
  vol.labels.assign(vol.voxel_count(), 0);
  for (int z = 0; z < 20; ++z)
    for (int y = 0; y < 20; ++y)
      for (int x = 0; x < 20; ++x) {
        const double dl = (x - 5.0) * (x - 5.0) + (y - 10.0) * (y - 10.0) +
                          (z - 10.0) * (z - 10.0);
        const double dr = (x - 14.0) * (x - 14.0) + (y - 10.0) * (y - 10.0) +
                          (z - 10.0) * (z - 10.0);
        if (dl <= 9.0) vol.at(x, y, z) = 17;
        if (dr <= 9.0) vol.at(x, y, z) = 53;
      }
  return vol;
}

std::string synth_spec_json(int sessions, const std::string& extra_perturbations = "") {
  std::ostringstream os;
  os << R"({
    "subject": "sub-01",
    "sessions": )"
     << sessions << R"(,
    "dims": [28, 28, 28],
    "spacing": [1.0, 1.0, 1.0],
    "start_date": "2020-01-01",
    "interval_days": 30,
    "scanner_tags": ["SCAN-A"],
    "rois": [
      {"name": "Hippocampus", "radius_vox": 4},
      {"name": "Amygdala", "radius_vox": 3}
    ])";
  if (!extra_perturbations.empty()) {
    os << ",\n    \"perturbations\": [" << extra_perturbations << "]";
  }
  os << "\n}";
  return os.str();
}

}  // namespace

TEST_CASE("config round-trips through its file form losslessly") {
  ScratchDir scratch("cli-config");
  RunConfig config;
  config.dataset_root = "/data/ds";
  config.layout = DatasetLayout::flat_pairs;
  config.policy = PairPolicy::all_pairs;
  config.registry_path = "/data/registry.json";
  config.tolerance_mm = 1.5;
  config.sides = {Side::left, Side::right, Side::both};
  config.filter_rules = {{FilterMetric::dice, 0.8, FilterScope::all},
                         {FilterMetric::surface_dice, 0.92, FilterScope::subcortical}};
  ResampleOptions rs;
  rs.reference = ResampleOptions::Reference::atlas;
  rs.atlas_path = "/data/atlas.nii.gz";
  rs.transform_dir = "/data/xfms";
  config.resample = rs;
  config.output_dir = "/tmp/out";
  config.jobs = 4;
  config.seed = 99;
  config.ci_band = CiBand::observation;

  save_run_config(config, scratch / "config.json");
  const RunConfig back = load_run_config(scratch / "config.json");
  CHECK(back == config);
  // serialized form is stable through a second round trip
  CHECK(run_config_to_json(back) == run_config_to_json(config));

  // defaults: omitted filters fall back to the three-rule set
  test::write_text(scratch / "min.json",
                   R"({"dataset_root": "/d", "output_dir": "/o"})");
  const RunConfig minimal = load_run_config(scratch / "min.json");
  CHECK(minimal.filter_rules == default_filter_rules());
  CHECK(minimal.tolerance_mm == 1.0);
  CHECK(minimal.policy == PairPolicy::consecutive);
}

TEST_CASE("compare: self-comparison prints perfect rows and valid JSON") {
  ScratchDir scratch("cli-compare");
  write_label_volume(hippo_volume(), scratch / "a.nii.gz");

  const CliResult r = run_cli("compare " + (scratch / "a.nii.gz").string() + " " +
                                  (scratch / "a.nii.gz").string() + " --json " +
                                  (scratch / "out.json").string(),
                              scratch.path());
  CHECK(r.exit_code == 0);

  // header names the published column set
  CHECK(r.output.find("roi") != std::string::npos);
  CHECK(r.output.find("side") != std::string::npos);
  CHECK(r.output.find("dice") != std::string::npos);
  CHECK(r.output.find("surface_dice") != std::string::npos);
  CHECK(r.output.find("hd95_mm") != std::string::npos);
  CHECK(r.output.find("vol_a_cm3") != std::string::npos);
  CHECK(r.output.find("vol_b_cm3") != std::string::npos);
  CHECK(r.output.find("vol_diff_cm3") != std::string::npos);
  CHECK(r.output.find("Hippocampus") != std::string::npos);

  // JSON validates against the documented schema
  nlohmann::json doc = nlohmann::json::parse(test::read_text(scratch / "out.json"));
  CHECK(doc.at("tool") == "segstab");
  CHECK(doc.at("tolerance_mm").is_number());
  REQUIRE(doc.at("rows").is_array());
  REQUIRE(doc["rows"].size() == 34);  // default registry, two sides
  bool found_hippo_left = false;
  for (const auto& row : doc["rows"]) {
    CHECK(row.contains("roi"));
    CHECK(row.contains("side"));
    CHECK(row.contains("dice"));
    CHECK(row.contains("surface_dice"));
    CHECK(row.contains("hd95_mm"));
    CHECK(row.contains("vol_a_cm3"));
    CHECK(row.contains("vol_b_cm3"));
    CHECK(row.contains("vol_diff_cm3"));
    CHECK(row.contains("empty_cause"));
    if (row["roi"] == "Hippocampus" && row["side"] == "left") {
      found_hippo_left = true;
      CHECK(row["dice"].get<double>() == 1.0);
      CHECK(row["surface_dice"].get<double>() == 1.0);
      CHECK(row["hd95_mm"].get<double>() == 0.0);
      CHECK(row["vol_diff_cm3"].get<double>() == 0.0);
    }
  }
  CHECK(found_hippo_left);
}

TEST_CASE("compare exit codes: 2 on grid mismatch, 3 on parse failure") {
  ScratchDir scratch("cli-codes");
  write_label_volume(hippo_volume(), scratch / "a.nii.gz");

  LabelVolume other = hippo_volume();
  other.dims = {22, 20, 20};
  other.labels.assign(other.voxel_count(), 0);
  write_label_volume(other, scratch / "b.nii.gz");

  const CliResult mismatch = run_cli(
      "compare " + (scratch / "a.nii.gz").string() + " " + (scratch / "b.nii.gz").string(),
      scratch.path());
  CHECK(mismatch.exit_code == 2);
  CHECK(mismatch.output.find("grid mismatch") != std::string::npos);
  CHECK(mismatch.output.find("b.nii.gz") != std::string::npos);

  test::write_text(scratch / "junk.nii", "this is not nifti");
  const CliResult junk = run_cli(
      "compare " + (scratch / "a.nii.gz").string() + " " + (scratch / "junk.nii").string(),
      scratch.path());
  CHECK(junk.exit_code == 3);
  CHECK(junk.output.find("junk.nii") != std::string::npos);

  const CliResult usage = run_cli("compare", scratch.path());
  CHECK(usage.exit_code == 2);
}

TEST_CASE("batch writes the four outputs with deterministic bytes") {
  ScratchDir scratch("cli-batch");
  test::write_text(scratch / "synth.json", synth_spec_json(5));
  REQUIRE(run_cli("synth --spec " + (scratch / "synth.json").string() + " --out " +
                      (scratch / "ds").string() + " --seed 7",
                  scratch.path())
              .exit_code == 0);

  RunConfig config;
  config.dataset_root = scratch / "ds";
  config.output_dir = scratch / "out1";
  save_run_config(config, scratch / "config1.json");
  const CliResult r1 =
      run_cli("batch --config " + (scratch / "config1.json").string(), scratch.path());
  CHECK(r1.exit_code == 0);

  // 5 sessions consecutive -> 4 pairs x 17 ROIs x 2 sides = 136 rows
  const std::string records = test::read_text(scratch / "out1" / "records.csv");
  std::size_t lines = 0;
  for (const char c : records) lines += c == '\n';
  CHECK(lines == 137);  // header + 136

  CHECK(std::filesystem::exists(scratch / "out1" / "summary.json"));
  CHECK(std::filesystem::exists(scratch / "out1" / "trend.csv"));
  CHECK(std::filesystem::exists(scratch / "out1" / "filter_report.json"));

  // three default filter rules mirror the three-row table
  nlohmann::json reports =
      nlohmann::json::parse(test::read_text(scratch / "out1" / "filter_report.json"));
  REQUIRE(reports.is_array());
  CHECK(reports.size() == 3);
  CHECK(reports[0].at("metric") == "surface_dice");
  CHECK(reports[0].at("threshold") == 0.92);
  CHECK(reports[2].at("metric") == "dice");
  for (const auto& rep : reports) {
    CHECK(rep.contains("percent_filtered"));
    CHECK(rep.contains("mape_p75"));
    CHECK(rep.contains("mape_p95"));
  }

  // a rerun into a second directory is byte-identical
  config.output_dir = scratch / "out2";
  save_run_config(config, scratch / "config2.json");
  REQUIRE(run_cli("batch --config " + (scratch / "config2.json").string(), scratch.path())
              .exit_code == 0);
  for (const char* name : {"records.csv", "trend.csv", "filter_report.json"}) {
    CHECK(test::read_text(scratch / "out1" / name) ==
          test::read_text(scratch / "out2" / name));
  }
  // summary embeds the config (which names the output dir), so compare the
  // rest of it via reparse minus that field
  nlohmann::json s1 = nlohmann::json::parse(test::read_text(scratch / "out1" / "summary.json"));
  nlohmann::json s2 = nlohmann::json::parse(test::read_text(scratch / "out2" / "summary.json"));
  s1.erase("config");
  s2.erase("config");
  CHECK(s1 == s2);

  // batch totals survive the shipped cross-artifact consistency check
  const CliResult st = run_cli("selftest --batch-dir " + (scratch / "out1").string(),
                               scratch.path());
  CHECK(st.exit_code == 0);
  CHECK(st.output.find("[PASS]") != std::string::npos);
  CHECK(st.output.find("[FAIL]") == std::string::npos);
}

TEST_CASE("batch respects worker-count overrides without changing bytes") {
  ScratchDir scratch("cli-jobs");
  test::write_text(scratch / "synth.json", synth_spec_json(4));
  REQUIRE(run_cli("synth --spec " + (scratch / "synth.json").string() + " --out " +
                      (scratch / "ds").string() + " --seed 3",
                  scratch.path())
              .exit_code == 0);

  RunConfig config;
  config.dataset_root = scratch / "ds";

  std::vector<std::string> outputs;
  int i = 0;
  for (const int jobs : {1, 4}) {
    config.jobs = jobs;
    config.output_dir = scratch / ("out-" + std::to_string(i));
    save_run_config(config, scratch / "config.json");
    REQUIRE(run_cli("batch --config " + (scratch / "config.json").string(), scratch.path())
                .exit_code == 0);
    outputs.push_back(test::read_text(config.output_dir / "records.csv"));
    ++i;
  }
  CHECK(outputs[0] == outputs[1]);
}

TEST_CASE("batch filter report counts injected corruption") {
  ScratchDir scratch("cli-corrupt");
  // ses-02 hippocampus-left corrupted below 0.92 by construction
  test::write_text(scratch / "synth.json",
                   synth_spec_json(3,
                                   R"({"session": "ses-02", "roi": "Hippocampus",
                                       "side": "left", "kind": "erode_to_surface_dice",
                                       "target_max": 0.92, "target_min": 0.60})"));
  REQUIRE(run_cli("synth --spec " + (scratch / "synth.json").string() + " --out " +
                      (scratch / "ds").string() + " --seed 11",
                  scratch.path())
              .exit_code == 0);

  // registry override restricted to the synthesized ROIs
  test::write_text(scratch / "registry.json", R"([
    {"name": "Hippocampus", "left_ids": [17], "right_ids": [53], "class": "subcortical"},
    {"name": "Amygdala", "left_ids": [18], "right_ids": [54], "class": "subcortical"}
  ])");

  RunConfig config;
  config.dataset_root = scratch / "ds";
  config.registry_path = scratch / "registry.json";
  config.output_dir = scratch / "out";
  config.filter_rules = {{FilterMetric::surface_dice, 0.92, FilterScope::all}};
  save_run_config(config, scratch / "config.json");
  REQUIRE(run_cli("batch --config " + (scratch / "config.json").string(), scratch.path())
              .exit_code == 0);

  // 2 pairs x 2 ROIs x 2 sides = 8 records; both pairs touching ses-02 deviate
  // on hippocampus-left only
  nlohmann::json reports =
      nlohmann::json::parse(test::read_text(scratch / "out" / "filter_report.json"));
  REQUIRE(reports.size() == 1);
  CHECK(reports[0].at("structures_total") == 8);
  CHECK(reports[0].at("structures_removed") == 2);
  CHECK(reports[0].at("undefined_removed") == 0);
  CHECK(reports[0].at("percent_filtered").get<double>() == doctest::Approx(25.0));
}

TEST_CASE("batch propagates dataset errors with context") {
  ScratchDir scratch("cli-batch-errs");
  std::filesystem::create_directories(scratch / "empty");
  RunConfig config;
  config.dataset_root = scratch / "empty";
  config.output_dir = scratch / "out";
  save_run_config(config, scratch / "config.json");
  const CliResult r =
      run_cli("batch --config " + (scratch / "config.json").string(), scratch.path());
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("no sessions found") != std::string::npos);
  // no partial outputs
  CHECK(!std::filesystem::exists(scratch / "out" / "records.csv"));

  const CliResult missing =
      run_cli("batch --config " + (scratch / "nonexistent.json").string(), scratch.path());
  CHECK(missing.exit_code == 3);
}

TEST_CASE("synth CLI is deterministic for a seed") {
  ScratchDir scratch("cli-synth");
  test::write_text(scratch / "synth.json", synth_spec_json(3));
  REQUIRE(run_cli("synth --spec " + (scratch / "synth.json").string() + " --out " +
                      (scratch / "t1").string() + " --seed 7",
                  scratch.path())
              .exit_code == 0);
  REQUIRE(run_cli("synth --spec " + (scratch / "synth.json").string() + " --out " +
                      (scratch / "t2").string() + " --seed 7",
                  scratch.path())
              .exit_code == 0);
  for (const char* rel : {"manifest.json", "sub-01/ses-01/anat/sub-01_ses-01_dseg.nii.gz",
                          "sub-01/ses-03/anat/sub-01_ses-03_dseg.json"}) {
    CHECK(test::read_text(scratch.path() / "t1" / rel) ==
          test::read_text(scratch.path() / "t2" / rel));
  }

  const CliResult bad_spec = run_cli(
      "synth --spec " + (scratch / "missing.json").string() + " --out " +
          (scratch / "t3").string(),
      scratch.path());
  CHECK(bad_spec.exit_code == 3);
}

TEST_CASE("selftest passes on the shipped kernels") {
  ScratchDir scratch("cli-selftest");
  const CliResult r = run_cli("selftest --cases 10 --seed 5", scratch.path());
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("[FAIL]") == std::string::npos);
  // one line per check, all passing
  std::size_t passes = 0;
  std::size_t pos = 0;
  while ((pos = r.output.find("[PASS]", pos)) != std::string::npos) {
    ++passes;
    pos += 6;
  }
  CHECK(passes == 8);
}

TEST_CASE("records.csv carries 6-significant-digit textual values") {
  ScratchDir scratch("cli-fmt");
  test::write_text(scratch / "synth.json",
                   synth_spec_json(2, R"({"session": "ses-02", "roi": "Hippocampus",
                                          "side": "left", "kind": "noise_flips",
                                          "flips": 30})"));
  REQUIRE(run_cli("synth --spec " + (scratch / "synth.json").string() + " --out " +
                      (scratch / "ds").string() + " --seed 2",
                  scratch.path())
              .exit_code == 0);
  RunConfig config;
  config.dataset_root = scratch / "ds";
  config.output_dir = scratch / "out";
  save_run_config(config, scratch / "config.json");
  REQUIRE(run_cli("batch --config " + (scratch / "config.json").string(), scratch.path())
              .exit_code == 0);

  std::istringstream records(test::read_text(scratch / "out" / "records.csv"));
  std::string line;
  std::getline(records, line);  // header
  while (std::getline(records, line)) {
    std::size_t start = 0, column = 0;
    while (start <= line.size()) {
      const std::size_t comma = line.find(',', start);
      const std::string field = line.substr(
          start, comma == std::string::npos ? std::string::npos : comma - start);
      // numeric fields: no more than 6 significant digits survive
      if (column >= 7 && column <= 12 && !field.empty()) {
        std::size_t digits = 0;
        bool leading = true;
        for (const char c : field) {
          if (c == 'e' || c == 'E') break;
          if (c >= '1' && c <= '9') leading = false;
          if (!leading && c >= '0' && c <= '9') ++digits;
        }
        CHECK(digits <= 6);
      }
      if (comma == std::string::npos) break;
      start = comma + 1;
      ++column;
    }
  }
}

TEST_CASE("SEGSTAB_JOBS env var overrides worker count without changing bytes") {
  ScratchDir scratch("cli-env");
  test::write_text(scratch / "synth.json", synth_spec_json(3));
  REQUIRE(run_cli("synth --spec " + (scratch / "synth.json").string() + " --out " +
                      (scratch / "ds").string() + " --seed 4",
                  scratch.path())
              .exit_code == 0);
  RunConfig config;
  config.dataset_root = scratch / "ds";
  config.output_dir = scratch / "out1";
  save_run_config(config, scratch / "c1.json");
  REQUIRE(run_cli("batch --config " + (scratch / "c1.json").string(), scratch.path())
              .exit_code == 0);

  config.output_dir = scratch / "out2";
  save_run_config(config, scratch / "c2.json");
  const std::string cmd = "SEGSTAB_JOBS=3 " + std::string(SEGSTAB_CLI_PATH) +
                          " batch --config " + (scratch / "c2.json").string();
  REQUIRE(std::system(cmd.c_str()) == 0);
  CHECK(test::read_text(scratch / "out1" / "records.csv") ==
        test::read_text(scratch / "out2" / "records.csv"));

  const std::string bad = "SEGSTAB_JOBS=banana " + std::string(SEGSTAB_CLI_PATH) +
                          " batch --config " + (scratch / "c2.json").string() +
                          " > /dev/null 2>&1";
  const int status = std::system(bad.c_str());
  CHECK(WEXITSTATUS(status) == 2);
}

TEST_CASE("selftest --batch-dir detects tampered outputs with exit code 4") {
  ScratchDir scratch("cli-tamper");
  test::write_text(scratch / "synth.json", synth_spec_json(3));
  REQUIRE(run_cli("synth --spec " + (scratch / "synth.json").string() + " --out " +
                      (scratch / "ds").string() + " --seed 6",
                  scratch.path())
              .exit_code == 0);
  RunConfig config;
  config.dataset_root = scratch / "ds";
  config.output_dir = scratch / "out";
  save_run_config(config, scratch / "config.json");
  REQUIRE(run_cli("batch --config " + (scratch / "config.json").string(), scratch.path())
              .exit_code == 0);

  // drop the last record row; totals no longer match
  std::string records = test::read_text(scratch / "out" / "records.csv");
  records.erase(records.rfind('\n', records.size() - 2) + 1);
  test::write_text(scratch / "out" / "records.csv", records);

  const CliResult r =
      run_cli("selftest --batch-dir " + (scratch / "out").string(), scratch.path());
  CHECK(r.exit_code == 4);
  CHECK(r.output.find("[FAIL]") != std::string::npos);
}

TEST_CASE("compare --transform aligns volumes on different grids") {
  ScratchDir scratch("cli-transform");
  const LabelVolume a = hippo_volume();
  LabelVolume b = hippo_volume();
  b.dims = {24, 24, 24};  // larger FOV, same world content
  b.labels.assign(b.voxel_count(), 0);
  const LabelVolume src = hippo_volume();
  for (int z = 0; z < 20; ++z)
    for (int y = 0; y < 20; ++y)
      for (int x = 0; x < 20; ++x) b.at(x, y, z) = src.at(x, y, z);
  write_label_volume(a, scratch / "a.nii.gz");
  write_label_volume(b, scratch / "b.nii.gz");
  test::write_text(scratch / "identity.txt", "1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n");

  // without a transform: grid mismatch
  CHECK(run_cli("compare " + (scratch / "a.nii.gz").string() + " " +
                    (scratch / "b.nii.gz").string(),
                scratch.path())
            .exit_code == 2);

  const CliResult r = run_cli(
      "compare " + (scratch / "a.nii.gz").string() + " " + (scratch / "b.nii.gz").string() +
          " --transform " + (scratch / "identity.txt").string() + " --json " +
          (scratch / "out.json").string(),
      scratch.path());
  CHECK(r.exit_code == 0);
  nlohmann::json doc = nlohmann::json::parse(test::read_text(scratch / "out.json"));
  for (const auto& row : doc["rows"]) {
    if (row["roi"] == "Hippocampus") {
      CHECK(row["dice"].get<double>() == 1.0);
    }
  }
}

TEST_CASE("batch --ref first-session enables resampling from the CLI") {
  ScratchDir scratch("cli-ref");
  // two sessions on different grids, same world-space content
  const LabelVolume small = hippo_volume();
  LabelVolume big;
  big.dims = {24, 24, 24};
  big.spacing = {1.0, 1.0, 1.0};
  big.affine = Affine4::scaling(big.spacing);
  big.labels.assign(big.voxel_count(), 0);
  for (int z = 0; z < 20; ++z)
    for (int y = 0; y < 20; ++y)
      for (int x = 0; x < 20; ++x) big.at(x, y, z) = small.at(x, y, z);

  const auto anat1 = scratch.path() / "ds" / "sub-01" / "ses-01" / "anat";
  const auto anat2 = scratch.path() / "ds" / "sub-01" / "ses-02" / "anat";
  std::filesystem::create_directories(anat1);
  std::filesystem::create_directories(anat2);
  write_label_volume(small, anat1 / "sub-01_ses-01_dseg.nii.gz");
  write_label_volume(big, anat2 / "sub-01_ses-02_dseg.nii.gz");

  RunConfig config;
  config.dataset_root = scratch / "ds";
  config.output_dir = scratch / "out";
  save_run_config(config, scratch / "config.json");

  // fails without resampling, passes with --ref first-session
  CHECK(run_cli("batch --config " + (scratch / "config.json").string(), scratch.path())
            .exit_code == 2);
  const CliResult r = run_cli("batch --config " + (scratch / "config.json").string() +
                                  " --ref first-session",
                              scratch.path());
  CHECK(r.exit_code == 0);

  nlohmann::json summary =
      nlohmann::json::parse(test::read_text(scratch / "out" / "summary.json"));
  CHECK(summary.at("totals").at("records") == 34);
  CHECK(!summary.at("resample_deltas").empty());
}
