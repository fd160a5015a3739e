#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "segstab/errors.hpp"
#include "segstab/run.hpp"

namespace {

int dispatch(int argc, char** argv) {
  CLI::App app{"segstab: reproducibility metrics for brain-segmentation label volumes"};
  app.require_subcommand(1);

  // compare
  auto* compare = app.add_subcommand("compare", "Compare two label volumes ROI by ROI");
  segstab::CompareOptions copt;
  std::string compare_registry, compare_json, compare_transform;
  compare->add_option("volume_a", copt.volume_a, "first (reference) label volume")->required();
  compare->add_option("volume_b", copt.volume_b, "second label volume")->required();
  compare->add_option("--tolerance-mm", copt.tolerance_mm, "surface dice tolerance in mm");
  compare->add_option("--registry", compare_registry, "ROI registry override (JSON)");
  compare->add_option("--json", compare_json, "also write the table as JSON");
  compare->add_option("--transform", compare_transform,
                      "world(b)<-world(a) affine; resamples b onto a's grid");

  // batch
  auto* batch = app.add_subcommand("batch", "Run the full dataset pipeline from a config");
  std::string batch_config;
  std::optional<int> batch_jobs;
  std::optional<double> batch_tolerance;
  std::optional<std::string> batch_policy, batch_registry, batch_ref, batch_atlas;
  batch->add_option("--config", batch_config, "RunConfig JSON file")->required();
  batch->add_option("--jobs", batch_jobs, "worker count override");
  batch->add_option("--tolerance-mm", batch_tolerance, "tolerance override");
  batch->add_option("--policy", batch_policy,
                    "pairing policy override (consecutive|first_reference|all_pairs)");
  batch->add_option("--registry", batch_registry, "ROI registry override (JSON)");
  batch->add_option("--ref", batch_ref,
                    "resampling reference override (first-session|atlas)");
  batch->add_option("--atlas", batch_atlas, "atlas volume for --ref atlas");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic BIDS-like label dataset");
  segstab::SynthCliOptions sopt;
  std::string synth_registry;
  synth->add_option("--spec", sopt.spec_path, "synthetic dataset spec (JSON)")->required();
  synth->add_option("--out", sopt.out_dir, "output directory")->required();
  synth->add_option("--seed", sopt.seed, "RNG seed");
  synth->add_option("--registry", synth_registry, "ROI registry override (JSON)");

  // selftest
  auto* selftest =
      app.add_subcommand("selftest", "Check optimized kernels against brute-force oracles");
  segstab::SelftestOptions topt;
  std::string selftest_batch_dir;
  selftest->add_option("--seed", topt.seed, "RNG seed");
  selftest->add_option("--cases", topt.cases, "number of random instances");
  selftest->add_option("--batch-dir", selftest_batch_dir,
                       "check summary.json against records.csv in this batch output dir");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? segstab::kExitOk : segstab::kExitUsage;
  }

  if (compare->parsed()) {
    if (!compare_registry.empty()) copt.registry_path = compare_registry;
    if (!compare_json.empty()) copt.json_out = compare_json;
    if (!compare_transform.empty()) copt.transform_path = compare_transform;
    segstab::run_compare(copt, std::cout);
    return segstab::kExitOk;
  }

  if (batch->parsed()) {
    segstab::RunConfig config = segstab::load_run_config(batch_config);
    if (batch_jobs) config.jobs = *batch_jobs;
    if (batch_tolerance) config.tolerance_mm = *batch_tolerance;
    if (batch_policy) config.policy = segstab::policy_from_string(*batch_policy);
    if (batch_registry) config.registry_path = *batch_registry;
    if (batch_ref) {
      segstab::ResampleOptions rs = config.resample.value_or(segstab::ResampleOptions{});
      if (*batch_ref == "first-session" || *batch_ref == "first_session") {
        rs.reference = segstab::ResampleOptions::Reference::first_session;
      } else if (*batch_ref == "atlas") {
        rs.reference = segstab::ResampleOptions::Reference::atlas;
        if (batch_atlas) rs.atlas_path = *batch_atlas;
        if (rs.atlas_path.empty()) {
          throw segstab::usage_error("--ref atlas requires --atlas <path>");
        }
      } else {
        throw segstab::usage_error("--ref expects first-session|atlas, got '" + *batch_ref + "'");
      }
      config.resample = rs;
    }
    segstab::run_batch(config);
    return segstab::kExitOk;
  }

  if (synth->parsed()) {
    if (!synth_registry.empty()) sopt.registry_path = synth_registry;
    segstab::run_synth(sopt);
    return segstab::kExitOk;
  }

  if (!selftest_batch_dir.empty()) topt.batch_dir = selftest_batch_dir;
  return segstab::run_selftest(topt, std::cout) ? segstab::kExitOk
                                                : segstab::kExitInternal;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const segstab::parse_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return segstab::kExitParse;
  } catch (const segstab::usage_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return segstab::kExitUsage;
  } catch (const segstab::internal_error& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return segstab::kExitInternal;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return segstab::kExitInternal;
  }
}
