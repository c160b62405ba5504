// Command-line surface: eligibility filtering, attack/noise campaigns,
// suitability scoring, and CSV report emission over a record store.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "advsource/dataset.hpp"
#include "advsource/error.hpp"
#include "advsource/experiments.hpp"
#include "advsource/models.hpp"
#include "advsource/reports.hpp"
#include "advsource/store.hpp"

namespace {

using namespace advsource;

void print_hash(const std::string& hash) { std::cout << "plan hash: " << hash << "\n"; }

std::string command_hash(const std::string& command, const nlohmann::json& options) {
  nlohmann::json j{{"command", command}, {"options", options}};
  return plan_hash_of(j);
}

int cmd_filter_eligible(const std::string& models, const std::string& manifest,
                        const std::string& out, std::uint64_t seed) {
  print_hash(command_hash("filter-eligible",
                          {{"models", models}, {"manifest", manifest}, {"seed", seed}}));
  const Ensemble ensemble = load_ensemble(models);
  const auto entries = load_manifest(manifest);
  const auto base_dir = std::filesystem::path(manifest).parent_path();
  const auto out_dir = std::filesystem::path(out).parent_path();
  const bool same_dir = std::filesystem::weakly_canonical(base_dir.empty() ? "." : base_dir) ==
                        std::filesystem::weakly_canonical(out_dir.empty() ? "." : out_dir);

  std::vector<ManifestEntry> kept;
  for (const auto& e : entries) {
    std::filesystem::path p = e.path;
    if (p.is_relative()) p = base_dir / p;
    const ImageTensor img = load_image(p, e.image_id, e.true_class);
    if (is_eligible(ensemble, img)) {
      ManifestEntry copy = e;
      if (!same_dir) copy.path = std::filesystem::weakly_canonical(p).string();
      kept.push_back(std::move(copy));
    }
  }
  save_manifest(out, kept);
  std::cout << "eligible: " << kept.size() << " of " << entries.size() << " images\n";
  return 0;
}

int cmd_campaign(const std::string& plan_path, const std::string& store_dir,
                 std::optional<std::uint64_t> seed, CampaignScope scope) {
  CampaignPlan plan = CampaignPlan::from_file(plan_path, seed);
  if (!store_dir.empty()) plan.store_dir = store_dir;
  print_hash(plan.plan_hash());
  const RecordStore store = run_campaign(plan, scope);
  std::cout << "store: " << store.root().string() << " (" << store.record_count()
            << " records)\n";
  return 0;
}

RecordStore open_store(const std::string& dir) { return RecordStore::open(dir); }

int cmd_report_matrix(const std::string& store_dir, const std::string& out,
                      const std::string& attack, const std::string& mode, std::uint64_t seed) {
  print_hash(command_hash("report-matrix", {{"store", store_dir},
                                            {"attack", attack},
                                            {"mode", mode},
                                            {"seed", seed}}));
  const RecordStore store = open_store(store_dir);
  const AttackKind kind = attack_kind_from_string(attack);
  const auto& model_ids = store.manifest().model_ids;

  std::vector<AttackRecord> records;
  std::set<std::string> image_set;
  for (const auto& r : store.load_all()) {
    if (r.attack_kind != kind) continue;
    records.push_back(r);
    image_set.insert(r.image_id);
  }
  TransferMatrix matrix;
  if (records.empty()) {
    // An empty store still produces a well-formed all-zero matrix.
    matrix.num_models = static_cast<int>(model_ids.size());
    matrix.cells.assign(model_ids.size() * model_ids.size(), 0.0);
  } else {
    const std::vector<std::string> images(image_set.begin(), image_set.end());
    matrix = transfer_matrix(records, images, static_cast<int>(model_ids.size()),
                             mode == "targeted" ? MatrixMode::kTargeted : MatrixMode::kUntargeted);
  }
  write_matrix_csv(out, matrix, model_ids);
  return 0;
}

int cmd_report_histogram(const std::string& store_dir, const std::string& out,
                         const std::string& attack, int bins, std::uint64_t seed) {
  print_hash(command_hash("report-histogram", {{"store", store_dir},
                                               {"attack", attack},
                                               {"bins", bins},
                                               {"seed", seed}}));
  const RecordStore store = open_store(store_dir);
  std::optional<AttackKind> kind;
  if (attack != "mean") kind = attack_kind_from_string(attack);
  int effective_bins = bins;
  if (effective_bins <= 0) {
    const int n = static_cast<int>(store.manifest().model_ids.size());
    effective_bins = n * (n - 1) + 1;  // one bin per integer T value
  }
  write_histogram_csv(out, histogram_transfer_counts(store, kind, effective_bins));
  return 0;
}

int cmd_report_correlation(const std::string& store_dir, const std::string& scores_path,
                           const std::string& out, std::uint64_t seed) {
  print_hash(command_hash("report-correlation", {{"store", store_dir},
                                                 {"scores", scores_path},
                                                 {"seed", seed}}));
  const RecordStore store = open_store(store_dir);
  const auto scores = read_scores_csv(scores_path);
  write_correlation_csv(out, correlation_study(store, scores));
  return 0;
}

std::vector<std::string> read_id_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open image-id list: " + path.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

int cmd_report_sampling(const std::string& store_dir, const std::string& out, int n, int reps,
                        const std::vector<std::string>& subset_specs, std::uint64_t seed) {
  print_hash(command_hash("report-sampling", {{"store", store_dir},
                                              {"n", n},
                                              {"reps", reps},
                                              {"subsets", subset_specs},
                                              {"seed", seed}}));
  const RecordStore store = open_store(store_dir);
  std::vector<std::string> names{"S"};
  std::vector<SamplingReport> reports;
  reports.push_back(sampling_study(store, n, reps, seed));
  for (const auto& spec : subset_specs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) {
      throw ArgumentError("--subset expects NAME=FILE, got '" + spec + "'");
    }
    names.push_back(spec.substr(0, eq));
    reports.push_back(sampling_study(store, n, reps, seed, read_id_file(spec.substr(eq + 1))));
  }
  write_sampling_csv(out, names, reports);
  return 0;
}

int cmd_report_split(const std::string& store_dir, const std::string& out, std::uint64_t seed) {
  print_hash(command_hash("report-split", {{"store", store_dir}, {"seed", seed}}));
  const RecordStore store = open_store(store_dir);
  write_split_csv(out, split_report(store), store.manifest().model_ids);
  return 0;
}

int cmd_score(const std::string& models, const std::string& manifest, const std::string& out,
              std::uint64_t seed) {
  print_hash(
      command_hash("score", {{"models", models}, {"manifest", manifest}, {"seed", seed}}));
  const Ensemble ensemble = load_ensemble(models);
  const auto images = load_images(manifest);
  write_scores_csv(out, score_images(ensemble, images));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Measures how source-image choice affects adversarial-attack outcomes"};
  app.require_subcommand(1);

  // filter-eligible
  std::string fe_models, fe_manifest, fe_out;
  std::uint64_t fe_seed = 0;
  auto* fe = app.add_subcommand("filter-eligible",
                                "Keep images correctly classified by every model");
  fe->add_option("--models", fe_models, "Model registry config")->required();
  fe->add_option("--manifest", fe_manifest, "Input image manifest")->required();
  fe->add_option("--out", fe_out, "Output manifest of eligible images")->required();
  fe->add_option("--seed", fe_seed, "Seed (recorded in the plan hash)");

  // attack / noise
  std::string at_plan, at_store;
  std::optional<std::uint64_t> at_seed;
  auto* at = app.add_subcommand("attack", "Run the adversarial attack campaign of a plan");
  at->add_option("--plan", at_plan, "Campaign plan file")->required();
  at->add_option("--store", at_store, "Record store directory (overrides the plan)");
  at->add_option("--seed", at_seed, "Master seed override");

  std::string no_plan, no_store;
  std::optional<std::uint64_t> no_seed;
  auto* no = app.add_subcommand("noise", "Run the non-adversarial noise campaign of a plan");
  no->add_option("--plan", no_plan, "Campaign plan file")->required();
  no->add_option("--store", no_store, "Record store directory (overrides the plan)");
  no->add_option("--seed", no_seed, "Master seed override");

  // report
  auto* report = app.add_subcommand("report", "Emit CSV analyses from a record store");
  report->require_subcommand(1);

  std::string rm_store, rm_out, rm_attack, rm_mode = "untargeted";
  std::uint64_t rm_seed = 0;
  auto* rm = report->add_subcommand("matrix", "Model-to-model transferability matrix");
  rm->add_option("--store", rm_store, "Record store")->required();
  rm->add_option("--out", rm_out, "Output CSV")->required();
  rm->add_option("--attack", rm_attack, "PGD, CW or MIFGSM")->required();
  rm->add_option("--mode", rm_mode, "untargeted (default) or targeted")
      ->check(CLI::IsMember({"untargeted", "targeted"}));
  rm->add_option("--seed", rm_seed, "Seed (recorded in the plan hash)");

  std::string rh_store, rh_out, rh_attack = "mean";
  int rh_bins = 0;
  std::uint64_t rh_seed = 0;
  auto* rh = report->add_subcommand("histogram", "Histogram of transferability counts");
  rh->add_option("--store", rh_store, "Record store")->required();
  rh->add_option("--out", rh_out, "Output CSV")->required();
  rh->add_option("--attack", rh_attack, "PGD, CW, MIFGSM, or mean (default)");
  rh->add_option("--bins", rh_bins, "Bin count (default: one per T value)");
  rh->add_option("--seed", rh_seed, "Seed (recorded in the plan hash)");

  std::string rc_store, rc_scores, rc_out;
  std::uint64_t rc_seed = 0;
  auto* rc = report->add_subcommand("correlation",
                                    "Error-estimate vs transferability/perturbation correlations");
  rc->add_option("--store", rc_store, "Record store")->required();
  rc->add_option("--scores", rc_scores, "Suitability scores CSV (from `score`)")->required();
  rc->add_option("--out", rc_out, "Output CSV")->required();
  rc->add_option("--seed", rc_seed, "Seed (recorded in the plan hash)");

  std::string rs_store, rs_out;
  int rs_n = 1000, rs_reps = 10000;
  std::vector<std::string> rs_subsets;
  std::uint64_t rs_seed = 0;
  auto* rs = report->add_subcommand("sampling", "Random-sampling variance study");
  rs->add_option("--store", rs_store, "Record store")->required();
  rs->add_option("--out", rs_out, "Output CSV")->required();
  rs->add_option("--n", rs_n, "Images per sample (default 1000)");
  rs->add_option("--reps", rs_reps, "Repetitions (default 10000)");
  rs->add_option("--subset", rs_subsets, "NAME=FILE of image ids; repeatable");
  rs->add_option("--seed", rs_seed, "Sampling seed");

  std::string rp_store, rp_out;
  std::uint64_t rp_seed = 0;
  auto* rp = report->add_subcommand("split", "Transfer matrices over fragile/hard image sets");
  rp->add_option("--store", rp_store, "Record store")->required();
  rp->add_option("--out", rp_out, "Output CSV")->required();
  rp->add_option("--seed", rp_seed, "Seed (recorded in the plan hash)");

  // score
  std::string sc_models, sc_manifest, sc_out;
  std::uint64_t sc_seed = 0;
  auto* sc = app.add_subcommand("score", "Per-(image, model) prediction-error estimates");
  sc->add_option("--models", sc_models, "Model registry config")->required();
  sc->add_option("--manifest", sc_manifest, "Image manifest")->required();
  sc->add_option("--out", sc_out, "Output CSV")->required();
  sc->add_option("--seed", sc_seed, "Seed (recorded in the plan hash)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // usage error
  }

  try {
    if (*fe) return cmd_filter_eligible(fe_models, fe_manifest, fe_out, fe_seed);
    if (*at) return cmd_campaign(at_plan, at_store, at_seed, CampaignScope::kAttacks);
    if (*no) return cmd_campaign(no_plan, no_store, no_seed, CampaignScope::kNoise);
    if (*rm) return cmd_report_matrix(rm_store, rm_out, rm_attack, rm_mode, rm_seed);
    if (*rh) return cmd_report_histogram(rh_store, rh_out, rh_attack, rh_bins, rh_seed);
    if (*rc) return cmd_report_correlation(rc_store, rc_scores, rc_out, rc_seed);
    if (*rs) return cmd_report_sampling(rs_store, rs_out, rs_n, rs_reps, rs_subsets, rs_seed);
    if (*rp) return cmd_report_split(rp_store, rp_out, rp_seed);
    if (*sc) return cmd_score(sc_models, sc_manifest, sc_out, sc_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
