#pragma once

// Shared campaign fixture for the experiment and CLI-surface tests: a tiny
// trained zoo plus an executed attack+noise campaign, generated once per
// process.

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "advsource/dataset.hpp"
#include "advsource/experiments.hpp"
#include "advsource/models.hpp"
#include "toygen.hpp"

namespace advsource::testing {

struct TinyCampaign {
  std::filesystem::path dir;
  std::filesystem::path plan_path;
  std::filesystem::path store_dir;
  CampaignPlan plan;
  int eligible_images = 0;
};

inline nlohmann::json tiny_plan_json() {
  return nlohmann::json{
      {"models", "registry.json"},
      {"manifest", "manifest_eligible.jsonl"},
      {"store", "store"},
      {"seed", 5},
      {"attacks",
       {{"PGD", nlohmann::json::object()},
        {"CW", {{"step_alpha", 0.02}}},
        {"MIFGSM", nlohmann::json::object()}}},
      {"noise",
       {{"UNIFORM_SIGN", nlohmann::json::object()},
        {"GAUSSIAN", nlohmann::json::object()},
        {"CONTRAST", nlohmann::json::object()}}},
  };
}

inline const TinyCampaign& tiny_campaign() {
  static const TinyCampaign fixture = [] {
    TinyCampaign f;
    f.dir = std::filesystem::temp_directory_path() / "advsource_tiny_campaign";
    std::filesystem::remove_all(f.dir);

    toy::ToyZooOptions opt;
    opt.shape = Shape{1, 16, 16};
    opt.num_classes = 6;
    opt.train_per_class = 60;
    opt.eval_images = 36;
    opt.train_steps = 400;
    opt.batch_size = 32;
    opt.seed = 424242;
    const toy::ToyZoo zoo = toy::make_toy_zoo(f.dir, opt);

    const Ensemble ensemble = load_ensemble(zoo.registry_config);
    const auto images = load_images(zoo.manifest);
    const auto entries = load_manifest(zoo.manifest);
    std::vector<ManifestEntry> eligible;
    for (size_t i = 0; i < images.size(); ++i) {
      if (is_eligible(ensemble, images[i])) eligible.push_back(entries[i]);
    }
    f.eligible_images = static_cast<int>(eligible.size());
    save_manifest(f.dir / "manifest_eligible.jsonl", eligible);

    f.plan_path = f.dir / "plan.json";
    std::ofstream os(f.plan_path);
    os << tiny_plan_json().dump(2) << "\n";
    os.close();

    f.plan = CampaignPlan::from_file(f.plan_path);
    f.store_dir = f.plan.store_dir;
    run_campaign(f.plan, CampaignScope::kAll);
    return f;
  }();
  return fixture;
}

}  // namespace advsource::testing
