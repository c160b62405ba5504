// Generates a self-contained demo workspace: a synthetic labeled image set,
// three trained toy classifiers, and a ready-to-run campaign plan.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "toygen.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Create a toy model zoo, dataset, and campaign plan"};
  std::string out_dir;
  advsource::toy::ToyZooOptions opt;
  int images = opt.eval_images;
  std::uint64_t seed = opt.seed;
  app.add_option("--out", out_dir, "Output directory")->required();
  app.add_option("--images", images, "Evaluation images to generate (default 400)");
  app.add_option("--seed", seed, "Generator seed");
  app.add_option("--train-steps", opt.train_steps, "SGD steps per model");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    opt.eval_images = images;
    opt.seed = seed;
    const auto zoo = advsource::toy::make_toy_zoo(out_dir, opt);

    // A campaign plan wired to the eligible manifest that filter-eligible
    // writes. CW uses a larger step than the sign attacks: its update scales
    // raw logit gradients instead of their sign.
    nlohmann::json plan{
        {"models", "registry.json"},
        {"manifest", "manifest_eligible.jsonl"},
        {"store", "store"},
        {"seed", 1},
        {"attacks",
         {{"PGD", nlohmann::json::object()},
          {"CW", {{"step_alpha", 0.02}}},
          {"MIFGSM", nlohmann::json::object()}}},
        {"noise",
         {{"UNIFORM_SIGN", nlohmann::json::object()},
          {"GAUSSIAN", nlohmann::json::object()},
          {"CONTRAST", nlohmann::json::object()}}},
    };
    std::ofstream os(std::filesystem::path(out_dir) / "plan.json");
    os << plan.dump(2) << "\n";
    if (!os) throw std::runtime_error("cannot write plan.json");

    std::cout << "demo workspace at " << out_dir << "\n"
              << "  models:   " << zoo.registry_config.string() << " (worst train accuracy "
              << zoo.train_accuracy << ")\n"
              << "  manifest: " << zoo.manifest.string() << "\n"
              << "  plan:     " << (std::filesystem::path(out_dir) / "plan.json").string() << "\n"
              << "next: advsource filter-eligible --models " << zoo.registry_config.string()
              << " --manifest " << zoo.manifest.string() << " --out "
              << (std::filesystem::path(out_dir) / "manifest_eligible.jsonl").string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
