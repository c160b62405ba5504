#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "advsource/tensor.hpp"

namespace advsource::toy {

// Synthesizes a small labeled image dataset and trains a few MLP classifiers
// on it. Every image is a convex mix of its class prototype and a confuser
// class plus pixel noise; the mix fraction spans images deep inside a class
// region down to borderline ones near decision boundaries, which gives the
// analyses a genuine easy/hard spectrum.
struct ToyZooOptions {
  Shape shape{3, 32, 32};
  int num_classes = 10;
  int num_models = 3;
  int train_per_class = 150;
  int eval_images = 400;
  double train_mix_low = 0.60;  // training mixes stay clearly labeled
  double eval_mix_low = 0.52;   // evaluation reaches close to the boundary
  double pixel_noise_low = 0.02;
  double pixel_noise_high = 0.12;
  int train_steps = 1200;
  int batch_size = 64;
  double learning_rate = 0.08;
  std::uint64_t seed = 90125;
};

struct ToyZoo {
  std::filesystem::path registry_config;  // model registry for load_ensemble
  std::filesystem::path manifest;         // unfiltered evaluation manifest
  std::vector<std::string> model_ids;
  double train_accuracy = 0.0;  // worst member, on the training set
};

ToyZoo make_toy_zoo(const std::filesystem::path& dir, const ToyZooOptions& opt);

}  // namespace advsource::toy
