#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "advsource/dataset.hpp"
#include "advsource/error.hpp"
#include "advsource/models.hpp"
#include "support/test_models.hpp"

using namespace advsource;
using namespace advsource::testing;

namespace {

const Shape kTiny{1, 2, 2};

// Central finite differences of the targeted cross-entropy loss.
Eigen::VectorXd fd_loss_gradient(const Classifier& model, const ImageTensor& x, int target,
                                 double step = 1e-5) {
  Eigen::VectorXd grad(x.pixels.size());
  const auto loss_at = [&](const ImageTensor& img) {
    return -std::log(softmax(model.logits(img))[target]);
  };
  for (Eigen::Index i = 0; i < x.pixels.size(); ++i) {
    ImageTensor lo = x, hi = x;
    lo.pixels[i] -= step;
    hi.pixels[i] += step;
    grad[i] = (loss_at(hi) - loss_at(lo)) / (2 * step);
  }
  return grad;
}

double rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double denom = std::max(a.norm(), 1e-12);
  return (a - b).norm() / denom;
}

}  // namespace

TEST_CASE("softmax hand values") {
  const Eigen::Vector3d symmetric = softmax(Eigen::Vector3d{0, 0, 0});
  for (int k = 0; k < 3; ++k) CHECK(symmetric[k] == doctest::Approx(1.0 / 3).epsilon(1e-12));

  const Eigen::Vector2d two = softmax(Eigen::Vector2d{std::log(2.0), 0.0});
  CHECK(two[0] == doctest::Approx(2.0 / 3).epsilon(1e-12));
  CHECK(two[1] == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("softmax survives huge logits via max subtraction") {
  const Eigen::Vector2d p = softmax(Eigen::Vector2d{1000.0, 0.0});
  CHECK(std::isfinite(p[0]));
  CHECK(p[0] == doctest::Approx(1.0));
  CHECK(p[1] == doctest::Approx(0.0));
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("softmax rejects non-finite logits") {
  Eigen::Vector2d bad{std::numeric_limits<double>::infinity(), 0.0};
  CHECK_THROWS_AS(softmax(bad), NumericError);
}

TEST_CASE("predict_class takes the argmax with lowest-index ties") {
  const auto distinct = constant_model("m", kTiny, Eigen::Vector3d{2.0, 0.5, -1.0});
  const auto tied = constant_model("m", kTiny, Eigen::Vector3d{1.0, 1.0, 0.0});
  const ImageTensor x = uniform_image(kTiny, 0.5);
  CHECK(predict_class(*distinct, x) == 0);
  CHECK(predict_class(*tied, x) == 0);
}

TEST_CASE("predict_class rejects shape mismatches") {
  const auto model = constant_model("m", kTiny, Eigen::Vector2d{1.0, 0.0});
  const ImageTensor wrong = uniform_image(Shape{1, 3, 3}, 0.5);
  CHECK_THROWS_AS(predict_class(*model, wrong), ShapeError);
}

TEST_CASE("predict_probs is a distribution and preserves the argmax") {
  const auto model = random_two_layer("m", kTiny, 6, 4, 11);
  for (int t = 0; t < 50; ++t) {
    const ImageTensor x = random_grid_image(kTiny, 100 + t);
    const Eigen::VectorXd p = predict_probs(*model, x);
    CHECK(p.minCoeff() > 0.0);
    CHECK(std::abs(p.sum() - 1.0) <= 1e-9);
    Eigen::Index argmax_probs;
    p.maxCoeff(&argmax_probs);
    CHECK(predict_class(*model, x) == static_cast<int>(argmax_probs));
  }
}

TEST_CASE("predictions match a direct matrix-arithmetic forward pass") {
  const Shape shape{1, 2, 3};
  const auto model = random_two_layer("m", shape, 4, 3, 55);
  const auto& w = model->weights();
  for (int t = 0; t < 20; ++t) {
    const ImageTensor x = random_grid_image(shape, 900 + t);
    // Re-evaluate the logits with plain loops over the raw weights.
    std::vector<double> hidden(w.layers[0].weight.rows(), 0.0);
    for (size_t r = 0; r < hidden.size(); ++r) {
      double acc = w.layers[0].bias[static_cast<Eigen::Index>(r)];
      for (Eigen::Index c = 0; c < x.pixels.size(); ++c) {
        acc += w.layers[0].weight(static_cast<Eigen::Index>(r), c) * x.pixels[c];
      }
      hidden[r] = std::max(acc, 0.0);
    }
    std::vector<double> expected(3, 0.0);
    int best = 0;
    for (int k = 0; k < 3; ++k) {
      double acc = w.layers[1].bias[k];
      for (size_t r = 0; r < hidden.size(); ++r) {
        acc += w.layers[1].weight(k, static_cast<Eigen::Index>(r)) * hidden[r];
      }
      expected[k] = acc;
      if (acc > expected[best]) best = k;
    }
    const Eigen::VectorXd logits = model->logits(x);
    for (int k = 0; k < 3; ++k) CHECK(logits[k] == doctest::Approx(expected[k]).epsilon(1e-12));
    CHECK(predict_class(*model, x) == best);
  }
}

TEST_CASE("loss_gradient matches finite differences on a single-pixel linear model") {
  const Shape one{1, 1, 1};
  Eigen::MatrixXd w(2, 1);
  w << 1.7, 0.0;
  const auto model = linear_model("m", one, w, Eigen::Vector2d{0.0, 0.0});
  const ImageTensor x = uniform_image(one, 0.4);
  const Eigen::VectorXd analytic = loss_gradient(*model, x, 1);
  CHECK(rel_error(fd_loss_gradient(*model, x, 1), analytic) <= 1e-4);
}

TEST_CASE("loss_gradient is zero for a constant model") {
  const auto model = constant_model("m", kTiny, Eigen::Vector3d{1.0, 0.0, -2.0});
  const ImageTensor x = uniform_image(kTiny, 0.3);
  CHECK(loss_gradient(*model, x, 2).norm() == 0.0);
}

TEST_CASE("loss_gradient matches finite differences on a 12-pixel two-layer net") {
  const Shape shape{3, 2, 2};
  const auto model = random_two_layer("m", shape, 8, 5, 77);
  for (int t = 0; t < 10; ++t) {
    const ImageTensor x = random_grid_image(shape, 500 + t);
    const int target = t % 5;
    const Eigen::VectorXd analytic = loss_gradient(*model, x, target);
    CHECK(rel_error(fd_loss_gradient(*model, x, target), analytic) <= 1e-4);
  }
}

TEST_CASE("loss_gradient respects normalization inside the handle") {
  MlpWeights w;
  w.input_shape = kTiny;
  w.num_classes = 2;
  w.channel_mean = Eigen::VectorXd::Constant(1, 0.5);
  w.channel_std = Eigen::VectorXd::Constant(1, 0.2);
  DenseLayer layer;
  layer.weight = Eigen::MatrixXd::Random(2, 4);
  layer.bias = Eigen::Vector2d{0.1, -0.1};
  w.layers.push_back(layer);
  const MlpClassifier model("m", std::move(w));
  const ImageTensor x = uniform_image(kTiny, 0.7);
  CHECK(rel_error(fd_loss_gradient(model, x, 0), loss_gradient(model, x, 0)) <= 1e-4);
}

TEST_CASE("loss_gradient rejects out-of-range targets") {
  const auto model = constant_model("m", kTiny, Eigen::Vector2d{1.0, 0.0});
  const ImageTensor x = uniform_image(kTiny, 0.5);
  CHECK_THROWS_AS(loss_gradient(*model, x, 2), ArgumentError);
  CHECK_THROWS_AS(loss_gradient(*model, x, -1), ArgumentError);
}

TEST_CASE("filter_eligible keeps exactly the jointly correct images") {
  // Model decides by the first pixel; class = pixel > 0.5.
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(2, 4);
  w(1, 0) = 10.0;
  const auto m1 = linear_model("m1", kTiny, w, Eigen::Vector2d{5.0, 0.0});
  const auto m2 = linear_model("m2", kTiny, 2 * w, Eigen::Vector2d{10.0, 0.0});
  // m3 is constant class 0: images labeled 1 are never eligible.
  const auto m3 = constant_model("m3", kTiny, Eigen::Vector2d{1.0, 0.0});
  const Ensemble ensemble({m1, m2, m3});

  ImageTensor low = uniform_image(kTiny, 0.2, "low", 0);    // all agree class 0
  ImageTensor high = uniform_image(kTiny, 0.9, "high", 1);  // m3 disagrees
  ImageTensor mislabeled = uniform_image(kTiny, 0.2, "mislabeled", 1);

  const auto kept = filter_eligible(ensemble, {low, high, mislabeled});
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].image_id == "low");

  CHECK_THROWS_AS(filter_eligible(ensemble, {}), ArgumentError);
}

TEST_CASE("filter_eligible preserves input order") {
  const auto m1 = constant_model("m1", kTiny, Eigen::Vector2d{1.0, 0.0});
  const auto m2 = constant_model("m2", kTiny, Eigen::Vector2d{1.0, 0.0});
  const Ensemble ensemble({m1, m2});
  std::vector<ImageTensor> images;
  for (int i = 0; i < 5; ++i) {
    images.push_back(uniform_image(kTiny, 0.1 * (i + 1), "img" + std::to_string(i), 0));
  }
  const auto kept = filter_eligible(ensemble, images);
  REQUIRE(kept.size() == 5);
  for (int i = 0; i < 5; ++i) CHECK(kept[i].image_id == images[i].image_id);
}

TEST_CASE("ensemble invariants") {
  const auto m1 = constant_model("m1", kTiny, Eigen::Vector2d{1.0, 0.0});
  CHECK_THROWS_AS(Ensemble({m1}), ArgumentError);
  const auto odd = constant_model("m2", kTiny, Eigen::Vector3d{1.0, 0.0, 0.0});
  CHECK_THROWS_AS(Ensemble({m1, odd}), ArgumentError);
  const auto other_shape = constant_model("m3", Shape{1, 3, 3}, Eigen::Vector2d{1.0, 0.0});
  CHECK_THROWS_AS(Ensemble({m1, other_shape}), ShapeError);
}

TEST_CASE("mlp weights survive a save/load round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "advsource_test_weights";
  std::filesystem::create_directories(dir);
  const auto model = random_two_layer("m", Shape{3, 4, 4}, 10, 6, 99);
  const auto path = dir / "m.mlp";
  save_mlp_weights(path, model->weights());
  const MlpClassifier loaded("m", load_mlp_weights(path));

  const ImageTensor x = random_grid_image(Shape{3, 4, 4}, 1);
  CHECK((model->logits(x) - loaded.logits(x)).norm() == 0.0);
}

TEST_CASE("registry builds ensembles from a config file") {
  const auto dir = std::filesystem::temp_directory_path() / "advsource_test_registry";
  std::filesystem::create_directories(dir / "models");
  for (int i = 0; i < 2; ++i) {
    const auto model = random_two_layer("m" + std::to_string(i), kTiny, 4, 3, 40 + i);
    save_mlp_weights(dir / "models" / ("m" + std::to_string(i) + ".mlp"), model->weights());
  }
  {
    std::ofstream os(dir / "registry.json");
    os << R"({"models":[
      {"model_id":"m0","constructor":"mlp","weights":"models/m0.mlp"},
      {"model_id":"m1","constructor":"mlp","weights":"models/m1.mlp"}]})";
  }
  const Ensemble ensemble = load_ensemble(dir / "registry.json");
  CHECK(ensemble.size() == 2);
  CHECK(ensemble.model_ids() == std::vector<std::string>{"m0", "m1"});
  CHECK(ensemble.index_of("m1") == 1);
  CHECK(ensemble.index_of("nope") == -1);
  CHECK(ensemble.all_reentrant());
}

TEST_CASE("registry rejects unknown constructors") {
  const auto dir = std::filesystem::temp_directory_path() / "advsource_test_registry2";
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "registry.json");
    os << R"({"models":[{"model_id":"m0","constructor":"resnet","weights":"w"}]})";
  }
  CHECK_THROWS_AS(load_ensemble(dir / "registry.json"), ArgumentError);
}

TEST_CASE("images and manifests round trip through the filesystem") {
  const auto dir = std::filesystem::temp_directory_path() / "advsource_test_dataset";
  std::filesystem::create_directories(dir);

  const ImageTensor rgb = random_grid_image(Shape{3, 5, 4}, 2, "rgb", 3);
  save_image(dir / "rgb.ppm", rgb);
  const ImageTensor rgb_back = load_image(dir / "rgb.ppm", "rgb", 3);
  CHECK((rgb.pixels - rgb_back.pixels).norm() == 0.0);
  CHECK(rgb_back.shape == rgb.shape);

  const ImageTensor gray = random_grid_image(Shape{1, 4, 6}, 3, "gray", 1);
  save_image(dir / "gray.pgm", gray);
  CHECK((load_image(dir / "gray.pgm", "gray", 1).pixels - gray.pixels).norm() == 0.0);

  save_manifest(dir / "manifest.jsonl", {{"rgb", "rgb.ppm", 3}});
  const auto images = load_images(dir / "manifest.jsonl");
  REQUIRE(images.size() == 1);
  CHECK(images[0].image_id == "rgb");
  CHECK(images[0].true_class == 3);
  CHECK((images[0].pixels - rgb.pixels).norm() == 0.0);
}
