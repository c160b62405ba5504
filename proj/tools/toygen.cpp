#include "toygen.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "advsource/dataset.hpp"
#include "advsource/error.hpp"
#include "advsource/models.hpp"
#include "advsource/rng.hpp"

namespace advsource::toy {

namespace {

// Smooth per-class pattern: a coarse random grid upsampled bilinearly.
Eigen::VectorXd make_prototype(CounterRng& rng, const Shape& shape) {
  constexpr int kCoarse = 4;
  Eigen::VectorXd proto(shape.elements());
  const int plane = shape.height * shape.width;
  for (int c = 0; c < shape.channels; ++c) {
    double grid[kCoarse][kCoarse];
    for (auto& row : grid) {
      for (double& v : row) v = 0.2 + 0.6 * rng.next_double();
    }
    for (int y = 0; y < shape.height; ++y) {
      for (int x = 0; x < shape.width; ++x) {
        const double gy = static_cast<double>(y) / (shape.height - 1) * (kCoarse - 1);
        const double gx = static_cast<double>(x) / (shape.width - 1) * (kCoarse - 1);
        const int y0 = std::min(static_cast<int>(gy), kCoarse - 2);
        const int x0 = std::min(static_cast<int>(gx), kCoarse - 2);
        const double fy = gy - y0;
        const double fx = gx - x0;
        const double v = grid[y0][x0] * (1 - fy) * (1 - fx) + grid[y0 + 1][x0] * fy * (1 - fx) +
                         grid[y0][x0 + 1] * (1 - fy) * fx + grid[y0 + 1][x0 + 1] * fy * fx;
        proto[c * plane + y * shape.width + x] = v;
      }
    }
  }
  return proto;
}

Eigen::VectorXd sample_pixels(CounterRng& rng, const Eigen::VectorXd& proto,
                              const Eigen::VectorXd& confuser, double mix, double noise_scale) {
  Eigen::VectorXd v(proto.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double base = mix * proto[i] + (1.0 - mix) * confuser[i];
    v[i] = std::clamp(base + noise_scale * rng.next_gaussian(), 0.0, 1.0);
  }
  return v;
}

void snap_to_grid(Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    v[i] = grid_value(static_cast<int>(std::lround(v[i] * 255.0)));
  }
}

Eigen::MatrixXd normalize_batch(const Eigen::MatrixXd& x, const MlpWeights& w) {
  if (w.channel_mean.size() == 0) return x;
  Eigen::MatrixXd out = x;
  const Eigen::Index plane =
      static_cast<Eigen::Index>(w.input_shape.height) * w.input_shape.width;
  for (int c = 0; c < w.input_shape.channels; ++c) {
    out.middleRows(c * plane, plane) =
        (out.middleRows(c * plane, plane).array() - w.channel_mean[c]) / w.channel_std[c];
  }
  return out;
}

Eigen::MatrixXd softmax_cols(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p = logits;
  for (Eigen::Index b = 0; b < p.cols(); ++b) {
    p.col(b).array() -= p.col(b).maxCoeff();
    p.col(b) = p.col(b).array().exp();
    p.col(b) /= p.col(b).sum();
  }
  return p;
}

MlpWeights init_weights(CounterRng& rng, const Shape& shape, int num_classes,
                        const std::vector<int>& hidden, double mean, double stddev) {
  MlpWeights w;
  w.input_shape = shape;
  w.num_classes = num_classes;
  w.channel_mean = Eigen::VectorXd::Constant(shape.channels, mean);
  w.channel_std = Eigen::VectorXd::Constant(shape.channels, stddev);
  std::vector<Eigen::Index> dims;
  dims.push_back(shape.elements());
  for (const int h : hidden) dims.push_back(h);
  dims.push_back(num_classes);
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    DenseLayer layer;
    const double scale = std::sqrt(2.0 / static_cast<double>(dims[l]));
    layer.weight.resize(dims[l + 1], dims[l]);
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        layer.weight(r, c) = scale * rng.next_gaussian();
      }
    }
    layer.bias = Eigen::VectorXd::Zero(dims[l + 1]);
    w.layers.push_back(std::move(layer));
  }
  return w;
}

// Minibatch SGD on softmax cross-entropy. Returns final training accuracy.
double train_mlp(MlpWeights& w, const Eigen::MatrixXd& X, const std::vector<int>& labels,
                 const ToyZooOptions& opt, CounterRng& rng) {
  const Eigen::Index n = X.cols();
  const size_t L = w.layers.size();
  for (int step = 0; step < opt.train_steps; ++step) {
    Eigen::MatrixXd batch(X.rows(), opt.batch_size);
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(w.num_classes, opt.batch_size);
    for (int b = 0; b < opt.batch_size; ++b) {
      const auto idx = static_cast<Eigen::Index>(rng.next_below(static_cast<std::uint64_t>(n)));
      batch.col(b) = X.col(idx);
      y(labels[idx], b) = 1.0;
    }
    // Forward, keeping pre-activations.
    std::vector<Eigen::MatrixXd> acts(L + 1);
    std::vector<Eigen::MatrixXd> pre(L);
    acts[0] = normalize_batch(batch, w);
    for (size_t l = 0; l < L; ++l) {
      pre[l] = (w.layers[l].weight * acts[l]).colwise() + w.layers[l].bias;
      acts[l + 1] = (l + 1 < L) ? pre[l].cwiseMax(0.0) : pre[l];
    }
    // Backward.
    Eigen::MatrixXd g = (softmax_cols(acts[L]) - y) / opt.batch_size;
    for (size_t l = L; l-- > 0;) {
      const Eigen::MatrixXd dw = g * acts[l].transpose();
      const Eigen::VectorXd db = g.rowwise().sum();
      if (l > 0) {
        g = (w.layers[l].weight.transpose() * g).array() *
            (pre[l - 1].array() > 0.0).cast<double>();
      }
      w.layers[l].weight -= opt.learning_rate * dw;
      w.layers[l].bias -= opt.learning_rate * db;
    }
  }
  // Training accuracy.
  Eigen::MatrixXd a = normalize_batch(X, w);
  for (size_t l = 0; l < L; ++l) {
    a = ((w.layers[l].weight * a).colwise() + w.layers[l].bias);
    if (l + 1 < L) a = a.cwiseMax(0.0);
  }
  Eigen::Index correct = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index pred;
    a.col(i).maxCoeff(&pred);
    if (pred == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace

ToyZoo make_toy_zoo(const std::filesystem::path& dir, const ToyZooOptions& opt) {
  if (opt.num_classes < 2 || opt.num_models < 2) {
    throw ArgumentError("make_toy_zoo: needs >= 2 classes and >= 2 models");
  }
  std::filesystem::create_directories(dir / "models");
  std::filesystem::create_directories(dir / "images");

  const StreamKey root(opt.seed);
  std::vector<Eigen::VectorXd> prototypes;
  {
    CounterRng rng(root.with("prototypes"));
    for (int c = 0; c < opt.num_classes; ++c) prototypes.push_back(make_prototype(rng, opt.shape));
  }

  // Training set.
  const Eigen::Index n_train =
      static_cast<Eigen::Index>(opt.num_classes) * opt.train_per_class;
  Eigen::MatrixXd X(opt.shape.elements(), n_train);
  std::vector<int> labels(n_train);
  {
    CounterRng rng(root.with("train"));
    Eigen::Index col = 0;
    for (int c = 0; c < opt.num_classes; ++c) {
      for (int i = 0; i < opt.train_per_class; ++i, ++col) {
        const int confuser = static_cast<int>(rng.next_below(opt.num_classes - 1));
        const int c2 = confuser >= c ? confuser + 1 : confuser;
        const double mix = opt.train_mix_low + (1.0 - opt.train_mix_low) * rng.next_double();
        const double s = opt.pixel_noise_low +
                         (opt.pixel_noise_high - opt.pixel_noise_low) * rng.next_double();
        X.col(col) = sample_pixels(rng, prototypes[c], prototypes[c2], mix, s);
        labels[col] = c;
      }
    }
  }

  // Three architectures with slightly different normalizations.
  const std::vector<std::vector<int>> architectures = {{48}, {64}, {32, 32}};
  const double means[] = {0.5, 0.5, 0.45};
  const double stds[] = {0.25, 0.3, 0.25};

  ToyZoo zoo;
  zoo.train_accuracy = 1.0;
  nlohmann::json registry{{"models", nlohmann::json::array()}};
  for (int m = 0; m < opt.num_models; ++m) {
    const auto& arch = architectures[m % architectures.size()];
    CounterRng rng(root.with("model").with(m));
    MlpWeights w = init_weights(rng, opt.shape, opt.num_classes, arch,
                                means[m % 3], stds[m % 3]);
    const double acc = train_mlp(w, X, labels, opt, rng);
    zoo.train_accuracy = std::min(zoo.train_accuracy, acc);

    const std::string model_id = "toy_mlp_" + std::string(1, static_cast<char>('a' + m));
    const std::string weight_file = "models/" + model_id + ".mlp";
    save_mlp_weights(dir / weight_file, w);
    registry["models"].push_back(
        {{"model_id", model_id}, {"constructor", "mlp"}, {"weights", weight_file}});
    zoo.model_ids.push_back(model_id);
  }
  zoo.registry_config = dir / "registry.json";
  {
    std::ofstream os(zoo.registry_config);
    os << registry.dump(2) << "\n";
    if (!os) throw IoError("cannot write registry config");
  }

  // Evaluation images, classes round-robin, mix fraction spanning the range.
  std::vector<ManifestEntry> entries;
  {
    CounterRng rng(root.with("eval"));
    for (int i = 0; i < opt.eval_images; ++i) {
      const int c = i % opt.num_classes;
      const int confuser = static_cast<int>(rng.next_below(opt.num_classes - 1));
      const int c2 = confuser >= c ? confuser + 1 : confuser;
      const double mix = opt.eval_mix_low + (1.0 - opt.eval_mix_low) * rng.next_double();
      const double s = opt.pixel_noise_low +
                       (opt.pixel_noise_high - opt.pixel_noise_low) * rng.next_double();
      Eigen::VectorXd pixels = sample_pixels(rng, prototypes[c], prototypes[c2], mix, s);
      snap_to_grid(pixels);

      char name[32];
      std::snprintf(name, sizeof(name), "img_%04d", i);
      ImageTensor img;
      img.shape = opt.shape;
      img.pixels = std::move(pixels);
      img.image_id = name;
      img.true_class = c;
      const std::string file =
          "images/" + std::string(name) + (opt.shape.channels == 1 ? ".pgm" : ".ppm");
      save_image(dir / file, img);
      entries.push_back({img.image_id, file, c});
    }
  }
  zoo.manifest = dir / "manifest.jsonl";
  save_manifest(zoo.manifest, entries);
  return zoo;
}

}  // namespace advsource::toy
