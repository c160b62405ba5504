#include "advsource/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "advsource/error.hpp"

namespace advsource {

namespace {

void require_input_shape(const Classifier& model, const ImageTensor& x) {
  if (!(x.shape == model.input_shape())) {
    throw ShapeError("model '" + model.model_id() + "' expects input " +
                     model.input_shape().str() + ", got " + x.shape.str());
  }
}

int argmax_lowest_tie(const Eigen::VectorXd& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  if (logits.size() == 0) throw ArgumentError("softmax: empty logits");
  if (!logits.allFinite()) throw NumericError("softmax: non-finite logits");
  const double max_logit = logits.maxCoeff();
  Eigen::VectorXd exps = (logits.array() - max_logit).exp();
  return exps / exps.sum();
}

int predict_class(const Classifier& model, const ImageTensor& x) {
  require_input_shape(model, x);
  return argmax_lowest_tie(model.logits(x));
}

Eigen::VectorXd predict_probs(const Classifier& model, const ImageTensor& x) {
  require_input_shape(model, x);
  return softmax(model.logits(x));
}

Eigen::VectorXd loss_gradient(const Classifier& model, const ImageTensor& x, int target) {
  require_input_shape(model, x);
  if (target < 0 || target >= model.num_classes()) {
    throw ArgumentError("loss_gradient: target class " + std::to_string(target) +
                        " outside [0," + std::to_string(model.num_classes()) + ")");
  }
  // d/dx of -log softmax(g(x))_target is Jac(g)^T (softmax(g) - onehot).
  Eigen::VectorXd v = softmax(model.logits(x));
  v[target] -= 1.0;
  return model.logit_vjp(x, v);
}

Ensemble::Ensemble(std::vector<std::shared_ptr<const Classifier>> members)
    : members_(std::move(members)) {
  if (members_.size() < 2) throw ArgumentError("Ensemble: needs at least 2 members");
  for (const auto& m : members_) {
    if (!m) throw ArgumentError("Ensemble: null member");
    if (m->num_classes() != members_.front()->num_classes()) {
      throw ArgumentError("Ensemble: members disagree on class count");
    }
    if (!(m->input_shape() == members_.front()->input_shape())) {
      throw ShapeError("Ensemble: members disagree on input shape");
    }
  }
}

std::vector<std::string> Ensemble::model_ids() const {
  std::vector<std::string> ids;
  ids.reserve(members_.size());
  for (const auto& m : members_) ids.push_back(m->model_id());
  return ids;
}

int Ensemble::index_of(const std::string& model_id) const {
  for (int i = 0; i < size(); ++i) {
    if (members_[i]->model_id() == model_id) return i;
  }
  return -1;
}

bool Ensemble::all_reentrant() const {
  return std::all_of(members_.begin(), members_.end(),
                     [](const auto& m) { return m->reentrant_gradients(); });
}

bool is_eligible(const Ensemble& ensemble, const ImageTensor& x) {
  for (int i = 0; i < ensemble.size(); ++i) {
    if (predict_class(ensemble.member(i), x) != x.true_class) return false;
  }
  return true;
}

std::vector<ImageTensor> filter_eligible(const Ensemble& ensemble,
                                         const std::vector<ImageTensor>& images) {
  if (images.empty()) throw ArgumentError("filter_eligible: empty image list");
  std::vector<ImageTensor> kept;
  for (const auto& img : images) {
    if (is_eligible(ensemble, img)) kept.push_back(img);
  }
  return kept;
}

// ---------------------------------------------------------------------------
// MLP backend

void MlpWeights::validate() const {
  if (layers.empty()) throw ArgumentError("MlpWeights: no layers");
  if (num_classes < 2) throw ArgumentError("MlpWeights: needs >= 2 classes");
  const auto elements = input_shape.elements();
  if (elements <= 0) throw ShapeError("MlpWeights: bad input shape " + input_shape.str());
  if (channel_mean.size() != channel_std.size()) {
    throw ArgumentError("MlpWeights: mean/std size mismatch");
  }
  if (channel_mean.size() != 0 && channel_mean.size() != input_shape.channels) {
    throw ArgumentError("MlpWeights: normalization must be per channel");
  }
  for (Eigen::Index c = 0; c < channel_std.size(); ++c) {
    if (!(channel_std[c] > 0.0)) throw ArgumentError("MlpWeights: non-positive std");
  }
  Eigen::Index in = elements;
  for (size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.weight.cols() != in) {
      throw ShapeError("MlpWeights: layer " + std::to_string(l) + " expects " +
                       std::to_string(layer.weight.cols()) + " inputs, got " +
                       std::to_string(in));
    }
    if (layer.bias.size() != layer.weight.rows()) {
      throw ShapeError("MlpWeights: layer " + std::to_string(l) + " bias size mismatch");
    }
    in = layer.weight.rows();
  }
  if (in != num_classes) {
    throw ShapeError("MlpWeights: last layer emits " + std::to_string(in) + " values for " +
                     std::to_string(num_classes) + " classes");
  }
}

namespace {

constexpr char kMlpMagic[8] = {'A', 'D', 'V', 'S', 'M', 'L', 'P', '\x01'};

template <typename T>
void write_pod(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

void write_doubles(std::ofstream& os, const double* data, std::int64_t n) {
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}

void read_doubles(std::ifstream& is, double* data, std::int64_t n) {
  is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}

}  // namespace

void save_mlp_weights(const std::filesystem::path& path, const MlpWeights& w) {
  w.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open weight file for writing: " + path.string());
  os.write(kMlpMagic, sizeof(kMlpMagic));
  write_pod<std::int32_t>(os, w.input_shape.channels);
  write_pod<std::int32_t>(os, w.input_shape.height);
  write_pod<std::int32_t>(os, w.input_shape.width);
  write_pod<std::int32_t>(os, w.num_classes);
  write_pod<std::int32_t>(os, static_cast<std::int32_t>(w.layers.size()));
  write_pod<std::uint8_t>(os, w.channel_mean.size() > 0 ? 1 : 0);
  if (w.channel_mean.size() > 0) {
    write_doubles(os, w.channel_mean.data(), w.channel_mean.size());
    write_doubles(os, w.channel_std.data(), w.channel_std.size());
  }
  for (const auto& layer : w.layers) {
    write_pod<std::int32_t>(os, static_cast<std::int32_t>(layer.weight.rows()));
    write_pod<std::int32_t>(os, static_cast<std::int32_t>(layer.weight.cols()));
    // Eigen default storage is column-major; serialize row-major for clarity.
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = layer.weight;
    write_doubles(os, rm.data(), rm.size());
    write_doubles(os, layer.bias.data(), layer.bias.size());
  }
  if (!os) throw IoError("short write to weight file: " + path.string());
}

MlpWeights load_mlp_weights(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open weight file: " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMlpMagic, sizeof(magic)) != 0) {
    throw IoError("not an MLP weight file: " + path.string());
  }
  MlpWeights w;
  w.input_shape.channels = read_pod<std::int32_t>(is);
  w.input_shape.height = read_pod<std::int32_t>(is);
  w.input_shape.width = read_pod<std::int32_t>(is);
  w.num_classes = read_pod<std::int32_t>(is);
  const auto n_layers = read_pod<std::int32_t>(is);
  const auto has_norm = read_pod<std::uint8_t>(is);
  if (!is || n_layers <= 0 || n_layers > 64) {
    throw IoError("corrupt weight file header: " + path.string());
  }
  if (has_norm) {
    w.channel_mean.resize(w.input_shape.channels);
    w.channel_std.resize(w.input_shape.channels);
    read_doubles(is, w.channel_mean.data(), w.channel_mean.size());
    read_doubles(is, w.channel_std.data(), w.channel_std.size());
  }
  for (std::int32_t l = 0; l < n_layers; ++l) {
    const auto rows = read_pod<std::int32_t>(is);
    const auto cols = read_pod<std::int32_t>(is);
    if (!is || rows <= 0 || cols <= 0) throw IoError("corrupt layer header: " + path.string());
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
    read_doubles(is, rm.data(), rm.size());
    DenseLayer layer;
    layer.weight = rm;
    layer.bias.resize(rows);
    read_doubles(is, layer.bias.data(), rows);
    w.layers.push_back(std::move(layer));
  }
  if (!is) throw IoError("truncated weight file: " + path.string());
  w.validate();
  return w;
}

MlpClassifier::MlpClassifier(std::string model_id, MlpWeights weights)
    : model_id_(std::move(model_id)), weights_(std::move(weights)) {
  weights_.validate();
}

Eigen::VectorXd MlpClassifier::normalized(const ImageTensor& x) const {
  if (weights_.channel_mean.size() == 0) return x.pixels;
  Eigen::VectorXd out(x.pixels.size());
  const auto plane = static_cast<Eigen::Index>(weights_.input_shape.height) *
                     weights_.input_shape.width;
  for (int c = 0; c < weights_.input_shape.channels; ++c) {
    out.segment(c * plane, plane) =
        (x.pixels.segment(c * plane, plane).array() - weights_.channel_mean[c]) /
        weights_.channel_std[c];
  }
  return out;
}

Eigen::VectorXd MlpClassifier::logits(const ImageTensor& x) const {
  Eigen::VectorXd a = normalized(x);
  for (size_t l = 0; l + 1 < weights_.layers.size(); ++l) {
    a = ((weights_.layers[l].weight * a + weights_.layers[l].bias).array().max(0.0)).matrix();
  }
  const auto& last = weights_.layers.back();
  return last.weight * a + last.bias;
}

Eigen::VectorXd MlpClassifier::logit_vjp(const ImageTensor& x, const Eigen::VectorXd& v) const {
  if (v.size() != weights_.num_classes) {
    throw ArgumentError("logit_vjp: cotangent size " + std::to_string(v.size()) +
                        " != " + std::to_string(weights_.num_classes));
  }
  // Forward pass keeping pre-ReLU activations.
  const size_t L = weights_.layers.size();
  std::vector<Eigen::VectorXd> pre(L);
  Eigen::VectorXd a = normalized(x);
  for (size_t l = 0; l + 1 < L; ++l) {
    pre[l] = weights_.layers[l].weight * a + weights_.layers[l].bias;
    a = pre[l].array().max(0.0).matrix();
  }
  Eigen::VectorXd u = v;
  for (size_t l = L; l-- > 0;) {
    u = weights_.layers[l].weight.transpose() * u;
    if (l > 0) {
      u = (u.array() * (pre[l - 1].array() > 0.0).cast<double>()).matrix();
    }
  }
  if (weights_.channel_mean.size() > 0) {
    const auto plane = static_cast<Eigen::Index>(weights_.input_shape.height) *
                       weights_.input_shape.width;
    for (int c = 0; c < weights_.input_shape.channels; ++c) {
      u.segment(c * plane, plane) /= weights_.channel_std[c];
    }
  }
  return u;
}

// ---------------------------------------------------------------------------
// Registry

ModelRegistry& ModelRegistry::instance() {
  static ModelRegistry registry;
  return registry;
}

ModelRegistry::ModelRegistry() {
  register_factory("mlp", [](const std::string& model_id, const nlohmann::json& entry,
                             const std::filesystem::path& base_dir) {
    if (!entry.contains("weights")) {
      throw ArgumentError("mlp constructor: missing 'weights' for model '" + model_id + "'");
    }
    std::filesystem::path weights = entry.at("weights").get<std::string>();
    if (weights.is_relative()) weights = base_dir / weights;
    return std::make_unique<MlpClassifier>(model_id, load_mlp_weights(weights));
  });
}

void ModelRegistry::register_factory(const std::string& constructor, ModelFactory factory) {
  factories_[constructor] = std::move(factory);
}

bool ModelRegistry::has(const std::string& constructor) const {
  return factories_.count(constructor) > 0;
}

std::unique_ptr<Classifier> ModelRegistry::build(const std::string& constructor,
                                                 const std::string& model_id,
                                                 const nlohmann::json& entry,
                                                 const std::filesystem::path& base_dir) const {
  auto it = factories_.find(constructor);
  if (it == factories_.end()) {
    throw ArgumentError("unknown model constructor '" + constructor + "'");
  }
  return it->second(model_id, entry, base_dir);
}

Ensemble load_ensemble(const std::filesystem::path& config_path) {
  std::ifstream is(config_path);
  if (!is) throw IoError("cannot open model config: " + config_path.string());
  nlohmann::json config;
  try {
    is >> config;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("model config parse error in " + config_path.string() + ": " + e.what());
  }
  if (!config.contains("models") || !config["models"].is_array() || config["models"].empty()) {
    throw DataError("model config " + config_path.string() + ": missing 'models' array");
  }
  const auto base_dir = config_path.parent_path();
  std::vector<std::shared_ptr<const Classifier>> members;
  for (const auto& entry : config["models"]) {
    const auto model_id = entry.at("model_id").get<std::string>();
    const auto constructor = entry.at("constructor").get<std::string>();
    members.push_back(ModelRegistry::instance().build(constructor, model_id, entry, base_dir));
  }
  return Ensemble(std::move(members));
}

}  // namespace advsource
