#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "advsource/tensor.hpp"

namespace advsource {

// Opaque differentiable classifier. Implementations must be deterministic in
// inference mode: identical inputs always produce identical logits. Any input
// normalization (mean/std) lives behind this interface so that callers always
// reason in raw [0,1] pixel space.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual const std::string& model_id() const = 0;
  virtual int num_classes() const = 0;
  virtual Shape input_shape() const = 0;

  virtual Eigen::VectorXd logits(const ImageTensor& x) const = 0;

  // Gradient of v . g(x) with respect to the input pixels (vector-Jacobian
  // product). Both the targeted cross-entropy gradient and margin-loss
  // gradients are built on top of this.
  virtual Eigen::VectorXd logit_vjp(const ImageTensor& x, const Eigen::VectorXd& v) const = 0;

  // Capability flag: whether gradient calls may run concurrently on this
  // handle. Callers must not assume more than this declares.
  virtual bool reentrant_gradients() const { return false; }
};

// Numerically stable softmax (max-logit subtraction). Throws NumericError on
// non-finite logits.
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

// Argmax of the logits; ties broken by lowest class index.
int predict_class(const Classifier& model, const ImageTensor& x);

// Softmax of the logits; elements positive and summing to 1 within 1e-9.
Eigen::VectorXd predict_probs(const Classifier& model, const ImageTensor& x);

// Gradient of the targeted cross-entropy loss -log softmax(g(x))_target with
// respect to the input pixels.
Eigen::VectorXd loss_gradient(const Classifier& model, const ImageTensor& x, int target);

// Ordered, immutable collection of classifiers sharing input shape and class
// count. Record indices i,j always refer to this order.
class Ensemble {
 public:
  explicit Ensemble(std::vector<std::shared_ptr<const Classifier>> members);

  int size() const { return static_cast<int>(members_.size()); }
  const Classifier& member(int i) const { return *members_.at(i); }
  std::shared_ptr<const Classifier> member_ptr(int i) const { return members_.at(i); }
  int num_classes() const { return members_.front()->num_classes(); }
  Shape input_shape() const { return members_.front()->input_shape(); }
  std::vector<std::string> model_ids() const;
  int index_of(const std::string& model_id) const;  // -1 when absent

  bool all_reentrant() const;

 private:
  std::vector<std::shared_ptr<const Classifier>> members_;
};

bool is_eligible(const Ensemble& ensemble, const ImageTensor& x);

// Keeps exactly the images every member classifies into their true class,
// preserving input order.
std::vector<ImageTensor> filter_eligible(const Ensemble& ensemble,
                                         const std::vector<ImageTensor>& images);

// ---------------------------------------------------------------------------
// Built-in MLP backend: dense layers with ReLU between them, optional
// per-channel input normalization, weights stored in a flat binary file.

struct DenseLayer {
  Eigen::MatrixXd weight;  // rows = outputs, cols = inputs
  Eigen::VectorXd bias;
};

struct MlpWeights {
  Shape input_shape;
  int num_classes = 0;
  Eigen::VectorXd channel_mean;  // size C, or empty for identity
  Eigen::VectorXd channel_std;
  std::vector<DenseLayer> layers;

  void validate() const;
};

MlpWeights load_mlp_weights(const std::filesystem::path& path);
void save_mlp_weights(const std::filesystem::path& path, const MlpWeights& w);

class MlpClassifier : public Classifier {
 public:
  MlpClassifier(std::string model_id, MlpWeights weights);

  const std::string& model_id() const override { return model_id_; }
  int num_classes() const override { return weights_.num_classes; }
  Shape input_shape() const override { return weights_.input_shape; }
  Eigen::VectorXd logits(const ImageTensor& x) const override;
  Eigen::VectorXd logit_vjp(const ImageTensor& x, const Eigen::VectorXd& v) const override;
  bool reentrant_gradients() const override { return true; }  // stateless

  const MlpWeights& weights() const { return weights_; }

 private:
  Eigen::VectorXd normalized(const ImageTensor& x) const;

  std::string model_id_;
  MlpWeights weights_;
};

// ---------------------------------------------------------------------------
// Registry of named constructors so real model zoos can plug in behind the
// same interface.

using ModelFactory = std::function<std::unique_ptr<Classifier>(
    const std::string& model_id, const nlohmann::json& entry,
    const std::filesystem::path& base_dir)>;

class ModelRegistry {
 public:
  static ModelRegistry& instance();

  void register_factory(const std::string& constructor, ModelFactory factory);
  bool has(const std::string& constructor) const;
  std::unique_ptr<Classifier> build(const std::string& constructor,
                                    const std::string& model_id,
                                    const nlohmann::json& entry,
                                    const std::filesystem::path& base_dir) const;

 private:
  ModelRegistry();
  std::map<std::string, ModelFactory> factories_;
};

// Loads an ensemble from a registry config file:
//   {"models": [{"model_id": "...", "constructor": "mlp", "weights": "..."}]}
// Relative weight paths resolve against the config file's directory.
Ensemble load_ensemble(const std::filesystem::path& config_path);

}  // namespace advsource
