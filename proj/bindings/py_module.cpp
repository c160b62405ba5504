// Python bindings for the main operations: classifiers, eligibility,
// attacks/noise, perturbation metrics, suitability scores, and record stores.

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "advsource/attacks.hpp"
#include "advsource/dataset.hpp"
#include "advsource/experiments.hpp"
#include "advsource/metrics.hpp"
#include "advsource/models.hpp"
#include "advsource/noise.hpp"
#include "advsource/store.hpp"
#include "advsource/suitability.hpp"

namespace py = pybind11;
using namespace advsource;

namespace {

ImageTensor make_image(py::array_t<double, py::array::c_style | py::array::forcecast> pixels,
                       const std::string& image_id, int true_class) {
  if (pixels.ndim() != 3) throw ShapeError("pixels must have shape (C, H, W)");
  ImageTensor img;
  img.shape = Shape{static_cast<int>(pixels.shape(0)), static_cast<int>(pixels.shape(1)),
                    static_cast<int>(pixels.shape(2))};
  img.pixels.resize(img.shape.elements());
  std::copy(pixels.data(), pixels.data() + img.shape.elements(), img.pixels.data());
  img.image_id = image_id;
  img.true_class = true_class;
  img.validate();
  return img;
}

py::array_t<double> image_pixels(const ImageTensor& img) {
  py::array_t<double> out({img.shape.channels, img.shape.height, img.shape.width});
  std::copy(img.pixels.data(), img.pixels.data() + img.pixels.size(), out.mutable_data());
  return out;
}

std::shared_ptr<MlpClassifier> make_mlp(
    const std::string& model_id, const Shape& shape, int num_classes,
    const std::vector<std::pair<Eigen::MatrixXd, Eigen::VectorXd>>& layers,
    std::optional<Eigen::VectorXd> channel_mean, std::optional<Eigen::VectorXd> channel_std) {
  MlpWeights w;
  w.input_shape = shape;
  w.num_classes = num_classes;
  if (channel_mean) w.channel_mean = *channel_mean;
  if (channel_std) w.channel_std = *channel_std;
  for (const auto& [weight, bias] : layers) w.layers.push_back({weight, bias});
  return std::make_shared<MlpClassifier>(model_id, std::move(w));
}

py::dict record_dict(const AttackRecord& r) {
  py::dict d;
  d["image_id"] = r.image_id;
  d["attack_kind"] = to_string(r.attack_kind);
  d["source_model"] = r.source_model;
  d["target_model"] = r.target_model;
  d["success"] = r.success;
  d["targeted_hit"] = r.targeted_hit;
  d["l2"] = r.l2 ? py::object(py::float_(*r.l2)) : py::none();
  d["linf"] = r.linf ? py::object(py::float_(*r.linf)) : py::none();
  d["iteration_found"] = r.iteration_found;
  d["target_class"] = r.target_class;
  d["attempt_index"] = r.attempt_index;
  return d;
}

py::array_t<double> matrix_array(const TransferMatrix& m) {
  py::array_t<double> out({m.num_models, m.num_models});
  for (int i = 0; i < m.num_models; ++i) {
    for (int j = 0; j < m.num_models; ++j) {
      const auto& cell = m.at(i, j);
      out.mutable_at(i, j) = cell ? *cell : std::numeric_limits<double>::quiet_NaN();
    }
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Source-image suitability analysis for adversarial-attack benchmarking";

  py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<PreconditionError>(m, "PreconditionError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::class_<Shape>(m, "Shape")
      .def(py::init<int, int, int>(), py::arg("channels"), py::arg("height"), py::arg("width"))
      .def_readwrite("channels", &Shape::channels)
      .def_readwrite("height", &Shape::height)
      .def_readwrite("width", &Shape::width)
      .def("__repr__", [](const Shape& s) { return "Shape(" + s.str() + ")"; });

  py::class_<ImageTensor>(m, "ImageTensor")
      .def(py::init(&make_image), py::arg("pixels"), py::arg("image_id") = "",
           py::arg("true_class") = -1)
      .def_property_readonly("pixels", &image_pixels)
      .def_property_readonly("shape", [](const ImageTensor& t) { return t.shape; })
      .def_readwrite("image_id", &ImageTensor::image_id)
      .def_readwrite("true_class", &ImageTensor::true_class);

  py::class_<Classifier, std::shared_ptr<Classifier>>(m, "Classifier")
      .def_property_readonly("model_id", &Classifier::model_id)
      .def_property_readonly("num_classes", &Classifier::num_classes)
      .def_property_readonly("input_shape", &Classifier::input_shape);

  py::class_<MlpClassifier, Classifier, std::shared_ptr<MlpClassifier>>(m, "MlpClassifier")
      .def(py::init(&make_mlp), py::arg("model_id"), py::arg("input_shape"),
           py::arg("num_classes"), py::arg("layers"), py::arg("channel_mean") = py::none(),
           py::arg("channel_std") = py::none(),
           "Dense ReLU network from a list of (weight, bias) pairs");

  py::class_<Ensemble>(m, "Ensemble")
      .def(py::init([](const std::vector<std::shared_ptr<Classifier>>& members) {
             std::vector<std::shared_ptr<const Classifier>> owned(members.begin(), members.end());
             return Ensemble(std::move(owned));
           }),
           py::arg("members"))
      .def("__len__", &Ensemble::size)
      .def_property_readonly("model_ids", &Ensemble::model_ids)
      .def_property_readonly("num_classes", &Ensemble::num_classes)
      .def_property_readonly("input_shape", &Ensemble::input_shape);

  m.def("load_ensemble", &load_ensemble, py::arg("config_path"));
  m.def("load_images", &load_images, py::arg("manifest_path"));

  m.def("predict_class", &predict_class, py::arg("model"), py::arg("image"));
  m.def("predict_probs", &predict_probs, py::arg("model"), py::arg("image"));
  m.def("loss_gradient",
        [](const Classifier& model, const ImageTensor& x, int target) {
          const Eigen::VectorXd g = loss_gradient(model, x, target);
          ImageTensor t = x;
          t.pixels = g;
          return image_pixels(t);
        },
        py::arg("model"), py::arg("image"), py::arg("target"),
        "Gradient of the targeted cross-entropy loss, shaped like the pixels");
  m.def("softmax", &softmax, py::arg("logits"));
  m.def("is_eligible", &is_eligible, py::arg("ensemble"), py::arg("image"));
  m.def("filter_eligible", &filter_eligible, py::arg("ensemble"), py::arg("images"));

  py::class_<AttackConfig>(m, "AttackConfig")
      .def(py::init([](const std::string& kind, double epsilon, int iterations,
                       std::optional<double> step_alpha, double kappa, double mu,
                       double cw_penalty_weight, int max_retries, std::uint64_t rng_seed) {
             AttackConfig cfg;
             cfg.kind = attack_kind_from_string(kind);
             cfg.epsilon = epsilon;
             cfg.iterations = iterations;
             cfg.step_alpha =
                 step_alpha ? *step_alpha : AttackConfig::default_step_alpha(epsilon, iterations);
             cfg.kappa = kappa;
             cfg.mu = mu;
             cfg.cw_penalty_weight = cw_penalty_weight;
             cfg.max_retries = max_retries;
             cfg.rng_seed = rng_seed;
             cfg.validate();
             return cfg;
           }),
           py::arg("kind") = "PGD", py::arg("epsilon") = 38.0 / 255.0, py::arg("iterations") = 50,
           py::arg("step_alpha") = py::none(), py::arg("kappa") = 20.0, py::arg("mu") = 1.0,
           py::arg("cw_penalty_weight") = 1.0, py::arg("max_retries") = 5,
           py::arg("rng_seed") = 0)
      .def_readwrite("epsilon", &AttackConfig::epsilon)
      .def_readwrite("iterations", &AttackConfig::iterations)
      .def_readwrite("step_alpha", &AttackConfig::step_alpha)
      .def_readwrite("max_retries", &AttackConfig::max_retries)
      .def_readwrite("rng_seed", &AttackConfig::rng_seed);

  py::class_<NoiseConfig>(m, "NoiseConfig")
      .def(py::init([](const std::string& kind, int epsilon_255, std::optional<int> iterations,
                       std::optional<int> restarts, double sigma_255, std::uint64_t rng_seed) {
             NoiseConfig cfg = NoiseConfig::defaults_for(attack_kind_from_string(kind));
             cfg.epsilon_255 = epsilon_255;
             if (iterations) cfg.iterations = *iterations;
             if (restarts) cfg.restarts = *restarts;
             cfg.sigma_255 = sigma_255;
             cfg.rng_seed = rng_seed;
             cfg.validate();
             return cfg;
           }),
           py::arg("kind"), py::arg("epsilon_255") = 38, py::arg("iterations") = py::none(),
           py::arg("restarts") = py::none(), py::arg("sigma_255") = 10.0, py::arg("rng_seed") = 0);

  m.def("project",
        [](const ImageTensor& x_hat, const ImageTensor& x, double epsilon) {
          return project(x_hat, x, epsilon);
        },
        py::arg("x_hat"), py::arg("x"), py::arg("epsilon"));
  m.def("quantize",
        [](const ImageTensor& x_hat, const ImageTensor& x, double epsilon) {
          return quantize(x_hat, x, epsilon);
        },
        py::arg("x_hat"), py::arg("x"), py::arg("epsilon"));

  m.def("run_attack",
        [](const Ensemble& ensemble, int source_index, const ImageTensor& x,
           const AttackConfig& cfg) {
          py::list out;
          for (const auto& r : run_attack(ensemble, source_index, x, cfg)) {
            out.append(record_dict(r));
          }
          return out;
        },
        py::arg("ensemble"), py::arg("source_index"), py::arg("image"), py::arg("config"));
  m.def("run_noise",
        [](const Ensemble& ensemble, const ImageTensor& x, const NoiseConfig& cfg) {
          py::list out;
          for (const auto& r : run_noise(ensemble, x, cfg)) out.append(record_dict(r));
          return out;
        },
        py::arg("ensemble"), py::arg("image"), py::arg("config"));

  m.def("l2_norm", &l2_norm, py::arg("x"), py::arg("x_hat"));
  m.def("linf_norm", &linf_norm, py::arg("x"), py::arg("x_hat"));

  m.def("q_ratio", &q_ratio, py::arg("probs"));
  m.def("one_minus_max", &one_minus_max, py::arg("probs"));
  m.def("mse", &mse, py::arg("probs"), py::arg("true_class"));
  m.def("wasserstein", &wasserstein, py::arg("probs"), py::arg("true_class"));
  m.def("pearson",
        [](const std::vector<double>& xs, const std::vector<double>& ys) {
          return pearson(xs, ys);
        },
        py::arg("xs"), py::arg("ys"));

  m.def("load_records",
        [](const std::filesystem::path& store_dir) {
          const RecordStore store = RecordStore::open(store_dir);
          py::list out;
          for (const auto& r : store.load_all()) out.append(record_dict(r));
          return out;
        },
        py::arg("store_dir"), "All records of a campaign store as dicts");
  m.def("store_model_ids",
        [](const std::filesystem::path& store_dir) {
          return RecordStore::open(store_dir).manifest().model_ids;
        },
        py::arg("store_dir"));

  m.def("run_campaign",
        [](const std::filesystem::path& plan_path, const std::string& scope,
           std::optional<std::uint64_t> seed) {
          CampaignPlan plan = CampaignPlan::from_file(plan_path, seed);
          CampaignScope s = CampaignScope::kAll;
          if (scope == "attacks") s = CampaignScope::kAttacks;
          else if (scope == "noise") s = CampaignScope::kNoise;
          else if (scope != "all") throw ArgumentError("scope must be attacks, noise, or all");
          return run_campaign(plan, s).root();
        },
        py::arg("plan_path"), py::arg("scope") = "all", py::arg("seed") = py::none(),
        "Execute a campaign plan; returns the store directory");

  m.def("transfer_matrix",
        [](const std::filesystem::path& store_dir, const std::string& attack,
           const std::string& mode) {
          const RecordStore store = RecordStore::open(store_dir);
          const AttackKind kind = attack_kind_from_string(attack);
          std::vector<AttackRecord> records;
          std::set<std::string> images;
          for (const auto& r : store.load_all()) {
            if (r.attack_kind != kind) continue;
            records.push_back(r);
            images.insert(r.image_id);
          }
          const std::vector<std::string> ids(images.begin(), images.end());
          return matrix_array(transfer_matrix(
              records, ids, static_cast<int>(store.manifest().model_ids.size()),
              mode == "targeted" ? MatrixMode::kTargeted : MatrixMode::kUntargeted));
        },
        py::arg("store_dir"), py::arg("attack"), py::arg("mode") = "untargeted");
}
