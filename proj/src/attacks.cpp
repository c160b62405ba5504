#include "advsource/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <set>

#include "advsource/error.hpp"
#include "advsource/metrics.hpp"
#include "advsource/rng.hpp"

namespace advsource {

namespace {

struct KindName {
  AttackKind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {
    {AttackKind::kPgd, "PGD"},           {AttackKind::kCw, "CW"},
    {AttackKind::kMifgsm, "MIFGSM"},     {AttackKind::kUniformSign, "UNIFORM_SIGN"},
    {AttackKind::kGaussian, "GAUSSIAN"}, {AttackKind::kContrast, "CONTRAST"},
};

}  // namespace

std::string to_string(AttackKind kind) {
  for (const auto& kn : kKindNames) {
    if (kn.kind == kind) return kn.name;
  }
  throw ArgumentError("unknown attack kind");
}

AttackKind attack_kind_from_string(const std::string& name) {
  for (const auto& kn : kKindNames) {
    if (name == kn.name) return kn.kind;
  }
  throw ArgumentError("unknown attack kind '" + name + "'");
}

bool is_noise_kind(AttackKind kind) {
  return kind == AttackKind::kUniformSign || kind == AttackKind::kGaussian ||
         kind == AttackKind::kContrast;
}

void AttackConfig::validate() const {
  if (is_noise_kind(kind)) throw ArgumentError("AttackConfig: noise kinds use NoiseConfig");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw ArgumentError("AttackConfig: epsilon outside [0,1]");
  }
  const double scaled = epsilon * 255.0;
  if (std::abs(scaled - std::lround(scaled)) > 1e-9) {
    throw ArgumentError("AttackConfig: epsilon must be an integer multiple of 1/255");
  }
  if (iterations < 1) throw ArgumentError("AttackConfig: iterations must be >= 1");
  if (max_retries < 1) throw ArgumentError("AttackConfig: max_retries must be >= 1");
  if (!(step_alpha > 0.0)) throw ArgumentError("AttackConfig: step_alpha must be positive");
  if (!(mu >= 0.0)) throw ArgumentError("AttackConfig: mu must be nonnegative");
  if (!(cw_penalty_weight >= 0.0)) {
    throw ArgumentError("AttackConfig: cw_penalty_weight must be nonnegative");
  }
}

nlohmann::json AttackConfig::to_json() const {
  return nlohmann::json{
      {"kind", to_string(kind)},
      {"epsilon", epsilon},
      {"iterations", iterations},
      {"step_alpha", step_alpha},
      {"kappa", kappa},
      {"mu", mu},
      {"cw_penalty_weight", cw_penalty_weight},
      {"max_retries", max_retries},
      {"rng_seed", rng_seed},
  };
}

AttackConfig AttackConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {"kind",  "epsilon",           "iterations",
                                              "step_alpha", "kappa",        "mu",
                                              "cw_penalty_weight", "max_retries", "rng_seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw DataError("AttackConfig: unknown field '" + key + "'");
  }
  AttackConfig cfg;
  try {
    if (j.contains("kind")) cfg.kind = attack_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("epsilon")) cfg.epsilon = j.at("epsilon").get<double>();
    if (j.contains("iterations")) cfg.iterations = j.at("iterations").get<int>();
    cfg.step_alpha = j.contains("step_alpha")
                         ? j.at("step_alpha").get<double>()
                         : default_step_alpha(cfg.epsilon, cfg.iterations);
    if (j.contains("kappa")) cfg.kappa = j.at("kappa").get<double>();
    if (j.contains("mu")) cfg.mu = j.at("mu").get<double>();
    if (j.contains("cw_penalty_weight")) {
      cfg.cw_penalty_weight = j.at("cw_penalty_weight").get<double>();
    }
    if (j.contains("max_retries")) cfg.max_retries = j.at("max_retries").get<int>();
    if (j.contains("rng_seed")) cfg.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("AttackConfig: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

void AttackRecord::validate(double epsilon) const {
  if (success) {
    if (!l2 || !linf) throw DataError("AttackRecord: success without recorded norms");
    if (!(*l2 > 0.0)) throw DataError("AttackRecord: success requires l2 > 0");
    if (*linf > epsilon + 1e-12) {
      throw DataError("AttackRecord: linf " + std::to_string(*linf) + " exceeds epsilon");
    }
  }
  if (!is_noise_kind(attack_kind) && source_model < 0) {
    throw DataError("AttackRecord: adversarial record without source model");
  }
}

ImageTensor project(const ImageTensor& x_hat, const ImageTensor& x, double epsilon) {
  require_same_shape(x_hat, x, "project");
  if (epsilon < 0.0) throw ArgumentError("project: negative epsilon");
  ImageTensor out = x_hat;
  for (Eigen::Index i = 0; i < out.pixels.size(); ++i) {
    const double lo = std::max(0.0, x.pixels[i] - epsilon);
    const double hi = std::min(1.0, x.pixels[i] + epsilon);
    out.pixels[i] = std::clamp(x_hat.pixels[i], lo, hi);
  }
  return out;
}

ImageTensor quantize(const ImageTensor& x_hat, const ImageTensor& x, double epsilon) {
  require_same_shape(x_hat, x, "quantize");
  const long eps_255 = std::lround(epsilon * 255.0);
  if (epsilon < 0.0 || std::abs(epsilon * 255.0 - static_cast<double>(eps_255)) > 1e-9) {
    throw ArgumentError("quantize: epsilon must be a nonnegative multiple of 1/255");
  }
  ImageTensor out = x_hat;
  for (Eigen::Index i = 0; i < out.pixels.size(); ++i) {
    const double scaled = x.pixels[i] * 255.0;
    const long k0 = std::lround(scaled);
    if (std::abs(scaled - static_cast<double>(k0)) > 1e-6) {
      throw ArgumentError("quantize: source pixel " + std::to_string(i) +
                          " is not on the 8-bit grid");
    }
    // Round, then re-project in integer space; both constraints become exact.
    long k = std::lround(x_hat.pixels[i] * 255.0);
    k = std::clamp(k, std::max(0L, k0 - eps_255), std::min(255L, k0 + eps_255));
    out.pixels[i] = grid_value(static_cast<int>(k));
  }
  return out;
}

Eigen::VectorXd mifgsm_momentum_update(const Eigen::VectorXd& tau, const Eigen::VectorXd& grad,
                                       double mu) {
  if (tau.size() != grad.size()) throw ShapeError("mifgsm_momentum_update: size mismatch");
  const double l1 = grad.lpNorm<1>();
  if (l1 > 0.0) return mu * tau + grad / l1;
  return mu * tau;
}

double cw_margin_loss(const Eigen::VectorXd& logits, int target, double kappa) {
  if (target < 0 || target >= logits.size()) {
    throw ArgumentError("cw_margin_loss: target out of range");
  }
  double best_other = -std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < logits.size(); ++k) {
    if (k != target && logits[k] > best_other) best_other = logits[k];
  }
  return std::max(best_other - logits[target], -kappa);
}

namespace {

struct BestProbe {
  bool found = false;
  double l2 = 0.0;
  double linf = 0.0;
  int iteration = -1;
  int attempt = -1;
  int target_class = -1;
  bool targeted_hit = false;
};

// One attack step for a fixed target class; must leave the iterate projected.
using StepFn = std::function<void(ImageTensor& x_hat, int iteration)>;
using StepperFactory = std::function<StepFn(int target_class)>;

std::vector<AttackRecord> attack_driver(const Ensemble& ensemble, int source_index,
                                        const ImageTensor& x, const AttackConfig& cfg,
                                        ProbeSink* sink, const StepperFactory& make_stepper) {
  cfg.validate();
  x.validate();
  if (source_index < 0 || source_index >= ensemble.size()) {
    throw ArgumentError("attack: source model index out of range");
  }
  if (x.true_class < 0 || x.true_class >= ensemble.num_classes()) {
    throw ArgumentError("attack: image true_class out of range");
  }
  if (!is_eligible(ensemble, x)) {
    throw PreconditionError("attack: image '" + x.image_id +
                            "' is not correctly classified by every ensemble member");
  }

  const int n_models = ensemble.size();
  const int num_classes = ensemble.num_classes();
  CounterRng rng(StreamKey(cfg.rng_seed).with(x.image_id).with(source_index));

  std::vector<BestProbe> best(n_models);
  std::set<int> tried;
  int attempts_made = 0;
  int last_target = -1;
  bool whitebox_done = false;

  for (int attempt = 1; attempt <= cfg.max_retries && !whitebox_done; ++attempt) {
    // Redraws exclude the true class and every class tried for this image.
    std::vector<int> candidates;
    for (int c = 0; c < num_classes; ++c) {
      if (c != x.true_class && !tried.count(c)) candidates.push_back(c);
    }
    if (candidates.empty()) break;
    const int target = candidates[rng.next_below(candidates.size())];
    tried.insert(target);
    attempts_made = attempt;
    last_target = target;

    ImageTensor x_hat = x;
    StepFn step = make_stepper(target);
    bool whitebox_hit_this_attempt = false;

    for (int iter = 1; iter <= cfg.iterations; ++iter) {
      try {
        step(x_hat, iter);
      } catch (const PreconditionError&) {
        throw;
      } catch (const std::exception& e) {
        throw NumericError("attack step failed for image '" + x.image_id + "' at iteration " +
                           std::to_string(iter) + ": " + e.what());
      }
      if (sink) sink->on_iterate(attempt, iter, x_hat);

      const ImageTensor probe = quantize(x_hat, x, cfg.epsilon);
      if (sink) sink->on_quantized(attempt, iter, probe);
      const double probe_l2 = l2_norm(x, probe);
      const double probe_linf = linf_norm(x, probe);

      for (int j = 0; j < n_models; ++j) {
        const int cls = predict_class(ensemble.member(j), probe);
        const bool targeted_hit = (cls == target);
        const bool success = (j == source_index) ? targeted_hit : (cls != x.true_class);
        if (sink) sink->on_probe(attempt, iter, j, success, targeted_hit, probe_l2, probe_linf);
        if (j == source_index && success) whitebox_hit_this_attempt = true;
        if (success && probe_l2 > 0.0) {
          BestProbe& b = best[j];
          if (!b.found || probe_l2 < b.l2) {
            b = BestProbe{true, probe_l2, probe_linf, iter, attempt, target, targeted_hit};
          }
        }
      }
    }
    whitebox_done = whitebox_hit_this_attempt;
  }

  std::vector<AttackRecord> out;
  out.reserve(n_models);
  for (int j = 0; j < n_models; ++j) {
    AttackRecord r;
    r.image_id = x.image_id;
    r.attack_kind = cfg.kind;
    r.source_model = source_index;
    r.target_model = j;
    const BestProbe& b = best[j];
    if (b.found) {
      r.success = true;
      r.targeted_hit = b.targeted_hit;
      r.l2 = b.l2;
      r.linf = b.linf;
      r.iteration_found = b.iteration;
      r.target_class = b.target_class;
      r.attempt_index = b.attempt;
    } else {
      r.target_class = last_target;
      r.attempt_index = attempts_made;
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

std::vector<AttackRecord> pgd_run(const Ensemble& ensemble, int source_index,
                                  const ImageTensor& x, const AttackConfig& cfg,
                                  ProbeSink* sink) {
  if (cfg.kind != AttackKind::kPgd) throw ArgumentError("pgd_run: cfg.kind must be PGD");
  const Classifier& source = ensemble.member(source_index);
  auto factory = [&](int target) -> StepFn {
    return [&, target](ImageTensor& x_hat, int) {
      const Eigen::VectorXd grad = loss_gradient(source, x_hat, target);
      x_hat.pixels -= cfg.step_alpha * grad.array().sign().matrix();
      x_hat = project(x_hat, x, cfg.epsilon);
    };
  };
  return attack_driver(ensemble, source_index, x, cfg, sink, factory);
}

std::vector<AttackRecord> cw_run(const Ensemble& ensemble, int source_index, const ImageTensor& x,
                                 const AttackConfig& cfg, ProbeSink* sink) {
  if (cfg.kind != AttackKind::kCw) throw ArgumentError("cw_run: cfg.kind must be CW");
  const Classifier& source = ensemble.member(source_index);
  const int num_classes = ensemble.num_classes();
  auto factory = [&](int target) -> StepFn {
    return [&, target](ImageTensor& x_hat, int) {
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(x.pixels.size());
      const Eigen::VectorXd logits = source.logits(x_hat);
      // Margin term is flat once the target beats every class by kappa.
      int runner_up = -1;
      double best_other = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < num_classes; ++k) {
        if (k != target && logits[k] > best_other) {
          best_other = logits[k];
          runner_up = k;
        }
      }
      if (best_other - logits[target] > -cfg.kappa) {
        Eigen::VectorXd v = Eigen::VectorXd::Zero(num_classes);
        v[runner_up] = 1.0;
        v[target] = -1.0;
        grad += cfg.cw_penalty_weight * source.logit_vjp(x_hat, v);
      }
      const Eigen::VectorXd delta = x_hat.pixels - x.pixels;
      const double delta_norm = delta.norm();
      if (delta_norm > 0.0) grad += delta / delta_norm;
      x_hat.pixels -= cfg.step_alpha * grad;
      x_hat = project(x_hat, x, cfg.epsilon);
    };
  };
  return attack_driver(ensemble, source_index, x, cfg, sink, factory);
}

std::vector<AttackRecord> mifgsm_run(const Ensemble& ensemble, int source_index,
                                     const ImageTensor& x, const AttackConfig& cfg,
                                     ProbeSink* sink) {
  if (cfg.kind != AttackKind::kMifgsm) throw ArgumentError("mifgsm_run: cfg.kind must be MIFGSM");
  const Classifier& source = ensemble.member(source_index);
  auto factory = [&](int target) -> StepFn {
    auto momentum = std::make_shared<Eigen::VectorXd>(Eigen::VectorXd::Zero(x.pixels.size()));
    return [&, target, momentum](ImageTensor& x_hat, int iter) {
      const Eigen::VectorXd grad = loss_gradient(source, x_hat, target);
      if (grad.lpNorm<1>() == 0.0) {
        std::clog << "mifgsm: zero gradient at iteration " << iter << " for image '"
                  << x.image_id << "'\n";
      }
      *momentum = mifgsm_momentum_update(*momentum, grad, cfg.mu);
      x_hat.pixels -= cfg.step_alpha * momentum->array().sign().matrix();
      x_hat = project(x_hat, x, cfg.epsilon);
    };
  };
  return attack_driver(ensemble, source_index, x, cfg, sink, factory);
}

std::vector<AttackRecord> run_attack(const Ensemble& ensemble, int source_index,
                                     const ImageTensor& x, const AttackConfig& cfg,
                                     ProbeSink* sink) {
  switch (cfg.kind) {
    case AttackKind::kPgd:
      return pgd_run(ensemble, source_index, x, cfg, sink);
    case AttackKind::kCw:
      return cw_run(ensemble, source_index, x, cfg, sink);
    case AttackKind::kMifgsm:
      return mifgsm_run(ensemble, source_index, x, cfg, sink);
    default:
      throw ArgumentError("run_attack: unknown or non-adversarial attack kind");
  }
}

}  // namespace advsource
