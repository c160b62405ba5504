#include "advsource/noise.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "advsource/error.hpp"
#include "advsource/metrics.hpp"
#include "advsource/rng.hpp"

namespace advsource {

NoiseConfig NoiseConfig::defaults_for(AttackKind kind) {
  NoiseConfig cfg;
  cfg.kind = kind;
  if (kind == AttackKind::kGaussian) cfg.restarts = 11;
  cfg.validate();
  return cfg;
}

void NoiseConfig::validate() const {
  if (!is_noise_kind(kind)) throw ArgumentError("NoiseConfig: adversarial kinds use AttackConfig");
  if (epsilon_255 < 0 || epsilon_255 > 255) {
    throw ArgumentError("NoiseConfig: epsilon_255 outside [0,255]");
  }
  if (iterations < 1) throw ArgumentError("NoiseConfig: iterations must be >= 1");
  if (restarts < 1) throw ArgumentError("NoiseConfig: restarts must be >= 1");
  if (!(sigma_255 > 0.0)) throw ArgumentError("NoiseConfig: sigma_255 must be positive");
}

nlohmann::json NoiseConfig::to_json() const {
  return nlohmann::json{
      {"kind", to_string(kind)},   {"epsilon_255", epsilon_255}, {"iterations", iterations},
      {"restarts", restarts},      {"sigma_255", sigma_255},     {"rng_seed", rng_seed},
  };
}

NoiseConfig NoiseConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {"kind",     "epsilon_255", "iterations",
                                              "restarts", "sigma_255",   "rng_seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw DataError("NoiseConfig: unknown field '" + key + "'");
  }
  NoiseConfig cfg;
  try {
    if (j.contains("kind")) cfg.kind = attack_kind_from_string(j.at("kind").get<std::string>());
    if (cfg.kind == AttackKind::kGaussian) cfg.restarts = 11;
    if (j.contains("epsilon_255")) cfg.epsilon_255 = j.at("epsilon_255").get<int>();
    if (j.contains("iterations")) cfg.iterations = j.at("iterations").get<int>();
    if (j.contains("restarts")) cfg.restarts = j.at("restarts").get<int>();
    if (j.contains("sigma_255")) cfg.sigma_255 = j.at("sigma_255").get<double>();
    if (j.contains("rng_seed")) cfg.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("NoiseConfig: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

namespace {

struct BestProbe {
  bool found = false;
  double l2 = 0.0;
  double linf = 0.0;
  int iteration = -1;
  int attempt = -1;
};

std::vector<int> grid_indices(const ImageTensor& x) {
  std::vector<int> k(x.pixels.size());
  for (Eigen::Index i = 0; i < x.pixels.size(); ++i) {
    const double scaled = x.pixels[i] * 255.0;
    const long v = std::lround(scaled);
    if (std::abs(scaled - static_cast<double>(v)) > 1e-6) {
      throw ArgumentError("noise: source pixel " + std::to_string(i) +
                          " is not on the 8-bit grid");
    }
    k[i] = static_cast<int>(v);
  }
  return k;
}

ImageTensor from_grid(const std::vector<int>& k, const ImageTensor& x) {
  ImageTensor out = x;
  for (size_t i = 0; i < k.size(); ++i) out.pixels[static_cast<Eigen::Index>(i)] = grid_value(k[i]);
  return out;
}

void check_eligible(const Ensemble& ensemble, const ImageTensor& x) {
  x.validate();
  if (x.true_class < 0 || x.true_class >= ensemble.num_classes()) {
    throw ArgumentError("noise: image true_class out of range");
  }
  if (!is_eligible(ensemble, x)) {
    throw PreconditionError("noise: image '" + x.image_id +
                            "' is not correctly classified by every ensemble member");
  }
}

// Evaluates one probe against every member, updating per-target minima.
// Returns true when any prediction left the true class.
bool probe_all(const Ensemble& ensemble, const ImageTensor& x, const ImageTensor& probe,
               int attempt, int iteration, std::vector<BestProbe>& best, ProbeSink* sink) {
  if (sink) sink->on_quantized(attempt, iteration, probe);
  const double probe_l2 = l2_norm(x, probe);
  const double probe_linf = linf_norm(x, probe);
  bool any = false;
  for (int j = 0; j < ensemble.size(); ++j) {
    const int cls = predict_class(ensemble.member(j), probe);
    const bool success = cls != x.true_class;
    if (sink) sink->on_probe(attempt, iteration, j, success, false, probe_l2, probe_linf);
    if (success && probe_l2 > 0.0) {
      any = true;
      BestProbe& b = best[j];
      if (!b.found || probe_l2 < b.l2) {
        b = BestProbe{true, probe_l2, probe_linf, iteration, attempt};
      }
    }
  }
  return any;
}

std::vector<AttackRecord> make_records(const Ensemble& ensemble, const ImageTensor& x,
                                       AttackKind kind, const std::vector<BestProbe>& best,
                                       int attempts_made) {
  std::vector<AttackRecord> out;
  out.reserve(ensemble.size());
  for (int j = 0; j < ensemble.size(); ++j) {
    AttackRecord r;
    r.image_id = x.image_id;
    r.attack_kind = kind;
    r.source_model = -1;  // no gradient source
    r.target_model = j;
    const BestProbe& b = best[j];
    if (b.found) {
      r.success = true;
      r.l2 = b.l2;
      r.linf = b.linf;
      r.iteration_found = b.iteration;
      r.attempt_index = b.attempt;
    } else {
      r.attempt_index = attempts_made;
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

std::vector<AttackRecord> uniform_sign_noise(const Ensemble& ensemble, const ImageTensor& x,
                                             const NoiseConfig& cfg, ProbeSink* sink) {
  if (cfg.kind != AttackKind::kUniformSign) {
    throw ArgumentError("uniform_sign_noise: cfg.kind must be UNIFORM_SIGN");
  }
  cfg.validate();
  check_eligible(ensemble, x);
  const std::vector<int> base = grid_indices(x);
  const int eps = cfg.epsilon_255;

  std::vector<BestProbe> best(ensemble.size());
  int attempts_made = 0;
  for (int attempt = 1; attempt <= cfg.restarts; ++attempt) {
    attempts_made = attempt;
    CounterRng rng(StreamKey(cfg.rng_seed)
                       .with(x.image_id)
                       .with(to_string(cfg.kind))
                       .with(attempt));
    std::vector<int> k = base;
    bool any_success = false;
    for (int iter = 1; iter <= cfg.iterations; ++iter) {
      for (size_t i = 0; i < k.size(); ++i) {
        k[i] += rng.next_sign();
        k[i] = std::clamp(k[i], std::max(0, base[i] - eps), std::min(255, base[i] + eps));
      }
      const ImageTensor probe = from_grid(k, x);
      if (sink) sink->on_iterate(attempt, iter, probe);
      any_success |= probe_all(ensemble, x, probe, attempt, iter, best, sink);
    }
    if (any_success) break;
  }
  return make_records(ensemble, x, cfg.kind, best, attempts_made);
}

std::vector<AttackRecord> gaussian_noise(const Ensemble& ensemble, const ImageTensor& x,
                                         const NoiseConfig& cfg, ProbeSink* sink) {
  if (cfg.kind != AttackKind::kGaussian) {
    throw ArgumentError("gaussian_noise: cfg.kind must be GAUSSIAN");
  }
  cfg.validate();
  check_eligible(ensemble, x);
  const std::vector<int> base = grid_indices(x);
  const int eps = cfg.epsilon_255;

  std::vector<BestProbe> best(ensemble.size());
  int attempts_made = 0;
  for (int attempt = 1; attempt <= cfg.restarts; ++attempt) {
    attempts_made = attempt;
    CounterRng rng(StreamKey(cfg.rng_seed)
                       .with(x.image_id)
                       .with(to_string(cfg.kind))
                       .with(attempt));
    std::vector<int> k(base.size());
    for (size_t i = 0; i < k.size(); ++i) {
      const long shifted = std::lround(base[i] + cfg.sigma_255 * rng.next_gaussian());
      k[i] = static_cast<int>(
          std::clamp(shifted, static_cast<long>(std::max(0, base[i] - eps)),
                     static_cast<long>(std::min(255, base[i] + eps))));
    }
    const ImageTensor probe = from_grid(k, x);
    if (sink) sink->on_iterate(attempt, 1, probe);
    if (probe_all(ensemble, x, probe, attempt, 1, best, sink)) break;
  }
  return make_records(ensemble, x, cfg.kind, best, attempts_made);
}

std::vector<AttackRecord> contrast_sweep(const Ensemble& ensemble, const ImageTensor& x,
                                         const NoiseConfig& cfg, ProbeSink* sink) {
  if (cfg.kind != AttackKind::kContrast) {
    throw ArgumentError("contrast_sweep: cfg.kind must be CONTRAST");
  }
  cfg.validate();
  check_eligible(ensemble, x);
  const std::vector<int> base = grid_indices(x);

  // Shifts ordered by |b| then sign, so the retained record per target is the
  // first success in (|b|, b) order. b = 0 cannot change a prediction.
  std::vector<int> shifts;
  for (int mag = 1; mag <= cfg.epsilon_255; ++mag) {
    shifts.push_back(-mag);
    shifts.push_back(mag);
  }

  std::vector<BestProbe> best(ensemble.size());
  std::vector<int> shift_of(ensemble.size(), 0);
  for (const int b : shifts) {
    std::vector<int> k(base.size());
    for (size_t i = 0; i < k.size(); ++i) k[i] = std::clamp(base[i] + b, 0, 255);
    const ImageTensor probe = from_grid(k, x);
    if (sink) {
      sink->on_iterate(1, b, probe);
      sink->on_quantized(1, b, probe);
    }
    const double probe_l2 = l2_norm(x, probe);
    const double probe_linf = linf_norm(x, probe);
    for (int j = 0; j < ensemble.size(); ++j) {
      const int cls = predict_class(ensemble.member(j), probe);
      const bool success = cls != x.true_class;
      if (sink) sink->on_probe(1, b, j, success, false, probe_l2, probe_linf);
      if (success && probe_l2 > 0.0 && !best[j].found) {
        best[j] = BestProbe{true, probe_l2, probe_linf, b, 1};
        shift_of[j] = b;
      }
    }
  }
  auto records = make_records(ensemble, x, cfg.kind, best, 1);
  for (int j = 0; j < ensemble.size(); ++j) {
    if (records[j].success) records[j].iteration_found = shift_of[j];
  }
  return records;
}

std::vector<AttackRecord> run_noise(const Ensemble& ensemble, const ImageTensor& x,
                                    const NoiseConfig& cfg, ProbeSink* sink) {
  switch (cfg.kind) {
    case AttackKind::kUniformSign:
      return uniform_sign_noise(ensemble, x, cfg, sink);
    case AttackKind::kGaussian:
      return gaussian_noise(ensemble, x, cfg, sink);
    case AttackKind::kContrast:
      return contrast_sweep(ensemble, x, cfg, sink);
    default:
      throw ArgumentError("run_noise: not a noise kind");
  }
}

FragileSplit fragile_split(std::span<const AttackRecord> noise_records,
                           const std::vector<std::string>& image_ids) {
  std::map<std::string, bool> flipped;
  for (const auto& r : noise_records) {
    if (!is_noise_kind(r.attack_kind)) continue;
    auto [it, _] = flipped.try_emplace(r.image_id, false);
    it->second |= r.success;
  }
  FragileSplit split;
  for (const auto& id : image_ids) {
    auto it = flipped.find(id);
    if (it == flipped.end()) {
      throw DataError("fragile_split: image '" + id + "' has no noise records");
    }
    (it->second ? split.fragile : split.hard).push_back(id);
  }
  return split;
}

}  // namespace advsource
