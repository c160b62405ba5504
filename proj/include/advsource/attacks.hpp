#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "advsource/models.hpp"
#include "advsource/tensor.hpp"

namespace advsource {

enum class AttackKind {
  kPgd,
  kCw,
  kMifgsm,
  kUniformSign,
  kGaussian,
  kContrast,
};

inline constexpr AttackKind kAdversarialKinds[] = {AttackKind::kPgd, AttackKind::kCw,
                                                   AttackKind::kMifgsm};
inline constexpr AttackKind kNoiseKinds[] = {AttackKind::kUniformSign, AttackKind::kGaussian,
                                             AttackKind::kContrast};

std::string to_string(AttackKind kind);
AttackKind attack_kind_from_string(const std::string& name);
bool is_noise_kind(AttackKind kind);

struct AttackConfig {
  AttackKind kind = AttackKind::kPgd;
  double epsilon = 38.0 / 255.0;
  int iterations = 50;
  double step_alpha = 2.5 * (38.0 / 255.0) / 50;  // 2.5 * epsilon / iterations
  double kappa = 20.0;            // CW confidence floor
  double mu = 1.0;                // MI-FGSM momentum multiplier
  double cw_penalty_weight = 1.0; // weight on the CW margin term
  int max_retries = 5;            // total target-class attempts per image
  std::uint64_t rng_seed = 0;

  static double default_step_alpha(double epsilon, int iterations) {
    return 2.5 * epsilon / iterations;
  }

  // epsilon must be a multiple of 1/255 in [0,1]; iterations and max_retries
  // must be >= 1.
  void validate() const;

  nlohmann::json to_json() const;
  static AttackConfig from_json(const nlohmann::json& j);
};

// One (source image, source model, target model, attack) outcome. For
// transfer records success is untargeted (the target model left the true
// class); targeted_hit additionally marks probes the target model classified
// into the attack's target class. White-box records (source == target) use
// the targeted criterion for success.
struct AttackRecord {
  std::string image_id;
  AttackKind attack_kind = AttackKind::kPgd;
  int source_model = -1;  // -1 for noise procedures
  int target_model = -1;
  bool success = false;
  bool targeted_hit = false;
  std::optional<double> l2;    // absent unless success
  std::optional<double> linf;
  int iteration_found = -1;    // CONTRAST stores the signed shift b here
  int target_class = -1;       // -1 for noise procedures
  int attempt_index = -1;      // 1-based; on failure, attempts actually made

  void validate(double epsilon) const;
};

// Observer for per-iteration probe evaluations; used by tests to verify
// minimality, trajectory, and discretization invariants. All callbacks are
// optional.
class ProbeSink {
 public:
  virtual ~ProbeSink() = default;
  // The continuous iterate after the update step (attacks) or the realized
  // noisy image (noise procedures).
  virtual void on_iterate(int attempt, int iteration, const ImageTensor& iterate) {}
  // The quantized probe that the ensemble members are evaluated on.
  virtual void on_quantized(int attempt, int iteration, const ImageTensor& probe) {}
  virtual void on_probe(int attempt, int iteration, int target_model, bool success,
                        bool targeted_hit, double l2, double linf) {}
};

// Elementwise clamp of x_hat into [x - epsilon, x + epsilon] intersected with
// [0,1].
ImageTensor project(const ImageTensor& x_hat, const ImageTensor& x, double epsilon);

// Rounds every pixel to the nearest k/255 and re-projects in integer grid
// space, so the result satisfies both the epsilon ball and [0,1] exactly.
// Requires x on the 8-bit grid and epsilon a multiple of 1/255.
ImageTensor quantize(const ImageTensor& x_hat, const ImageTensor& x, double epsilon);

// Targeted CW margin loss max(max_{k != target} g_k - g_target, -kappa).
double cw_margin_loss(const Eigen::VectorXd& logits, int target, double kappa);

// One MI-FGSM momentum step: mu * tau + grad / ||grad||_1. A zero gradient
// contributes nothing (no division).
Eigen::VectorXd mifgsm_momentum_update(const Eigen::VectorXd& tau, const Eigen::VectorXd& grad,
                                       double mu);

// The three attack runners share one policy: iterate the white-box update on
// the source model, quantize a probe copy each iteration, evaluate every
// ensemble member on the probe, and per (source, target) pair retain the
// successful probe with the smallest L2. If the source model never reaches
// the target class within cfg.iterations, a fresh target class is drawn (never
// repeating earlier draws or the true class) up to cfg.max_retries attempts.
// Returns one record per other ensemble member plus one white-box record.
std::vector<AttackRecord> pgd_run(const Ensemble& ensemble, int source_index,
                                  const ImageTensor& x, const AttackConfig& cfg,
                                  ProbeSink* sink = nullptr);
std::vector<AttackRecord> cw_run(const Ensemble& ensemble, int source_index,
                                 const ImageTensor& x, const AttackConfig& cfg,
                                 ProbeSink* sink = nullptr);
std::vector<AttackRecord> mifgsm_run(const Ensemble& ensemble, int source_index,
                                     const ImageTensor& x, const AttackConfig& cfg,
                                     ProbeSink* sink = nullptr);

// Dispatches on cfg.kind. Deterministic given (cfg.rng_seed, image_id,
// source_index): target-class draws come from a counter-based stream keyed on
// exactly those three values.
std::vector<AttackRecord> run_attack(const Ensemble& ensemble, int source_index,
                                     const ImageTensor& x, const AttackConfig& cfg,
                                     ProbeSink* sink = nullptr);

}  // namespace advsource
