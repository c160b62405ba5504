#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "advsource/attacks.hpp"
#include "advsource/models.hpp"

namespace advsource {

// Non-adversarial perturbation procedures. All arithmetic happens in 1/255
// pixel units so the emitted probes land on the 8-bit grid bit-exactly and
// share the attacks' L-inf budget.
struct NoiseConfig {
  AttackKind kind = AttackKind::kUniformSign;
  int epsilon_255 = 38;
  int iterations = 50;   // uniform-sign walk length per try
  int restarts = 5;      // total tries (11 for Gaussian by default)
  double sigma_255 = 10.0;
  std::uint64_t rng_seed = 0;

  static NoiseConfig defaults_for(AttackKind kind);

  void validate() const;
  nlohmann::json to_json() const;
  static NoiseConfig from_json(const nlohmann::json& j);
};

// Iterative +-1/255 per-pixel random walk, projected each step; probes every
// ensemble member after every step. Restarts with fresh noise on failure.
std::vector<AttackRecord> uniform_sign_noise(const Ensemble& ensemble, const ImageTensor& x,
                                             const NoiseConfig& cfg, ProbeSink* sink = nullptr);

// One Gaussian field per try, N(0, sigma_255^2) in 1/255 units, projected and
// snapped to the grid.
std::vector<AttackRecord> gaussian_noise(const Ensemble& ensemble, const ImageTensor& x,
                                         const NoiseConfig& cfg, ProbeSink* sink = nullptr);

// Evaluates every uniform shift b in [-eps_255, eps_255] \ {0}; per target
// model records the successful shift with the smallest |b| (deterministic, no
// RNG). The record's iteration_found carries the signed b.
std::vector<AttackRecord> contrast_sweep(const Ensemble& ensemble, const ImageTensor& x,
                                         const NoiseConfig& cfg, ProbeSink* sink = nullptr);

std::vector<AttackRecord> run_noise(const Ensemble& ensemble, const ImageTensor& x,
                                    const NoiseConfig& cfg, ProbeSink* sink = nullptr);

struct FragileSplit {
  std::vector<std::string> fragile;  // flipped by noise for >= 1 model
  std::vector<std::string> hard;     // never flipped
};

// Partitions image_ids by whether any noise record succeeded. Every image must
// be covered by at least one record or a DataError is raised. Invariant to
// record order; output preserves image_ids order.
FragileSplit fragile_split(std::span<const AttackRecord> noise_records,
                           const std::vector<std::string>& image_ids);

}  // namespace advsource
