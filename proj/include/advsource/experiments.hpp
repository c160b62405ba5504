#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advsource/attacks.hpp"
#include "advsource/metrics.hpp"
#include "advsource/noise.hpp"
#include "advsource/store.hpp"
#include "advsource/suitability.hpp"

namespace advsource {

// A full campaign: which models, which images, which attack and noise
// configurations, where records go. The plan hash covers every field that
// affects outputs.
struct CampaignPlan {
  std::filesystem::path models_config;
  std::filesystem::path manifest;
  std::filesystem::path store_dir;
  std::uint64_t master_seed = 0;
  std::map<AttackKind, AttackConfig> attacks;  // adversarial kinds only
  std::map<AttackKind, NoiseConfig> noise;     // noise kinds only
  int jobs = 0;                                // shard parallelism; 0 = auto

  // seed_override replaces the plan's master seed before it is distributed to
  // the per-kind configurations (explicit per-config seeds still win).
  static CampaignPlan from_file(const std::filesystem::path& path,
                                std::optional<std::uint64_t> seed_override = std::nullopt);
  nlohmann::json to_json() const;  // canonical; paths as written in the file
  std::string plan_hash() const;
  void validate() const;
};

enum class CampaignScope { kAttacks, kNoise, kAll };

// Runs every (eligible image x source model x attack kind) and/or every
// (eligible image x noise kind), appending records with provenance. Resumable:
// shards marked complete are skipped, and within a shard, images already fully
// recorded are skipped. Record content is a pure function of (plan, seed);
// scheduling cannot change it.
RecordStore run_campaign(const CampaignPlan& plan, CampaignScope scope = CampaignScope::kAll);

struct Histogram {
  std::vector<double> edges;        // bins + 1 edges over [0, N(N-1)]
  std::vector<std::int64_t> counts;
};

// Histogram of per-image transferability count T for one attack, or of the
// mean over adversarial attacks when attack is absent.
Histogram histogram_transfer_counts(const RecordStore& store, std::optional<AttackKind> attack,
                                    int bins);

struct CorrelationRow {
  AttackKind attack;
  std::string estimate;  // "q", "one_minus_max", "mse", "wd", "mean_T"
  std::string property;  // "T", "d_2", "d_inf", "D_2", "D_inf"
  double r = 0.0;
  std::int64_t pairs = 0;
};

// Pearson correlations between prediction-error estimates and adversarial
// properties: per attack, estimate vs T (per image, estimates averaged over
// members) and estimate vs d_p (per image-target pair, the target model's own
// estimate), plus mean-T vs D_p rows. Pairs with absent d_p/D_p are dropped.
std::vector<CorrelationRow> correlation_study(std::span<const AttackRecord> records,
                                              std::span<const SuitabilityScore> scores,
                                              const std::vector<std::string>& model_ids);
std::vector<CorrelationRow> correlation_study(const RecordStore& store,
                                              std::span<const SuitabilityScore> scores);

// Low/average/high statistics over repeated random samples of source images.
struct SamplingCell {
  int source_model = -1;
  int target_model = -1;
  AttackKind attack = AttackKind::kPgd;
  double transfer_low = 0.0, transfer_avg = 0.0, transfer_high = 0.0;
  // Mean norms of successful records within a sample; absent when no sample
  // had a success for this pair.
  std::optional<double> l2_low, l2_avg, l2_high;
  std::optional<double> linf_low, linf_avg, linf_high;
};

struct SamplingReport {
  int sample_size = 0;
  int repetitions = 0;
  std::vector<SamplingCell> cells;  // ordered by (attack, source, target)
};

// Draws `repetitions` samples of `sample_size` images without replacement
// (counter-based RNG keyed on the repetition index) and reports the spread of
// per-pair transferability proportions and mean perturbation norms. `subset`
// restricts the image population (empty = every image in the records).
SamplingReport sampling_study(std::span<const AttackRecord> records, int num_models,
                              int sample_size, int repetitions, std::uint64_t seed,
                              const std::vector<std::string>& subset = {});
SamplingReport sampling_study(const RecordStore& store, int sample_size, int repetitions,
                              std::uint64_t seed, const std::vector<std::string>& subset = {});

// Transfer matrices over the full set and the fragile/hard partition.
struct SplitReport {
  std::vector<std::string> image_ids, fragile_ids, hard_ids;
  std::map<AttackKind, TransferMatrix> all, fragile, hard;
};

SplitReport split_report(std::span<const AttackRecord> records, const FragileSplit& split,
                         int num_models);
SplitReport split_report(const RecordStore& store);

}  // namespace advsource
