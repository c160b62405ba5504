#include "advsource/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "advsource/dataset.hpp"
#include "advsource/error.hpp"
#include "advsource/rng.hpp"

namespace advsource {

CampaignPlan CampaignPlan::from_file(const std::filesystem::path& path,
                                     std::optional<std::uint64_t> seed_override) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open plan: " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("plan parse error in " + path.string() + ": " + e.what());
  }
  static const std::set<std::string> known = {"models", "manifest", "store", "seed",
                                              "attacks", "noise",    "jobs"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw DataError("plan: unknown field '" + key + "'");
  }
  CampaignPlan plan;
  const auto base = path.parent_path();
  const auto resolve = [&](const std::string& p) {
    std::filesystem::path fp = p;
    return fp.is_relative() ? base / fp : fp;
  };
  try {
    plan.models_config = resolve(j.at("models").get<std::string>());
    plan.manifest = resolve(j.at("manifest").get<std::string>());
    if (j.contains("store")) plan.store_dir = resolve(j.at("store").get<std::string>());
    plan.master_seed = j.value("seed", std::uint64_t{0});
    if (seed_override) plan.master_seed = *seed_override;
    plan.jobs = j.value("jobs", 0);
    if (j.contains("attacks")) {
      for (const auto& [name, cfg_json] : j.at("attacks").items()) {
        nlohmann::json merged = cfg_json;
        merged["kind"] = name;
        AttackConfig cfg = AttackConfig::from_json(merged);
        if (!cfg_json.contains("rng_seed")) cfg.rng_seed = plan.master_seed;
        plan.attacks[cfg.kind] = cfg;
      }
    }
    if (j.contains("noise")) {
      for (const auto& [name, cfg_json] : j.at("noise").items()) {
        nlohmann::json merged = cfg_json;
        merged["kind"] = name;
        NoiseConfig cfg = NoiseConfig::from_json(merged);
        if (!cfg_json.contains("rng_seed")) cfg.rng_seed = plan.master_seed;
        plan.noise[cfg.kind] = cfg;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("plan " + path.string() + ": " + e.what());
  }
  plan.validate();
  return plan;
}

void CampaignPlan::validate() const {
  if (models_config.empty()) throw ArgumentError("plan: missing models config path");
  if (manifest.empty()) throw ArgumentError("plan: missing manifest path");
  if (attacks.empty() && noise.empty()) {
    throw ArgumentError("plan: no attack or noise configurations");
  }
  for (const auto& [kind, cfg] : attacks) {
    if (kind != cfg.kind) throw ArgumentError("plan: attack config kind mismatch");
    cfg.validate();
  }
  for (const auto& [kind, cfg] : noise) {
    if (kind != cfg.kind) throw ArgumentError("plan: noise config kind mismatch");
    if (!is_noise_kind(kind)) throw ArgumentError("plan: non-noise kind in noise section");
    cfg.validate();
  }
  if (jobs < 0) throw ArgumentError("plan: jobs must be nonnegative");
}

nlohmann::json CampaignPlan::to_json() const {
  nlohmann::json attacks_json = nlohmann::json::object();
  for (const auto& [kind, cfg] : attacks) attacks_json[to_string(kind)] = cfg.to_json();
  nlohmann::json noise_json = nlohmann::json::object();
  for (const auto& [kind, cfg] : noise) noise_json[to_string(kind)] = cfg.to_json();
  return nlohmann::json{
      {"models", models_config.string()}, {"manifest", manifest.string()},
      {"store", store_dir.string()},      {"seed", master_seed},
      {"attacks", attacks_json},          {"noise", noise_json},
      {"jobs", jobs},
  };
}

std::string CampaignPlan::plan_hash() const {
  // The hash covers everything that affects record content. Where the store
  // lives and how many workers run it do not.
  nlohmann::json j = to_json();
  j.erase("store");
  j.erase("jobs");
  return plan_hash_of(j);
}

namespace {

struct ShardTask {
  AttackKind kind;
  int source_model;  // -1 for noise
};

}  // namespace

RecordStore run_campaign(const CampaignPlan& plan, CampaignScope scope) {
  plan.validate();
  if (plan.store_dir.empty()) throw ArgumentError("run_campaign: plan has no store path");
  const Ensemble ensemble = load_ensemble(plan.models_config);
  const std::vector<ImageTensor> images = load_images(plan.manifest);
  if (images.empty()) throw DataError("run_campaign: empty manifest");
  for (const auto& img : images) {
    if (!is_eligible(ensemble, img)) {
      throw PreconditionError("run_campaign: manifest image '" + img.image_id +
                              "' is not eligible; run filter-eligible first");
    }
  }

  const std::string hash = plan.plan_hash();
  RecordStore store =
      RecordStore::exists(plan.store_dir)
          ? RecordStore::open(plan.store_dir, /*writable=*/true)
          : RecordStore::create(plan.store_dir, hash, plan.master_seed, ensemble.model_ids());
  if (store.manifest().plan_hash != hash) {
    throw DataError("run_campaign: store at " + plan.store_dir.string() +
                    " was created by a different plan (hash " + store.manifest().plan_hash +
                    " vs " + hash + ")");
  }

  std::vector<ShardTask> tasks;
  if (scope != CampaignScope::kNoise) {
    for (const auto& [kind, _] : plan.attacks) {
      for (int i = 0; i < ensemble.size(); ++i) tasks.push_back({kind, i});
    }
  }
  if (scope != CampaignScope::kAttacks) {
    for (const auto& [kind, _] : plan.noise) tasks.push_back({kind, -1});
  }

  std::mutex store_mutex;
  std::atomic<size_t> next_task{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;

  const auto worker = [&]() {
    for (;;) {
      const size_t t = next_task.fetch_add(1);
      if (t >= tasks.size()) return;
      {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (first_error) return;
      }
      try {
        const ShardTask& task = tasks[t];
        const std::string shard = shard_name_for(task.kind, task.source_model);
        std::set<std::string> done;
        {
          std::lock_guard<std::mutex> lock(store_mutex);
          if (store.shard_complete(shard)) continue;
          done = store.images_done(shard);
        }
        for (const auto& img : images) {
          if (done.count(img.image_id)) continue;
          std::vector<AttackRecord> records;
          if (task.source_model >= 0) {
            records = run_attack(ensemble, task.source_model, img, plan.attacks.at(task.kind));
          } else {
            records = run_noise(ensemble, img, plan.noise.at(task.kind));
          }
          std::lock_guard<std::mutex> lock(store_mutex);
          for (const auto& r : records) store.append(r);
          store.flush();  // keep the recoverable tail at a group boundary
        }
        std::lock_guard<std::mutex> lock(store_mutex);
        store.mark_shard_complete(shard);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  int jobs = plan.jobs;
  if (jobs <= 0) {
    jobs = static_cast<int>(std::min<size_t>(std::thread::hardware_concurrency(), tasks.size()));
    jobs = std::max(jobs, 1);
  }
  if (!ensemble.all_reentrant()) jobs = 1;  // honor the backend capability flag

  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < jobs; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  return RecordStore::open(plan.store_dir);
}

namespace {

std::map<std::string, std::vector<AttackRecord>> group_by_image(
    std::span<const AttackRecord> records, bool adversarial_only) {
  std::map<std::string, std::vector<AttackRecord>> by_image;
  for (const auto& r : records) {
    if (adversarial_only && is_noise_kind(r.attack_kind)) continue;
    by_image[r.image_id].push_back(r);
  }
  return by_image;
}

}  // namespace

Histogram histogram_transfer_counts(const RecordStore& store, std::optional<AttackKind> attack,
                                    int bins) {
  if (bins < 1) throw ArgumentError("histogram: bins must be >= 1");
  if (attack && is_noise_kind(*attack)) {
    throw ArgumentError("histogram: transferability is defined for adversarial attacks");
  }
  const int n_models = static_cast<int>(store.manifest().model_ids.size());
  const double t_max = static_cast<double>(n_models) * (n_models - 1);

  const auto records = store.load_all();
  const auto by_image = group_by_image(records, /*adversarial_only=*/true);

  Histogram hist;
  hist.edges.resize(static_cast<size_t>(bins) + 1);
  for (int b = 0; b <= bins; ++b) {
    hist.edges[b] = t_max * static_cast<double>(b) / bins;
  }
  hist.counts.assign(bins, 0);

  for (const auto& [_, recs] : by_image) {
    const TransferSummary summary = summarize_image(recs, n_models);
    double value = 0.0;
    if (attack) {
      auto it = summary.transfer_counts.find(*attack);
      if (it == summary.transfer_counts.end()) continue;
      value = static_cast<double>(it->second);
    } else {
      value = summary.mean_transfer_count();
    }
    int bin = static_cast<int>(std::floor(value / t_max * bins));
    bin = std::clamp(bin, 0, bins - 1);  // right edge inclusive
    ++hist.counts[bin];
  }
  return hist;
}

std::vector<CorrelationRow> correlation_study(std::span<const AttackRecord> records,
                                              std::span<const SuitabilityScore> scores,
                                              const std::vector<std::string>& model_ids) {
  const int n_models = static_cast<int>(model_ids.size());
  const auto by_image = group_by_image(records, /*adversarial_only=*/true);

  // (image, model) -> score; image -> mean over members.
  std::map<std::pair<std::string, std::string>, const SuitabilityScore*> by_pair;
  std::map<std::string, std::array<std::pair<double, int>, 4>> mean_acc;
  for (const auto& s : scores) {
    by_pair[{s.image_id, s.model_id}] = &s;
    auto& acc = mean_acc[s.image_id];
    const double vals[4] = {s.q, s.one_minus_max, s.mse, s.wd};
    for (int e = 0; e < 4; ++e) {
      acc[e].first += vals[e];
      acc[e].second += 1;
    }
  }
  static const char* kEstimates[4] = {"q", "one_minus_max", "mse", "wd"};
  const auto estimate_of = [](const SuitabilityScore& s, int e) {
    switch (e) {
      case 0: return s.q;
      case 1: return s.one_minus_max;
      case 2: return s.mse;
      default: return s.wd;
    }
  };

  std::map<AttackKind, std::map<std::string, TransferSummary>> summaries;
  for (const auto& [image, recs] : by_image) {
    const TransferSummary summary = summarize_image(recs, n_models);
    for (const auto& [kind, _] : summary.transfer_counts) {
      summaries[kind][image] = summary;
    }
  }

  std::vector<CorrelationRow> rows;
  for (const auto& [kind, per_image] : summaries) {
    for (int e = 0; e < 4; ++e) {
      // Estimate vs T: per image, member-mean estimate.
      std::vector<double> xs, ys;
      for (const auto& [image, summary] : per_image) {
        auto it = mean_acc.find(image);
        if (it == mean_acc.end()) continue;
        xs.push_back(it->second[e].first / it->second[e].second);
        ys.push_back(static_cast<double>(summary.transfer_counts.at(kind)));
      }
      rows.push_back({kind, kEstimates[e], "T", pearson(xs, ys),
                      static_cast<std::int64_t>(xs.size())});

      // Estimate vs d_p: per (image, target) pair, the target model's estimate.
      for (const Norm p : {Norm::kL2, Norm::kLinf}) {
        std::vector<double> dxs, dys;
        for (const auto& [image, summary] : per_image) {
          const auto& d = (p == Norm::kL2) ? summary.d_l2.at(kind) : summary.d_linf.at(kind);
          for (int j = 0; j < n_models; ++j) {
            if (!d[j]) continue;
            auto it = by_pair.find({image, model_ids[j]});
            if (it == by_pair.end()) continue;
            dxs.push_back(estimate_of(*it->second, e));
            dys.push_back(*d[j]);
          }
        }
        rows.push_back({kind, kEstimates[e], p == Norm::kL2 ? "d_2" : "d_inf",
                        pearson(dxs, dys), static_cast<std::int64_t>(dxs.size())});
      }
    }
    // Mean transferability vs overall minimal perturbation (per attack).
    for (const Norm p : {Norm::kL2, Norm::kLinf}) {
      std::vector<double> xs, ys;
      for (const auto& [image, summary] : per_image) {
        const auto& overall =
            (p == Norm::kL2) ? summary.overall_l2.at(kind) : summary.overall_linf.at(kind);
        if (!overall) continue;
        xs.push_back(summary.mean_transfer_count());
        ys.push_back(*overall);
      }
      rows.push_back({kind, "mean_T", p == Norm::kL2 ? "D_2" : "D_inf", pearson(xs, ys),
                      static_cast<std::int64_t>(xs.size())});
    }
  }
  return rows;
}

std::vector<CorrelationRow> correlation_study(const RecordStore& store,
                                              std::span<const SuitabilityScore> scores) {
  const auto records = store.load_all();
  return correlation_study(records, scores, store.manifest().model_ids);
}

SamplingReport sampling_study(std::span<const AttackRecord> records, int num_models,
                              int sample_size, int repetitions, std::uint64_t seed,
                              const std::vector<std::string>& subset) {
  if (sample_size < 1) throw ArgumentError("sampling_study: sample size must be >= 1");
  if (repetitions < 1) throw ArgumentError("sampling_study: repetitions must be >= 1");

  std::set<std::string> stored;
  std::set<AttackKind> kinds;
  for (const auto& r : records) {
    if (is_noise_kind(r.attack_kind)) continue;
    stored.insert(r.image_id);
    kinds.insert(r.attack_kind);
  }

  std::vector<std::string> population;
  if (subset.empty()) {
    population.assign(stored.begin(), stored.end());
  } else {
    std::set<std::string> seen;
    for (const auto& id : subset) {
      if (!stored.count(id)) {
        throw ArgumentError("sampling_study: subset image '" + id + "' not in the records");
      }
      if (!seen.insert(id).second) {
        throw ArgumentError("sampling_study: duplicate subset image '" + id + "'");
      }
      population.push_back(id);
    }
  }
  const int pop = static_cast<int>(population.size());
  if (pop < sample_size) {
    throw ArgumentError("sampling_study: population " + std::to_string(pop) +
                        " smaller than sample size " + std::to_string(sample_size));
  }

  std::map<std::string, int> index_of;
  for (int i = 0; i < pop; ++i) index_of[population[i]] = i;

  // Per (attack, source, target): success flag and norms per population image.
  struct PairData {
    std::vector<std::uint8_t> success;
    std::vector<double> l2, linf;
  };
  std::map<std::tuple<AttackKind, int, int>, PairData> pairs;
  for (const AttackKind kind : kinds) {
    for (int i = 0; i < num_models; ++i) {
      for (int j = 0; j < num_models; ++j) {
        if (i == j) continue;
        auto& pd = pairs[{kind, i, j}];
        pd.success.assign(pop, 0);
        pd.l2.assign(pop, 0.0);
        pd.linf.assign(pop, 0.0);
      }
    }
  }
  for (const auto& r : records) {
    if (is_noise_kind(r.attack_kind) || r.source_model == r.target_model || !r.success) continue;
    auto it = index_of.find(r.image_id);
    if (it == index_of.end()) continue;
    auto& pd = pairs.at({r.attack_kind, r.source_model, r.target_model});
    pd.success[it->second] = 1;
    pd.l2[it->second] = *r.l2;
    pd.linf[it->second] = *r.linf;
  }

  struct CellAcc {
    double t_low = 1.0, t_high = 0.0, t_sum = 0.0;
    double l2_low = 0.0, l2_high = 0.0, l2_sum = 0.0;
    double linf_low = 0.0, linf_high = 0.0, linf_sum = 0.0;
    std::int64_t norm_reps = 0;  // repetitions with at least one success
  };
  std::map<std::tuple<AttackKind, int, int>, CellAcc> acc;
  for (const auto& [key, _] : pairs) acc[key] = CellAcc{};

  std::vector<int> indices(pop);
  for (int rep = 0; rep < repetitions; ++rep) {
    CounterRng rng(StreamKey(seed).with("sampling").with(rep));
    for (int i = 0; i < pop; ++i) indices[i] = i;
    // Partial Fisher-Yates: the first sample_size entries form the sample.
    for (int i = 0; i < sample_size; ++i) {
      const int j = i + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(pop - i)));
      std::swap(indices[i], indices[j]);
    }
    for (auto& [key, pd] : pairs) {
      int successes = 0;
      double sum_l2 = 0.0, sum_linf = 0.0;
      for (int i = 0; i < sample_size; ++i) {
        const int img = indices[i];
        if (pd.success[img]) {
          ++successes;
          sum_l2 += pd.l2[img];
          sum_linf += pd.linf[img];
        }
      }
      CellAcc& a = acc.at(key);
      const double proportion = static_cast<double>(successes) / sample_size;
      a.t_low = std::min(a.t_low, proportion);
      a.t_high = std::max(a.t_high, proportion);
      a.t_sum += proportion;
      if (successes > 0) {
        const double mean_l2 = sum_l2 / successes;
        const double mean_linf = sum_linf / successes;
        if (a.norm_reps == 0) {
          a.l2_low = a.l2_high = mean_l2;
          a.linf_low = a.linf_high = mean_linf;
        } else {
          a.l2_low = std::min(a.l2_low, mean_l2);
          a.l2_high = std::max(a.l2_high, mean_l2);
          a.linf_low = std::min(a.linf_low, mean_linf);
          a.linf_high = std::max(a.linf_high, mean_linf);
        }
        a.l2_sum += mean_l2;
        a.linf_sum += mean_linf;
        ++a.norm_reps;
      }
    }
  }

  SamplingReport report;
  report.sample_size = sample_size;
  report.repetitions = repetitions;
  for (const auto& [key, a] : acc) {
    const auto& [kind, i, j] = key;
    SamplingCell cell;
    cell.attack = kind;
    cell.source_model = i;
    cell.target_model = j;
    cell.transfer_low = a.t_low;
    cell.transfer_high = a.t_high;
    cell.transfer_avg = a.t_sum / repetitions;
    if (a.norm_reps > 0) {
      cell.l2_low = a.l2_low;
      cell.l2_high = a.l2_high;
      cell.l2_avg = a.l2_sum / a.norm_reps;
      cell.linf_low = a.linf_low;
      cell.linf_high = a.linf_high;
      cell.linf_avg = a.linf_sum / a.norm_reps;
    }
    report.cells.push_back(cell);
  }
  return report;
}

SamplingReport sampling_study(const RecordStore& store, int sample_size, int repetitions,
                              std::uint64_t seed, const std::vector<std::string>& subset) {
  const auto records = store.load_all();
  return sampling_study(records, static_cast<int>(store.manifest().model_ids.size()), sample_size,
                        repetitions, seed, subset);
}

SplitReport split_report(std::span<const AttackRecord> records, const FragileSplit& split,
                         int num_models) {
  std::set<std::string> record_images;
  std::set<AttackKind> kinds;
  for (const auto& r : records) {
    if (is_noise_kind(r.attack_kind)) continue;
    record_images.insert(r.image_id);
    kinds.insert(r.attack_kind);
  }
  std::set<std::string> split_images;
  for (const auto& id : split.fragile) {
    if (!split_images.insert(id).second) {
      throw ArgumentError("split_report: duplicate image '" + id + "' in split");
    }
  }
  for (const auto& id : split.hard) {
    if (!split_images.insert(id).second) {
      throw ArgumentError("split_report: image '" + id + "' appears in both sets");
    }
  }
  if (split_images != record_images) {
    throw ArgumentError("split_report: split is not a partition of the recorded image set");
  }

  SplitReport report;
  report.fragile_ids = split.fragile;
  report.hard_ids = split.hard;
  report.image_ids = split.fragile;
  report.image_ids.insert(report.image_ids.end(), split.hard.begin(), split.hard.end());

  std::map<AttackKind, std::vector<AttackRecord>> by_kind;
  for (const auto& r : records) {
    if (!is_noise_kind(r.attack_kind)) by_kind[r.attack_kind].push_back(r);
  }
  for (const auto& [kind, recs] : by_kind) {
    report.all[kind] = transfer_matrix(recs, report.image_ids, num_models, MatrixMode::kUntargeted);
    report.fragile[kind] =
        transfer_matrix(recs, report.fragile_ids, num_models, MatrixMode::kUntargeted);
    report.hard[kind] = transfer_matrix(recs, report.hard_ids, num_models, MatrixMode::kUntargeted);
  }
  return report;
}

SplitReport split_report(const RecordStore& store) {
  const auto records = store.load_all();
  std::vector<AttackRecord> noise_records;
  std::set<std::string> noise_images;
  for (const auto& r : records) {
    if (is_noise_kind(r.attack_kind)) {
      noise_records.push_back(r);
      noise_images.insert(r.image_id);
    }
  }
  if (noise_records.empty()) {
    throw DataError("split_report: store has no noise records; run the noise campaign first");
  }
  const std::vector<std::string> ids(noise_images.begin(), noise_images.end());
  const FragileSplit split = fragile_split(noise_records, ids);
  return split_report(records, split, static_cast<int>(store.manifest().model_ids.size()));
}

}  // namespace advsource
