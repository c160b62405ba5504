#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "advsource/error.hpp"
#include "advsource/experiments.hpp"
#include "advsource/rng.hpp"
#include "support/fixtures.hpp"

using namespace advsource;
using namespace advsource::testing;

namespace {

namespace fs = std::filesystem;

std::map<std::string, std::string> shard_bytes(const fs::path& store_dir) {
  std::map<std::string, std::string> bytes;
  for (const auto& entry : fs::directory_iterator(store_dir / "shards")) {
    std::ifstream is(entry.path(), std::ios::binary);
    bytes[entry.path().filename().string()] =
        std::string(std::istreambuf_iterator<char>(is), {});
  }
  return bytes;
}

AttackRecord synthetic_record(const std::string& image, AttackKind kind, int i, int j,
                              bool success, double l2 = 1.0) {
  AttackRecord r;
  r.image_id = image;
  r.attack_kind = kind;
  r.source_model = i;
  r.target_model = j;
  r.success = success;
  if (success) {
    r.l2 = l2;
    r.linf = l2 / 20.0;
  }
  return r;
}

}  // namespace

TEST_CASE("campaign produces one record per member for every run") {
  const TinyCampaign& fx = tiny_campaign();
  REQUIRE(fx.eligible_images > 10);

  const RecordStore store = RecordStore::open(fx.store_dir);
  const int n_models = static_cast<int>(store.manifest().model_ids.size());
  REQUIRE(n_models == 3);

  // 3 attacks x 3 source models x E images x 3 records, plus 3 noise kinds x
  // E images x 3 records.
  const auto records = store.load_all();
  const std::int64_t expected =
      static_cast<std::int64_t>(fx.eligible_images) * (3 * n_models * n_models + 3 * n_models);
  CHECK(static_cast<std::int64_t>(records.size()) == expected);

  for (const auto& shard : store.shard_names()) CHECK(store.shard_complete(shard));
}

TEST_CASE("rerunning a finished campaign is a no-op") {
  const TinyCampaign& fx = tiny_campaign();
  const auto before = shard_bytes(fx.store_dir);
  run_campaign(fx.plan, CampaignScope::kAll);
  CHECK(shard_bytes(fx.store_dir) == before);
}

TEST_CASE("two fresh runs produce byte-identical stores") {
  const TinyCampaign& fx = tiny_campaign();
  CampaignPlan plan = fx.plan;
  plan.store_dir = fx.dir / "store_repeat";
  fs::remove_all(plan.store_dir);
  run_campaign(plan, CampaignScope::kAll);
  CHECK(shard_bytes(plan.store_dir) == shard_bytes(fx.store_dir));
  CHECK(plan.plan_hash() == fx.plan.plan_hash());  // store location is not hashed
}

TEST_CASE("scoped runs compose to the full campaign") {
  const TinyCampaign& fx = tiny_campaign();
  CampaignPlan plan = fx.plan;
  plan.store_dir = fx.dir / "store_scoped";
  fs::remove_all(plan.store_dir);
  run_campaign(plan, CampaignScope::kAttacks);
  run_campaign(plan, CampaignScope::kNoise);
  CHECK(shard_bytes(plan.store_dir) == shard_bytes(fx.store_dir));
}

TEST_CASE("campaigns refuse ineligible manifests") {
  const TinyCampaign& fx = tiny_campaign();
  // Corrupt one label so the image cannot be eligible.
  auto entries = load_manifest(fx.dir / "manifest_eligible.jsonl");
  REQUIRE(!entries.empty());
  entries[0].true_class = (entries[0].true_class + 1) % 6;
  const fs::path bad_manifest = fx.dir / "manifest_bad.jsonl";
  save_manifest(bad_manifest, entries);

  CampaignPlan plan = fx.plan;
  plan.manifest = bad_manifest;
  plan.store_dir = fx.dir / "store_bad";
  CHECK_THROWS_AS(run_campaign(plan, CampaignScope::kAll), PreconditionError);
}

TEST_CASE("campaigns refuse to resume under a different plan") {
  const TinyCampaign& fx = tiny_campaign();
  CampaignPlan plan = fx.plan;
  plan.master_seed += 1;
  for (auto& [_, cfg] : plan.attacks) cfg.rng_seed = plan.master_seed;
  for (auto& [_, cfg] : plan.noise) cfg.rng_seed = plan.master_seed;
  CHECK_THROWS_AS(run_campaign(plan, CampaignScope::kAll), DataError);
}

TEST_CASE("histogram conserves the image count") {
  const TinyCampaign& fx = tiny_campaign();
  const RecordStore store = RecordStore::open(fx.store_dir);

  for (const auto attack : {std::optional<AttackKind>{}, std::optional{AttackKind::kPgd}}) {
    const Histogram hist = histogram_transfer_counts(store, attack, 7);
    REQUIRE(hist.counts.size() == 7);
    REQUIRE(hist.edges.size() == 8);
    CHECK(hist.edges.front() == 0.0);
    CHECK(hist.edges.back() == doctest::Approx(6.0));  // N(N-1) for N=3
    std::int64_t total = 0;
    for (const auto c : hist.counts) total += c;
    CHECK(total == fx.eligible_images);
  }
  CHECK_THROWS_AS(histogram_transfer_counts(store, AttackKind::kGaussian, 7), ArgumentError);
  CHECK_THROWS_AS(histogram_transfer_counts(store, std::nullopt, 0), ArgumentError);
}

TEST_CASE("histogram of an all-zero-transfer store is a single spike") {
  const auto dir = fs::temp_directory_path() / "advsource_zero_store";
  fs::remove_all(dir);
  RecordStore store = RecordStore::create(dir, "h", 1, {"m0", "m1"});
  for (int img = 0; img < 5; ++img) {
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) {
        store.append(synthetic_record("img" + std::to_string(img), AttackKind::kPgd, i, j, false));
      }
    }
  }
  store.flush();
  const Histogram hist = histogram_transfer_counts(RecordStore::open(dir), AttackKind::kPgd, 4);
  CHECK(hist.counts[0] == 5);
  for (size_t b = 1; b < hist.counts.size(); ++b) CHECK(hist.counts[b] == 0);
}

TEST_CASE("planted linear dependence is recovered as correlation -1") {
  // D_2 = 10 - T exactly, across images with varying transfer counts.
  std::vector<AttackRecord> records;
  std::vector<SuitabilityScore> scores;
  CounterRng rng(StreamKey(3));
  const std::vector<std::string> model_ids{"m0", "m1", "m2"};
  for (int img = 0; img < 12; ++img) {
    const std::string id = "img" + std::to_string(img);
    const int t_count = img % 6;  // 0..5 transfers out of 6 pairs
    int made = 0;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        if (i == j) continue;
        const bool success = made < t_count;
        records.push_back(synthetic_record(id, AttackKind::kPgd, i, j, success,
                                           10.0 - t_count + 0.0));
        made += success ? 1 : 0;
      }
    }
    for (const auto& model : model_ids) {
      SuitabilityScore s;
      s.image_id = id;
      s.model_id = model;
      s.q = rng.next_double();
      s.one_minus_max = rng.next_double();
      s.mse = rng.next_double();
      s.wd = rng.next_double();
      scores.push_back(s);
    }
  }
  const auto rows = correlation_study(records, scores, model_ids);
  bool found = false;
  for (const auto& row : rows) {
    if (row.attack == AttackKind::kPgd && row.estimate == "mean_T" && row.property == "D_2") {
      found = true;
      CHECK(row.r == doctest::Approx(-1.0).epsilon(1e-12));
      CHECK(row.pairs == 10);  // images with at least one success
    }
  }
  CHECK(found);
}

TEST_CASE("sampling degenerate cases collapse the spread") {
  const TinyCampaign& fx = tiny_campaign();
  const RecordStore store = RecordStore::open(fx.store_dir);
  const auto population = store.image_ids();
  const int pop = static_cast<int>(population.size());

  const SamplingReport full = sampling_study(store, pop, 5, 11);
  for (const auto& cell : full.cells) {
    CHECK(cell.transfer_low == cell.transfer_avg);
    CHECK(cell.transfer_avg == cell.transfer_high);
  }

  const SamplingReport single = sampling_study(store, pop / 2, 1, 11);
  for (const auto& cell : single.cells) {
    CHECK(cell.transfer_low == cell.transfer_high);
    if (cell.l2_low) CHECK(*cell.l2_low == *cell.l2_high);
  }

  const SamplingReport spread = sampling_study(store, pop / 2, 50, 11);
  for (const auto& cell : spread.cells) {
    CHECK(cell.transfer_low <= cell.transfer_avg + 1e-12);
    CHECK(cell.transfer_avg <= cell.transfer_high + 1e-12);
    if (cell.l2_low) {
      CHECK(*cell.l2_low <= *cell.l2_avg + 1e-12);
      CHECK(*cell.l2_avg <= *cell.l2_high + 1e-12);
    }
  }

  CHECK_THROWS_AS(sampling_study(store, pop + 1, 5, 11), ArgumentError);
  CHECK_THROWS_AS(sampling_study(store, 5, 5, 11, {"no_such_image"}), ArgumentError);
}

TEST_CASE("sampling is deterministic in the seed") {
  const TinyCampaign& fx = tiny_campaign();
  const RecordStore store = RecordStore::open(fx.store_dir);
  const int n = static_cast<int>(store.image_ids().size()) / 2;
  const SamplingReport a = sampling_study(store, n, 20, 123);
  const SamplingReport b = sampling_study(store, n, 20, 123);
  REQUIRE(a.cells.size() == b.cells.size());
  for (size_t c = 0; c < a.cells.size(); ++c) {
    CHECK(a.cells[c].transfer_avg == b.cells[c].transfer_avg);
    CHECK(a.cells[c].transfer_low == b.cells[c].transfer_low);
    CHECK(a.cells[c].transfer_high == b.cells[c].transfer_high);
  }
}

TEST_CASE("split report reproduces the weighted-average identity") {
  const TinyCampaign& fx = tiny_campaign();
  const RecordStore store = RecordStore::open(fx.store_dir);
  const SplitReport report = split_report(store);

  const double n_all = static_cast<double>(report.image_ids.size());
  const double n_f = static_cast<double>(report.fragile_ids.size());
  const double n_h = static_cast<double>(report.hard_ids.size());
  REQUIRE(n_all == n_f + n_h);
  REQUIRE(n_f > 0);

  for (const auto& [kind, all] : report.all) {
    const TransferMatrix& mf = report.fragile.at(kind);
    const TransferMatrix& mh = report.hard.at(kind);
    for (size_t c = 0; c < all.cells.size(); ++c) {
      const double fragile_part = n_f > 0 ? *mf.cells[c] * n_f : 0.0;
      const double hard_part = n_h > 0 ? *mh.cells[c] * n_h : 0.0;
      CHECK(*all.cells[c] * n_all ==
            doctest::Approx(fragile_part + hard_part).epsilon(1e-12));
    }
  }
}

TEST_CASE("an all-fragile split reports the hard matrix as all-null") {
  std::vector<AttackRecord> records{synthetic_record("a", AttackKind::kPgd, 0, 1, true),
                                    synthetic_record("a", AttackKind::kPgd, 1, 0, false)};
  FragileSplit split;
  split.fragile = {"a"};
  const SplitReport report = split_report(records, split, 2);
  for (const auto& cell : report.hard.at(AttackKind::kPgd).cells) {
    CHECK_FALSE(cell.has_value());
  }
  for (const auto& cell : report.fragile.at(AttackKind::kPgd).cells) {
    CHECK(cell.has_value());
  }
}

TEST_CASE("split report rejects non-partitions") {
  std::vector<AttackRecord> records{synthetic_record("a", AttackKind::kPgd, 0, 1, true),
                                    synthetic_record("b", AttackKind::kPgd, 0, 1, true)};
  FragileSplit overlap;
  overlap.fragile = {"a", "b"};
  overlap.hard = {"b"};
  CHECK_THROWS_AS(split_report(records, overlap, 2), ArgumentError);

  FragileSplit incomplete;
  incomplete.fragile = {"a"};
  CHECK_THROWS_AS(split_report(records, incomplete, 2), ArgumentError);
}

TEST_CASE("plans parse strictly and hash their content") {
  const TinyCampaign& fx = tiny_campaign();
  nlohmann::json j = tiny_plan_json();
  j["mystery"] = true;
  const fs::path bad = fx.dir / "plan_bad.json";
  std::ofstream(bad) << j.dump();
  CHECK_THROWS_AS(CampaignPlan::from_file(bad), DataError);

  // A seed override flows into the per-kind configurations and the hash.
  const CampaignPlan reseeded = CampaignPlan::from_file(fx.plan_path, 77);
  CHECK(reseeded.master_seed == 77);
  CHECK(reseeded.attacks.at(AttackKind::kPgd).rng_seed == 77);
  CHECK(reseeded.noise.at(AttackKind::kGaussian).rng_seed == 77);
  CHECK(reseeded.plan_hash() != fx.plan.plan_hash());
}
