#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "advsource/error.hpp"
#include "advsource/store.hpp"

using namespace advsource;

namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("advsource_store_" + name);
  fs::remove_all(dir);
  return dir;
}

AttackRecord sample_record(const std::string& image, int source, int target, bool success) {
  AttackRecord r;
  r.image_id = image;
  r.attack_kind = AttackKind::kPgd;
  r.source_model = source;
  r.target_model = target;
  r.success = success;
  if (success) {
    r.l2 = 1.25;
    r.linf = 38.0 / 255.0;
  }
  r.iteration_found = success ? 3 : -1;
  r.target_class = 4;
  r.attempt_index = 1;
  return r;
}

}  // namespace

TEST_CASE("records round trip through json exactly") {
  const AttackRecord r = sample_record("img_1", 0, 2, true);
  const nlohmann::json j = record_to_json(r, "cafe");
  CHECK(j.at("plan_hash") == "cafe");
  CHECK(j.at("schema_version") == kRecordSchemaVersion);
  const AttackRecord back = record_from_json(j);
  CHECK(back.image_id == r.image_id);
  CHECK(back.attack_kind == r.attack_kind);
  CHECK(back.source_model == r.source_model);
  CHECK(back.target_model == r.target_model);
  CHECK(back.success == r.success);
  CHECK(back.l2 == r.l2);
  CHECK(back.linf == r.linf);
  CHECK(back.iteration_found == r.iteration_found);
  CHECK(back.target_class == r.target_class);
  CHECK(back.attempt_index == r.attempt_index);

  const AttackRecord failed = sample_record("img_2", 1, 0, false);
  const AttackRecord failed_back = record_from_json(record_to_json(failed, "cafe"));
  CHECK_FALSE(failed_back.l2.has_value());
  CHECK_FALSE(failed_back.linf.has_value());
}

TEST_CASE("record parsing is strict") {
  nlohmann::json j = record_to_json(sample_record("img", 0, 1, true), "h");
  j["unexpected"] = 1;
  CHECK_THROWS_AS(record_from_json(j), DataError);

  nlohmann::json wrong_version = record_to_json(sample_record("img", 0, 1, true), "h");
  wrong_version["schema_version"] = 99;
  CHECK_THROWS_AS(record_from_json(wrong_version), DataError);

  nlohmann::json missing = record_to_json(sample_record("img", 0, 1, true), "h");
  missing.erase("l2");
  CHECK_THROWS_AS(record_from_json(missing), DataError);
}

TEST_CASE("append, read back, and duplicate rejection") {
  const auto dir = fresh_dir("append");
  RecordStore store = RecordStore::create(dir, "hash1", 7, {"m0", "m1", "m2"});
  store.append(sample_record("img_0", 0, 0, false));
  store.append(sample_record("img_0", 0, 1, true));
  store.append(sample_record("img_0", 0, 2, true));
  store.flush();

  CHECK_THROWS_AS(store.append(sample_record("img_0", 0, 1, false)), DataError);

  const auto records = store.load_shard(shard_name_for(AttackKind::kPgd, 0));
  REQUIRE(records.size() == 3);
  CHECK(records[1].image_id == "img_0");
  CHECK(records[1].success);

  // The duplicate is still rejected by a reopened store.
  store.mark_shard_complete(shard_name_for(AttackKind::kPgd, 0));
  RecordStore reopened = RecordStore::open(dir, /*writable=*/true);
  CHECK(reopened.shard_complete(shard_name_for(AttackKind::kPgd, 0)));
  CHECK_THROWS_AS(reopened.append(sample_record("img_0", 0, 1, false)), DataError);
}

TEST_CASE("many appends all come back") {
  const auto dir = fresh_dir("bulk");
  RecordStore store = RecordStore::create(dir, "hash2", 1, {"m0", "m1"});
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    store.append(sample_record("img_" + std::to_string(i / 2), 0, i % 2, i % 3 == 0));
  }
  store.flush();
  CHECK(store.record_count() == n);
  CHECK(store.load_all().size() == static_cast<size_t>(n));
}

TEST_CASE("interrupted shards recover to the last complete group") {
  const auto dir = fresh_dir("recovery");
  const std::string shard = shard_name_for(AttackKind::kPgd, 0);
  {
    RecordStore store = RecordStore::create(dir, "hash3", 7, {"m0", "m1"});
    store.append(sample_record("img_0", 0, 0, false));
    store.append(sample_record("img_0", 0, 1, true));
    store.append(sample_record("img_1", 0, 0, false));
    store.append(sample_record("img_1", 0, 1, true));
    store.flush();
  }
  // Simulate a crash mid-image: one record of img_2's group plus a torn line.
  {
    std::ofstream os(dir / "shards" / (shard + ".ndjson"), std::ios::app);
    os << record_to_json(sample_record("img_2", 0, 0, false), "hash3").dump() << "\n";
    os << R"({"schema_version":1,"image_id":"img_3","attack)";  // torn write
  }

  RecordStore recovered = RecordStore::open(dir, /*writable=*/true);
  const auto done = recovered.images_done(shard);
  CHECK(done == std::set<std::string>{"img_0", "img_1"});
  CHECK(recovered.load_shard(shard).size() == 4);  // img_2's partial group dropped

  // The partially recorded image can be appended again without conflicts.
  recovered.append(sample_record("img_2", 0, 0, false));
  recovered.append(sample_record("img_2", 0, 1, true));
  recovered.flush();
  CHECK(recovered.images_done(shard).size() == 3);
}

TEST_CASE("read-only stores reject writes and creation conflicts surface") {
  const auto dir = fresh_dir("readonly");
  {
    RecordStore store = RecordStore::create(dir, "hash4", 7, {"m0", "m1"});
    store.append(sample_record("img_0", 0, 0, false));
    store.flush();
  }
  RecordStore reader = RecordStore::open(dir);
  CHECK_THROWS_AS(reader.append(sample_record("img_9", 0, 0, false)), IoError);
  CHECK_THROWS_AS(RecordStore::create(dir, "hash4", 7, {"m0", "m1"}), IoError);
  CHECK_THROWS_AS(RecordStore::open(dir / "missing"), IoError);
}

TEST_CASE("plan hash covers output-relevant fields only") {
  nlohmann::json plan{{"seed", 1}, {"epsilon", 0.1}};
  const std::string base = plan_hash_of(plan);

  nlohmann::json seed_changed = plan;
  seed_changed["seed"] = 2;
  CHECK(plan_hash_of(seed_changed) != base);

  nlohmann::json eps_changed = plan;
  eps_changed["epsilon"] = 0.2;
  CHECK(plan_hash_of(eps_changed) != base);

  CHECK(plan_hash_of(plan) == base);  // stable across calls
  CHECK(base.size() == 16);
}
