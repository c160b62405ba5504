#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "advsource/attacks.hpp"

namespace advsource {

inline constexpr int kRecordSchemaVersion = 1;

// 64-bit FNV-1a over the canonical (sorted-key, compact) JSON encoding of a
// plan. Any field that affects outputs changes the hash.
std::string plan_hash_of(const nlohmann::json& plan);

nlohmann::json record_to_json(const AttackRecord& r, const std::string& plan_hash);
// Strict parse: unknown fields and wrong schema versions are rejected.
AttackRecord record_from_json(const nlohmann::json& j);

// Shard granularity is (source model x attack kind), so a crashed shard loses
// at most one combination.
std::string shard_name_for(AttackKind kind, int source_model);

// Append-only newline-delimited record store with a campaign manifest. One
// writer per shard; readers see completed shards only after their completion
// flag is set (which happens after fsync).
class RecordStore {
 public:
  struct Manifest {
    int schema_version = kRecordSchemaVersion;
    std::string plan_hash;
    std::uint64_t seed = 0;
    std::vector<std::string> model_ids;
    std::map<std::string, bool> shards;  // shard name -> complete
  };

  static RecordStore create(const std::filesystem::path& dir, const std::string& plan_hash,
                            std::uint64_t seed, std::vector<std::string> model_ids);
  static RecordStore open(const std::filesystem::path& dir, bool writable = false);
  static bool exists(const std::filesystem::path& dir);

  // Durably appends one record; duplicate (image_id, source, target, kind)
  // keys are rejected with DataError. Write failures (e.g. disk full) raise
  // IoError so the campaign pauses instead of losing records silently.
  void append(const AttackRecord& r);
  void flush();

  void mark_shard_complete(const std::string& shard);
  bool shard_complete(const std::string& shard) const;

  // Image ids whose record group in the shard is complete; the campaign skips
  // these on resume. Records arrive in groups of one-record-per-member, so a
  // complete group has exactly ensemble-size records.
  std::set<std::string> images_done(const std::string& shard) const;

  std::vector<AttackRecord> load_shard(const std::string& shard) const;
  std::vector<AttackRecord> load_all() const;
  std::vector<std::string> shard_names() const;
  // Distinct image ids across all shards, sorted.
  std::vector<std::string> image_ids() const;

  const Manifest& manifest() const { return manifest_; }
  const std::filesystem::path& root() const { return root_; }

  std::int64_t record_count() const;

 private:
  RecordStore(std::filesystem::path root, Manifest manifest, bool writable);

  std::filesystem::path shard_path(const std::string& shard) const;
  void save_manifest() const;
  // Drops a trailing partial line and a trailing partial record group left by
  // an interrupted run. Writable stores only.
  void recover_shard(const std::string& shard);
  void load_keys(const std::string& shard);

  std::filesystem::path root_;
  Manifest manifest_;
  bool writable_ = false;
  struct Writer;
  std::map<std::string, std::shared_ptr<Writer>> writers_;
  std::map<std::string, std::set<std::pair<std::string, int>>> keys_;  // per shard: (image, target)
};

}  // namespace advsource
