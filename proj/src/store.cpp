#include "advsource/store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>

#include "advsource/error.hpp"
#include "advsource/rng.hpp"

namespace advsource {

std::string plan_hash_of(const nlohmann::json& plan) {
  const std::uint64_t h = fnv1a64(plan.dump());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

nlohmann::json record_to_json(const AttackRecord& r, const std::string& plan_hash) {
  nlohmann::json j{
      {"schema_version", kRecordSchemaVersion},
      {"image_id", r.image_id},
      {"attack_kind", to_string(r.attack_kind)},
      {"source_model", r.source_model},
      {"target_model", r.target_model},
      {"success", r.success},
      {"targeted_hit", r.targeted_hit},
      {"iteration_found", r.iteration_found},
      {"target_class", r.target_class},
      {"attempt_index", r.attempt_index},
      {"plan_hash", plan_hash},
  };
  j["l2"] = r.l2 ? nlohmann::json(*r.l2) : nlohmann::json(nullptr);
  j["linf"] = r.linf ? nlohmann::json(*r.linf) : nlohmann::json(nullptr);
  return j;
}

AttackRecord record_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "schema_version", "image_id",     "attack_kind",  "source_model", "target_model",
      "success",        "targeted_hit", "l2",           "linf",         "iteration_found",
      "target_class",   "attempt_index", "plan_hash"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw DataError("record: unknown field '" + key + "'");
  }
  AttackRecord r;
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kRecordSchemaVersion) {
      throw DataError("record: unsupported schema version " + std::to_string(version));
    }
    r.image_id = j.at("image_id").get<std::string>();
    r.attack_kind = attack_kind_from_string(j.at("attack_kind").get<std::string>());
    r.source_model = j.at("source_model").get<int>();
    r.target_model = j.at("target_model").get<int>();
    r.success = j.at("success").get<bool>();
    r.targeted_hit = j.at("targeted_hit").get<bool>();
    if (!j.at("l2").is_null()) r.l2 = j.at("l2").get<double>();
    if (!j.at("linf").is_null()) r.linf = j.at("linf").get<double>();
    r.iteration_found = j.at("iteration_found").get<int>();
    r.target_class = j.at("target_class").get<int>();
    r.attempt_index = j.at("attempt_index").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("record: ") + e.what());
  }
  return r;
}

std::string shard_name_for(AttackKind kind, int source_model) {
  if (is_noise_kind(kind)) return "noise_" + to_string(kind);
  return "attack_" + to_string(kind) + "_src" + std::to_string(source_model);
}

namespace {

constexpr const char* kManifestFile = "campaign.json";
constexpr const char* kShardDir = "shards";

void fsync_path(const std::filesystem::path& p) {
  const int fd = ::open(p.c_str(), O_RDONLY);
  if (fd >= 0) {
    ::fsync(fd);
    ::close(fd);
  }
}

}  // namespace

struct RecordStore::Writer {
  std::ofstream os;
  std::filesystem::path path;

  void append_line(const std::string& line) {
    os << line << "\n";
    if (!os) {
      throw IoError("record append failed (disk full?): " + path.string() +
                    "; campaign paused, resume after freeing space");
    }
  }
};

RecordStore::RecordStore(std::filesystem::path root, Manifest manifest, bool writable)
    : root_(std::move(root)), manifest_(std::move(manifest)), writable_(writable) {}

bool RecordStore::exists(const std::filesystem::path& dir) {
  return std::filesystem::exists(dir / kManifestFile);
}

RecordStore RecordStore::create(const std::filesystem::path& dir, const std::string& plan_hash,
                                std::uint64_t seed, std::vector<std::string> model_ids) {
  if (exists(dir)) throw IoError("store already exists at " + dir.string());
  std::filesystem::create_directories(dir / kShardDir);
  Manifest m;
  m.plan_hash = plan_hash;
  m.seed = seed;
  m.model_ids = std::move(model_ids);
  RecordStore store(dir, std::move(m), /*writable=*/true);
  store.save_manifest();
  return store;
}

RecordStore RecordStore::open(const std::filesystem::path& dir, bool writable) {
  std::ifstream is(dir / kManifestFile);
  if (!is) throw IoError("no store at " + dir.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("store manifest parse error: " + std::string(e.what()));
  }
  Manifest m;
  try {
    m.schema_version = j.at("schema_version").get<int>();
    m.plan_hash = j.at("plan_hash").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.model_ids = j.at("model_ids").get<std::vector<std::string>>();
    for (const auto& [name, complete] : j.at("shards").items()) {
      m.shards[name] = complete.get<bool>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("store manifest: " + std::string(e.what()));
  }
  if (m.schema_version != kRecordSchemaVersion) {
    throw DataError("store schema version " + std::to_string(m.schema_version) +
                    " unsupported");
  }
  RecordStore store(dir, std::move(m), writable);
  if (writable) {
    for (const auto& [name, complete] : store.manifest_.shards) {
      if (!complete) store.recover_shard(name);
      store.load_keys(name);
    }
  }
  return store;
}

std::filesystem::path RecordStore::shard_path(const std::string& shard) const {
  return root_ / kShardDir / (shard + ".ndjson");
}

void RecordStore::save_manifest() const {
  nlohmann::json j{
      {"schema_version", manifest_.schema_version},
      {"plan_hash", manifest_.plan_hash},
      {"seed", manifest_.seed},
      {"model_ids", manifest_.model_ids},
      {"shards", manifest_.shards},
  };
  const auto path = root_ / kManifestFile;
  {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write store manifest: " + path.string());
    os << j.dump(2) << "\n";
    if (!os) throw IoError("short write to store manifest: " + path.string());
  }
  fsync_path(path);
}

void RecordStore::recover_shard(const std::string& shard) {
  const auto path = shard_path(shard);
  if (!std::filesystem::exists(path)) return;
  std::ifstream is(path, std::ios::binary);
  std::string line;
  std::uintmax_t good_end = 0;
  std::uintmax_t pos = 0;
  std::vector<std::pair<std::uintmax_t, std::string>> line_ends;  // (end offset, image_id)
  while (std::getline(is, line)) {
    const bool has_newline = !is.eof();
    pos += line.size() + (has_newline ? 1 : 0);
    if (!has_newline) break;  // torn final line
    try {
      const AttackRecord r = record_from_json(nlohmann::json::parse(line));
      good_end = pos;
      line_ends.emplace_back(pos, r.image_id);
    } catch (const std::exception&) {
      break;  // everything from here on is damage from an interrupted run
    }
  }
  is.close();

  // Drop a trailing record group that does not cover every ensemble member.
  const size_t group = manifest_.model_ids.size();
  if (!line_ends.empty() && group > 0) {
    const std::string& last_image = line_ends.back().second;
    size_t tail = 0;
    for (auto it = line_ends.rbegin(); it != line_ends.rend() && it->second == last_image; ++it) {
      ++tail;
    }
    if (tail % group != 0) {
      good_end = (line_ends.size() > tail) ? line_ends[line_ends.size() - tail - 1].first : 0;
    }
  }
  if (good_end != std::filesystem::file_size(path)) {
    std::filesystem::resize_file(path, good_end);
  }
}

void RecordStore::load_keys(const std::string& shard) {
  auto& keys = keys_[shard];
  for (const auto& r : load_shard(shard)) {
    keys.insert({r.image_id, r.target_model});
  }
}

void RecordStore::append(const AttackRecord& r) {
  if (!writable_) throw IoError("store opened read-only");
  const std::string shard = shard_name_for(r.attack_kind, r.source_model);
  if (shard_complete(shard)) {
    throw DataError("append to completed shard '" + shard + "'");
  }
  auto& keys = keys_[shard];
  if (!keys.insert({r.image_id, r.target_model}).second) {
    throw DataError("duplicate record key (image='" + r.image_id +
                    "', source=" + std::to_string(r.source_model) +
                    ", target=" + std::to_string(r.target_model) + ", attack=" +
                    to_string(r.attack_kind) + ")");
  }
  auto it = writers_.find(shard);
  if (it == writers_.end()) {
    auto writer = std::make_shared<Writer>();
    writer->path = shard_path(shard);
    std::filesystem::create_directories(writer->path.parent_path());
    writer->os.open(writer->path, std::ios::app);
    if (!writer->os) throw IoError("cannot open shard for append: " + writer->path.string());
    it = writers_.emplace(shard, std::move(writer)).first;
    if (!manifest_.shards.count(shard)) {
      manifest_.shards[shard] = false;
      save_manifest();
    }
  }
  it->second->append_line(record_to_json(r, manifest_.plan_hash).dump());
}

void RecordStore::flush() {
  for (auto& [_, writer] : writers_) writer->os.flush();
}

void RecordStore::mark_shard_complete(const std::string& shard) {
  if (!writable_) throw IoError("store opened read-only");
  auto it = writers_.find(shard);
  if (it != writers_.end()) {
    it->second->os.flush();
    if (!it->second->os) throw IoError("flush failed for shard " + shard);
  }
  // The completion flag may only be set once the shard bytes are durable.
  fsync_path(shard_path(shard));
  manifest_.shards[shard] = true;
  save_manifest();
}

bool RecordStore::shard_complete(const std::string& shard) const {
  auto it = manifest_.shards.find(shard);
  return it != manifest_.shards.end() && it->second;
}

std::set<std::string> RecordStore::images_done(const std::string& shard) const {
  std::map<std::string, size_t> counts;
  auto it = keys_.find(shard);
  if (it != keys_.end()) {
    for (const auto& [image, _] : it->second) ++counts[image];
  } else {
    for (const auto& r : load_shard(shard)) ++counts[r.image_id];
  }
  const size_t group = manifest_.model_ids.size();
  std::set<std::string> done;
  for (const auto& [image, n] : counts) {
    if (n >= group) done.insert(image);
  }
  return done;
}

std::vector<AttackRecord> RecordStore::load_shard(const std::string& shard) const {
  const auto path = shard_path(shard);
  std::vector<AttackRecord> records;
  std::ifstream is(path, std::ios::binary);
  if (!is) return records;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const bool torn_tail = is.eof();
    try {
      records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      if (torn_tail) break;  // interrupted writer; recovered on next writable open
      throw DataError("shard " + path.string() + ": " + e.what());
    }
  }
  return records;
}

std::vector<AttackRecord> RecordStore::load_all() const {
  std::vector<AttackRecord> all;
  for (const auto& [name, _] : manifest_.shards) {
    auto records = load_shard(name);
    all.insert(all.end(), std::make_move_iterator(records.begin()),
               std::make_move_iterator(records.end()));
  }
  return all;
}

std::vector<std::string> RecordStore::shard_names() const {
  std::vector<std::string> names;
  for (const auto& [name, _] : manifest_.shards) names.push_back(name);
  return names;
}

std::vector<std::string> RecordStore::image_ids() const {
  std::set<std::string> ids;
  for (const auto& r : load_all()) ids.insert(r.image_id);
  return {ids.begin(), ids.end()};
}

std::int64_t RecordStore::record_count() const {
  std::int64_t n = 0;
  for (const auto& [name, _] : manifest_.shards) {
    n += static_cast<std::int64_t>(load_shard(name).size());
  }
  return n;
}

}  // namespace advsource
