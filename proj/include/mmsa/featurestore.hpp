#pragma once

// Persistent content-keyed cache of feature records, one shard file per
// branch. Entries are immutable: a backend that produces different vectors
// must change its version string.
//
// Shard record layout (all integers little-endian):
//   [u32 record_len][u32 key_len][key][u32 dim][u8 present][f32 * dim][u32 crc]
// record_len counts everything after itself; crc is CRC-32 over the bytes
// from key_len through the last float. The index sidecar holds
// [u32 key_len][key][u64 offset] triples; a record is visible only once its
// index entry is written, so readers never see partial appends. Writes take
// an exclusive flock on the shard's .lock file.

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmsa/encoders.hpp"

namespace mmsa {

struct CacheKey {
  std::string sample_id;
  Branch branch = Branch::text_main;
  std::string backend_version;

  // serialized key within a shard (branch is implied by the shard)
  std::string encoded() const;
  void validate() const;
};

class FeatureStore {
 public:
  explicit FeatureStore(std::filesystem::path root);

  // No-op if an identical record is already stored; conflicting payloads
  // under the same key are rejected.
  void put(const CacheKey& key, const FeatureRecord& record);

  // std::nullopt if unknown; corrupt entries raise a DataError naming the
  // key rather than returning garbage.
  std::optional<FeatureRecord> get(const CacheKey& key) const;

  size_t entry_count(Branch branch) const;
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path shard_path(Branch branch) const;
  std::filesystem::path index_path(Branch branch) const;
  std::filesystem::path lock_path(Branch branch) const;
  std::unordered_map<std::string, uint64_t>& index(Branch branch) const;
  FeatureRecord read_record(Branch branch, const std::string& encoded_key,
                            uint64_t offset) const;

  std::filesystem::path root_;
  mutable std::array<std::unordered_map<std::string, uint64_t>, kNumBranches>
      index_;
  mutable std::array<bool, kNumBranches> index_loaded_{};
};

struct MaterializeOptions {
  bool use_cache = true;
  // Collect per-sample failures instead of aborting; failed samples are
  // omitted from the result.
  bool keep_going = false;
};

struct MaterializeResult {
  std::vector<FeatureBundle> bundles;
  std::vector<std::string> errors;
};

// Serves cache hits from the store and encodes misses (caching them when a
// store is given). Pass store == nullptr to bypass caching entirely;
// outputs are identical either way for deterministic backends.
MaterializeResult materialize_bundles(FeatureStore* store,
                                      const Dataset& dataset,
                                      const BackendRegistry& registry,
                                      const MaterializeOptions& options = {});

}  // namespace mmsa
