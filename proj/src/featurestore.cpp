#include "mmsa/featurestore.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "mmsa/common.hpp"

namespace mmsa {

namespace {

constexpr char kKeySeparator = '\x1f';

// Advisory exclusive lock held for the duration of a put.
class ShardLock {
 public:
  explicit ShardLock(const std::filesystem::path& path) {
    fd_ = ::open(path.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0) {
      throw RunError("cannot open lock file: " + path.string());
    }
    if (::flock(fd_, LOCK_EX) != 0) {
      ::close(fd_);
      throw RunError("cannot lock shard: " + path.string());
    }
  }
  ~ShardLock() {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
    }
  }
  ShardLock(const ShardLock&) = delete;
  ShardLock& operator=(const ShardLock&) = delete;

 private:
  int fd_ = -1;
};

std::vector<uint8_t> encode_payload(const std::string& key,
                                    const FeatureRecord& record) {
  std::vector<uint8_t> payload;
  payload.reserve(key.size() + record.values.size() * 4 + 16);
  put_u32le(payload, static_cast<uint32_t>(key.size()));
  payload.insert(payload.end(), key.begin(), key.end());
  put_u32le(payload, static_cast<uint32_t>(record.values.size()));
  payload.push_back(record.present ? 1 : 0);
  for (float v : record.values) {
    put_f32le(payload, v);
  }
  return payload;
}

void check_record_invariants(const CacheKey& key, const FeatureRecord& record) {
  if (record.values.empty()) {
    throw DataError("cache record for '" + key.sample_id + "' has no payload");
  }
  if (!record.present) {
    for (float v : record.values) {
      if (v != 0.0f) {
        throw DataError("absent record for '" + key.sample_id +
                        "' must be a zero vector");
      }
    }
  }
  for (float v : record.values) {
    if (!std::isfinite(v)) {
      throw DataError("record for '" + key.sample_id +
                      "' contains a non-finite value");
    }
  }
}

}  // namespace

std::string CacheKey::encoded() const {
  return sample_id + kKeySeparator + backend_version;
}

void CacheKey::validate() const {
  if (sample_id.empty() || backend_version.empty()) {
    throw DataError("cache key components must be non-empty");
  }
}

FeatureStore::FeatureStore(std::filesystem::path root)
    : root_(std::move(root)) {
  std::error_code ec;
  std::filesystem::create_directories(root_, ec);
  if (ec) {
    throw RunError("cannot create cache root: " + root_.string());
  }
}

std::filesystem::path FeatureStore::shard_path(Branch branch) const {
  return root_ / (std::string(branch_name(branch)) + ".shard");
}
std::filesystem::path FeatureStore::index_path(Branch branch) const {
  return root_ / (std::string(branch_name(branch)) + ".idx");
}
std::filesystem::path FeatureStore::lock_path(Branch branch) const {
  return root_ / (std::string(branch_name(branch)) + ".lock");
}

std::unordered_map<std::string, uint64_t>& FeatureStore::index(
    Branch branch) const {
  size_t b = static_cast<size_t>(branch);
  if (index_loaded_[b]) return index_[b];
  auto& map = index_[b];
  map.clear();
  std::ifstream in(index_path(branch), std::ios::binary);
  if (in) {
    for (;;) {
      uint8_t len_buf[4];
      if (!in.read(reinterpret_cast<char*>(len_buf), 4)) break;
      uint32_t key_len = get_u32le(len_buf);
      std::string key(key_len, '\0');
      uint8_t off_buf[8];
      if (!in.read(key.data(), key_len) ||
          !in.read(reinterpret_cast<char*>(off_buf), 8)) {
        throw DataError("truncated cache index: " +
                        index_path(branch).string());
      }
      map[key] = get_u64le(off_buf);
    }
  }
  index_loaded_[b] = true;
  return map;
}

FeatureRecord FeatureStore::read_record(Branch branch,
                                        const std::string& encoded_key,
                                        uint64_t offset) const {
  auto fail = [&](const std::string& what) {
    throw DataError("cache entry '" + encoded_key + "' in " +
                    shard_path(branch).string() + ": " + what);
  };
  std::ifstream in(shard_path(branch), std::ios::binary);
  if (!in) fail("shard missing");
  in.seekg(static_cast<std::streamoff>(offset));
  uint8_t len_buf[4];
  if (!in.read(reinterpret_cast<char*>(len_buf), 4)) fail("truncated record");
  uint32_t record_len = get_u32le(len_buf);
  if (record_len < 13 || record_len > (1u << 30)) fail("implausible length");
  std::vector<uint8_t> body(record_len);
  if (!in.read(reinterpret_cast<char*>(body.data()),
               static_cast<std::streamsize>(record_len))) {
    fail("truncated record");
  }
  uint32_t stored_crc = get_u32le(body.data() + record_len - 4);
  uint32_t actual_crc = crc32(body.data(), record_len - 4);
  if (stored_crc != actual_crc) fail("checksum mismatch");

  uint32_t key_len = get_u32le(body.data());
  if (9 + static_cast<uint64_t>(key_len) + 4 > record_len) fail("bad key length");
  std::string key(reinterpret_cast<char*>(body.data() + 4), key_len);
  if (key != encoded_key) fail("key mismatch (index out of sync)");
  const uint8_t* p = body.data() + 4 + key_len;
  uint32_t dim = get_u32le(p);
  p += 4;
  uint8_t present = *p++;
  if (4 + key_len + 4 + 1 + dim * 4ull + 4 != record_len) {
    fail("length does not match dim");
  }

  FeatureRecord record;
  record.branch = branch;
  record.present = present != 0;
  auto sep = encoded_key.find(kKeySeparator);
  record.backend_version =
      sep == std::string::npos ? "" : encoded_key.substr(sep + 1);
  record.values.resize(dim);
  for (uint32_t i = 0; i < dim; ++i) {
    record.values[i] = get_f32le(p + 4ull * i);
  }
  return record;
}

void FeatureStore::put(const CacheKey& key, const FeatureRecord& record) {
  key.validate();
  check_record_invariants(key, record);
  std::string encoded = key.encoded();

  ShardLock lock(lock_path(key.branch));
  auto& map = index(key.branch);
  auto it = map.find(encoded);
  if (it != map.end()) {
    FeatureRecord existing = read_record(key.branch, encoded, it->second);
    bool same = existing.present == record.present &&
                existing.values.size() == record.values.size();
    if (same) {
      // bit compare, so -0.0f vs 0.0f counts as a conflict
      same = std::memcmp(existing.values.data(), record.values.data(),
                         record.values.size() * 4) == 0;
    }
    if (!same) {
      throw DataError(
          "conflicting payload for cache key '" + encoded + "' (branch " +
          branch_name(key.branch) + "); bump the backend version instead");
    }
    return;  // idempotent re-put
  }

  std::vector<uint8_t> payload = encode_payload(encoded, record);
  uint32_t crc = crc32(payload.data(), payload.size());
  std::vector<uint8_t> full;
  full.reserve(payload.size() + 8);
  put_u32le(full, static_cast<uint32_t>(payload.size() + 4));
  full.insert(full.end(), payload.begin(), payload.end());
  put_u32le(full, crc);

  std::ofstream shard(shard_path(key.branch),
                      std::ios::binary | std::ios::app);
  if (!shard) {
    throw RunError("cannot open shard: " + shard_path(key.branch).string());
  }
  shard.seekp(0, std::ios::end);
  uint64_t offset = static_cast<uint64_t>(shard.tellp());
  shard.write(reinterpret_cast<const char*>(full.data()),
              static_cast<std::streamsize>(full.size()));
  shard.flush();
  if (!shard) {
    throw RunError("write failed: " + shard_path(key.branch).string());
  }

  // publish via the index only after the record bytes are down
  std::vector<uint8_t> entry;
  put_u32le(entry, static_cast<uint32_t>(encoded.size()));
  entry.insert(entry.end(), encoded.begin(), encoded.end());
  put_u64le(entry, offset);
  std::ofstream idx(index_path(key.branch), std::ios::binary | std::ios::app);
  idx.write(reinterpret_cast<const char*>(entry.data()),
            static_cast<std::streamsize>(entry.size()));
  idx.flush();
  if (!idx) {
    throw RunError("index write failed: " + index_path(key.branch).string());
  }
  map[encoded] = offset;
}

std::optional<FeatureRecord> FeatureStore::get(const CacheKey& key) const {
  key.validate();
  auto& map = index(key.branch);
  auto it = map.find(key.encoded());
  if (it == map.end()) return std::nullopt;
  return read_record(key.branch, key.encoded(), it->second);
}

size_t FeatureStore::entry_count(Branch branch) const {
  return index(branch).size();
}

MaterializeResult materialize_bundles(FeatureStore* store,
                                      const Dataset& dataset,
                                      const BackendRegistry& registry,
                                      const MaterializeOptions& options) {
  for (Branch branch : all_branches()) {
    registry.backend(branch);  // fail fast on an incomplete registry
  }
  MaterializeResult result;
  result.bundles.reserve(dataset.samples.size());
  for (const Sample& sample : dataset.samples) {
    try {
      FeatureBundle bundle;
      bundle.sample_id = sample.id;
      for (Branch branch : all_branches()) {
        EncoderBackend& backend = registry.backend(branch);
        const BackendDescriptor& desc = backend.descriptor();
        CacheKey key{sample.id, branch, desc.version};
        std::optional<FeatureRecord> record;
        if (store && options.use_cache) {
          record = store->get(key);
          if (record) {
            record->branch = branch;
            validate_record(*record, desc, sample.id);
          }
        }
        if (!record) {
          record = backend.encode(sample);
          registry.count_encode_call();
          validate_record(*record, desc, sample.id);
          if (store && options.use_cache) {
            store->put(key, *record);
          }
        }
        bundle.record(branch) = std::move(*record);
      }
      result.bundles.push_back(std::move(bundle));
    } catch (const Error& e) {
      if (!options.keep_going) throw;
      result.errors.push_back("sample '" + sample.id + "': " + e.what());
    }
  }
  return result;
}

}  // namespace mmsa
