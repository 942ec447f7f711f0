#pragma once

// Shared infrastructure for the mmsa pipeline: error taxonomy mapped to CLI
// exit codes, stable hashing, deterministic RNG streams, CRC32, and
// little-endian binary helpers used by the feature store and checkpoints.

#include <cstdint>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mmsa {

// Exit codes: 0 success, 2 config error, 3 data error, 4 runtime failure.
enum class ErrorKind : int { config = 2, data = 3, runtime = 4 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(ErrorKind::config, msg) {}
};
struct DataError : Error {
  explicit DataError(const std::string& msg) : Error(ErrorKind::data, msg) {}
};
struct RunError : Error {
  explicit RunError(const std::string& msg) : Error(ErrorKind::runtime, msg) {}
};

// FNV-1a 64-bit. Stable across platforms; used to key stub features and
// cache entries, so the constants are part of the on-disk contract.
inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic RNG. mt19937_64 has a standard-specified output sequence;
// the float/int helpers below avoid std distributions, whose output is
// implementation-defined, so identical seeds give identical streams on any
// platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Modulo bias is irrelevant here; determinism
  // is the contract.
  uint64_t bounded(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  double normal(double mean = 0.0, double stddev = 1.0) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return mean + stddev * r * std::cos(theta);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(bounded(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// CRC-32 (IEEE 802.3, reflected, poly 0xEDB88320), the record checksum of
// the feature-store shard and checkpoint formats.
uint32_t crc32(const void* data, size_t len, uint32_t seed = 0);

inline void put_u32le(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 24));
}

inline void put_u64le(std::vector<uint8_t>& out, uint64_t v) {
  put_u32le(out, static_cast<uint32_t>(v));
  put_u32le(out, static_cast<uint32_t>(v >> 32));
}

inline void put_f32le(std::vector<uint8_t>& out, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32le(out, bits);
}

inline uint32_t get_u32le(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
         static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

inline uint64_t get_u64le(const uint8_t* p) {
  return static_cast<uint64_t>(get_u32le(p)) |
         static_cast<uint64_t>(get_u32le(p + 4)) << 32;
}

inline float get_f32le(const uint8_t* p) {
  uint32_t bits = get_u32le(p);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view content);

}  // namespace mmsa
