#pragma once

// The encoder-backend contract shared by all eight feature branches, the
// deterministic stub backend used for desk-scale runs, sidecar-driven
// adapters for precomputed features, and the expert post-processing rules
// (largest face, object-logit summation, scene logits, OCR word gate).

#include <array>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmsa/dataset.hpp"

namespace mmsa {

// Canonical fusion order. Text leads; the four expert branches follow the
// two encoder pairs.
enum class Branch : int {
  text_main = 0,
  image_main = 1,
  clip_text = 2,
  clip_image = 3,
  face = 4,
  object = 5,
  scene = 6,
  ocr = 7,
};

inline constexpr int kNumBranches = 8;
inline constexpr int kSceneClasses = 365;

const char* branch_name(Branch branch);
Branch branch_from_name(const std::string& name);
const std::array<Branch, kNumBranches>& all_branches();

// Expert branches may be absent for a sample; the other four always yield a
// feature.
bool is_expert_branch(Branch branch);

struct FeatureRecord {
  Branch branch = Branch::text_main;
  bool present = true;
  std::string backend_version;
  std::vector<float> values;  // zero vector when absent

  int dim() const { return static_cast<int>(values.size()); }
};

struct FeatureBundle {
  std::string sample_id;
  std::array<FeatureRecord, kNumBranches> records;  // canonical order

  const FeatureRecord& record(Branch branch) const {
    return records[static_cast<size_t>(branch)];
  }
  FeatureRecord& record(Branch branch) {
    return records[static_cast<size_t>(branch)];
  }
};

struct BackendDescriptor {
  Branch branch = Branch::text_main;
  int output_dim = 0;
  bool trainable = false;
  std::string version;
};

class EncoderBackend {
 public:
  virtual ~EncoderBackend() = default;
  virtual const BackendDescriptor& descriptor() const = 0;
  virtual FeatureRecord encode(const Sample& sample) = 0;
};

// ---- expert post-processing rules -----------------------------------------

struct FaceDetection {
  double width = 0.0;
  double height = 0.0;
  std::vector<float> embedding;

  double area() const { return width * height; }
};

// Embedding of the largest detected face; ties go to the earliest
// detection. Empty input means no face.
std::optional<std::vector<float>> select_largest_face(
    const std::vector<FaceDetection>& detections);

// Elementwise sum of per-detection class logits. The addends are summed in
// a canonical order so the result does not depend on detection order. An
// empty detection list means the object feature is absent.
std::optional<std::vector<float>> sum_object_logits(
    const std::vector<std::vector<float>>& detections, int num_classes);

// Scene logits pass through unchanged and are always present.
FeatureRecord scene_feature(const std::vector<float>& logits,
                            const std::string& backend_version);

// Images with fewer than five recognized words yield no OCR feature;
// otherwise the words joined by single spaces go through the sentence
// encoder.
inline constexpr size_t kOcrMinWords = 5;
std::optional<std::vector<float>> ocr_gate_and_encode(
    const std::vector<std::string>& words,
    const std::function<std::vector<float>(const std::string&)>& sentence_encoder);

// ---- stub backend ----------------------------------------------------------

struct PresenceRule {
  enum class Kind { always, never, hash_even, hash_mod };
  Kind kind = Kind::always;
  uint64_t modulus = 2;
  uint64_t residue = 0;
  std::string salt;  // prepended to the id before hashing

  // Decided by FNV-1a 64 of (salt + sample_id).
  bool applies(const std::string& sample_id) const;
};

// Deterministic pseudo-random features keyed by (sample_id, branch,
// version). In planted mode the first planted_classes components hold a
// scaled one-hot of the label, which makes the dataset separable through
// this branch alone.
class StubBackend : public EncoderBackend {
 public:
  StubBackend(Branch branch, int output_dim, std::string version,
              PresenceRule presence = {}, int planted_classes = 0,
              float planted_scale = 4.0f);

  const BackendDescriptor& descriptor() const override { return descriptor_; }
  FeatureRecord encode(const Sample& sample) override;

 private:
  BackendDescriptor descriptor_;
  PresenceRule presence_;
  int planted_classes_;
  float planted_scale_;
};

// OCR branch backend fed by a sidecar manifest of per-sample word lists
// (JSONL: {"id": ..., "words": [...]}). Applies the word-count gate, then a
// deterministic hash-keyed sentence encoder over the joined words. Samples
// without a sidecar entry have no image text.
class OcrWordsBackend : public EncoderBackend {
 public:
  OcrWordsBackend(int output_dim, std::string version,
                  const std::string& sidecar_path);

  const BackendDescriptor& descriptor() const override { return descriptor_; }
  FeatureRecord encode(const Sample& sample) override;

 private:
  BackendDescriptor descriptor_;
  std::unordered_map<std::string, std::vector<std::string>> words_by_id_;
};

// Adapter for features produced outside the pipeline (real pre-trained
// models). Sidecar JSONL: {"id": ..., "vector": [...], "present": bool}.
class PrecomputedBackend : public EncoderBackend {
 public:
  PrecomputedBackend(Branch branch, int output_dim, std::string version,
                     const std::string& sidecar_path, bool trainable = false);

  const BackendDescriptor& descriptor() const override { return descriptor_; }
  FeatureRecord encode(const Sample& sample) override;

 private:
  BackendDescriptor descriptor_;
  std::unordered_map<std::string, FeatureRecord> records_by_id_;
};

// ---- registry and bundle extraction ---------------------------------------

class BackendRegistry {
 public:
  void set(std::unique_ptr<EncoderBackend> backend);
  bool has(Branch branch) const;
  EncoderBackend& backend(Branch branch) const;  // throws if missing

  uint64_t encode_calls() const { return encode_calls_.load(); }
  void count_encode_call() const { encode_calls_.fetch_add(1); }

 private:
  std::array<std::unique_ptr<EncoderBackend>, kNumBranches> backends_;
  mutable std::atomic<uint64_t> encode_calls_{0};
};

// Throws if the record violates the feature contract for its descriptor.
void validate_record(const FeatureRecord& record,
                     const BackendDescriptor& descriptor,
                     const std::string& sample_id);

// One record per branch in canonical order; backend errors gain
// branch/sample context.
FeatureBundle extract_bundle(const Sample& sample,
                             const BackendRegistry& registry);

}  // namespace mmsa
