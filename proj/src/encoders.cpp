#include "mmsa/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mmsa/common.hpp"

namespace mmsa {

using nlohmann::json;

namespace {

const std::array<const char*, kNumBranches> kBranchNames = {
    "text_main", "image_main", "clip_text", "clip_image",
    "face",      "object",     "scene",     "ocr"};

// One stream per (sample, branch, version); also the feature-store cache
// key, so the separator is part of the on-disk contract.
uint64_t feature_seed(const std::string& sample_id, Branch branch,
                      const std::string& version) {
  std::string key = sample_id;
  key.push_back('\x1f');
  key += branch_name(branch);
  key.push_back('\x1f');
  key += version;
  return fnv1a64(key);
}

float unit_float(uint64_t& state) {
  // uniform in [-1, 1)
  double u = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
  return static_cast<float>(2.0 * u - 1.0);
}

}  // namespace

const char* branch_name(Branch branch) {
  return kBranchNames[static_cast<size_t>(branch)];
}

Branch branch_from_name(const std::string& name) {
  for (int i = 0; i < kNumBranches; ++i) {
    if (name == kBranchNames[static_cast<size_t>(i)]) {
      return static_cast<Branch>(i);
    }
  }
  throw ConfigError("unknown branch name: '" + name + "'");
}

const std::array<Branch, kNumBranches>& all_branches() {
  static const std::array<Branch, kNumBranches> branches = {
      Branch::text_main, Branch::image_main, Branch::clip_text,
      Branch::clip_image, Branch::face,      Branch::object,
      Branch::scene,     Branch::ocr};
  return branches;
}

bool is_expert_branch(Branch branch) {
  return branch == Branch::face || branch == Branch::object ||
         branch == Branch::scene || branch == Branch::ocr;
}

std::optional<std::vector<float>> select_largest_face(
    const std::vector<FaceDetection>& detections) {
  if (detections.empty()) return std::nullopt;
  size_t best = 0;
  for (size_t i = 0; i < detections.size(); ++i) {
    const auto& d = detections[i];
    if (!(d.width > 0.0) || !(d.height > 0.0)) {
      throw DataError("face box " + std::to_string(i) +
                      " has non-positive size");
    }
    if (d.area() > detections[best].area()) {
      best = i;  // strict comparison keeps the earliest on ties
    }
  }
  return detections[best].embedding;
}

std::optional<std::vector<float>> sum_object_logits(
    const std::vector<std::vector<float>>& detections, int num_classes) {
  if (num_classes <= 0) {
    throw DataError("object class count must be positive");
  }
  if (detections.empty()) return std::nullopt;
  for (size_t i = 0; i < detections.size(); ++i) {
    if (detections[i].size() != static_cast<size_t>(num_classes)) {
      throw DataError("object detection " + std::to_string(i) + " has " +
                      std::to_string(detections[i].size()) +
                      " logits, expected " + std::to_string(num_classes));
    }
  }
  std::vector<float> out(static_cast<size_t>(num_classes), 0.0f);
  std::vector<float> column(detections.size());
  for (size_t c = 0; c < static_cast<size_t>(num_classes); ++c) {
    for (size_t i = 0; i < detections.size(); ++i) {
      if (!std::isfinite(detections[i][c])) {
        throw DataError("object logits contain a non-finite value");
      }
      column[i] = detections[i][c];
    }
    // canonical addend order makes the sum independent of detection order
    std::sort(column.begin(), column.end());
    double acc = 0.0;
    for (float v : column) acc += static_cast<double>(v);
    out[c] = static_cast<float>(acc);
  }
  return out;
}

FeatureRecord scene_feature(const std::vector<float>& logits,
                            const std::string& backend_version) {
  if (logits.size() != static_cast<size_t>(kSceneClasses)) {
    throw DataError("scene logits must have " + std::to_string(kSceneClasses) +
                    " entries, got " + std::to_string(logits.size()));
  }
  for (float v : logits) {
    if (!std::isfinite(v)) {
      throw DataError("scene logits contain a non-finite value");
    }
  }
  FeatureRecord record;
  record.branch = Branch::scene;
  record.present = true;
  record.backend_version = backend_version;
  record.values = logits;
  return record;
}

std::optional<std::vector<float>> ocr_gate_and_encode(
    const std::vector<std::string>& words,
    const std::function<std::vector<float>(const std::string&)>&
        sentence_encoder) {
  if (words.size() < kOcrMinWords) return std::nullopt;
  std::string joined;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i > 0) joined.push_back(' ');
    joined += words[i];
  }
  return sentence_encoder(joined);
}

bool PresenceRule::applies(const std::string& sample_id) const {
  switch (kind) {
    case Kind::always:
      return true;
    case Kind::never:
      return false;
    case Kind::hash_even:
      return fnv1a64(salt + sample_id) % 2 == 0;
    case Kind::hash_mod:
      if (modulus == 0) return true;
      return fnv1a64(salt + sample_id) % modulus == residue;
  }
  return true;
}

StubBackend::StubBackend(Branch branch, int output_dim, std::string version,
                         PresenceRule presence, int planted_classes,
                         float planted_scale)
    : presence_(std::move(presence)),
      planted_classes_(planted_classes),
      planted_scale_(planted_scale) {
  if (output_dim <= 0) {
    throw ConfigError(std::string("stub backend for ") + branch_name(branch) +
                      " needs a positive output_dim");
  }
  if (!is_expert_branch(branch) && presence_.kind != PresenceRule::Kind::always) {
    throw ConfigError(std::string(branch_name(branch)) +
                      " is not an expert branch and must always be present");
  }
  if (planted_classes_ > output_dim) {
    throw ConfigError(std::string("stub backend for ") + branch_name(branch) +
                      ": planted class count exceeds output_dim");
  }
  descriptor_ = {branch, output_dim,
                 branch == Branch::text_main || branch == Branch::image_main,
                 std::move(version)};
}

FeatureRecord StubBackend::encode(const Sample& sample) {
  FeatureRecord record;
  record.branch = descriptor_.branch;
  record.backend_version = descriptor_.version;
  record.values.assign(static_cast<size_t>(descriptor_.output_dim), 0.0f);
  if (!presence_.applies(sample.id)) {
    record.present = false;
    return record;
  }
  record.present = true;
  uint64_t state =
      feature_seed(sample.id, descriptor_.branch, descriptor_.version);
  for (auto& v : record.values) {
    v = unit_float(state);
  }
  if (planted_classes_ > 0) {
    if (sample.label < 0 || sample.label >= planted_classes_) {
      throw DataError("sample '" + sample.id + "' label " +
                      std::to_string(sample.label) +
                      " outside the planted class range");
    }
    for (int c = 0; c < planted_classes_; ++c) {
      record.values[static_cast<size_t>(c)] = 0.0f;
    }
    record.values[static_cast<size_t>(sample.label)] = planted_scale_;
  }
  return record;
}

OcrWordsBackend::OcrWordsBackend(int output_dim, std::string version,
                                 const std::string& sidecar_path) {
  if (output_dim <= 0) {
    throw ConfigError("ocr backend needs a positive output_dim");
  }
  descriptor_ = {Branch::ocr, output_dim, false, std::move(version)};
  std::ifstream in(sidecar_path);
  if (!in) {
    throw DataError("cannot open OCR sidecar: " + sidecar_path);
  }
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record = json::parse(line, nullptr, false);
    if (record.is_discarded() || !record.is_object() ||
        !record.contains("id") || !record["id"].is_string() ||
        !record.contains("words") || !record["words"].is_array()) {
      throw DataError(sidecar_path + ":" + std::to_string(lineno) +
                      ": expected {\"id\", \"words\"}");
    }
    std::vector<std::string> words;
    for (const json& w : record["words"]) {
      if (!w.is_string()) {
        throw DataError(sidecar_path + ":" + std::to_string(lineno) +
                        ": words must be strings");
      }
      words.push_back(w.get<std::string>());
    }
    words_by_id_[record["id"].get<std::string>()] = std::move(words);
  }
}

FeatureRecord OcrWordsBackend::encode(const Sample& sample) {
  FeatureRecord record;
  record.branch = Branch::ocr;
  record.backend_version = descriptor_.version;
  record.values.assign(static_cast<size_t>(descriptor_.output_dim), 0.0f);
  auto it = words_by_id_.find(sample.id);
  const std::vector<std::string> no_words;
  const auto& words = it == words_by_id_.end() ? no_words : it->second;
  auto encoded = ocr_gate_and_encode(words, [&](const std::string& text) {
    std::vector<float> v(static_cast<size_t>(descriptor_.output_dim));
    uint64_t state = fnv1a64(text + '\x1f' + descriptor_.version);
    for (auto& x : v) x = unit_float(state);
    return v;
  });
  if (!encoded) {
    record.present = false;
    return record;
  }
  record.present = true;
  record.values = std::move(*encoded);
  return record;
}

PrecomputedBackend::PrecomputedBackend(Branch branch, int output_dim,
                                       std::string version,
                                       const std::string& sidecar_path,
                                       bool trainable) {
  if (output_dim <= 0) {
    throw ConfigError(std::string("backend for ") + branch_name(branch) +
                      " needs a positive output_dim");
  }
  descriptor_ = {branch, output_dim, trainable, std::move(version)};
  std::ifstream in(sidecar_path);
  if (!in) {
    throw DataError("cannot open feature sidecar: " + sidecar_path);
  }
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json entry = json::parse(line, nullptr, false);
    if (entry.is_discarded() || !entry.is_object() || !entry.contains("id") ||
        !entry["id"].is_string()) {
      throw DataError(sidecar_path + ":" + std::to_string(lineno) +
                      ": expected {\"id\", \"vector\", \"present\"}");
    }
    FeatureRecord record;
    record.branch = branch;
    record.backend_version = descriptor_.version;
    record.present = entry.value("present", true);
    record.values.assign(static_cast<size_t>(output_dim), 0.0f);
    if (record.present) {
      if (!entry.contains("vector") || !entry["vector"].is_array() ||
          entry["vector"].size() != static_cast<size_t>(output_dim)) {
        throw DataError(sidecar_path + ":" + std::to_string(lineno) +
                        ": vector must have " + std::to_string(output_dim) +
                        " entries");
      }
      size_t i = 0;
      for (const json& v : entry["vector"]) {
        if (!v.is_number()) {
          throw DataError(sidecar_path + ":" + std::to_string(lineno) +
                          ": vector entries must be numbers");
        }
        record.values[i++] = v.get<float>();
      }
    } else if (!is_expert_branch(branch)) {
      throw DataError(sidecar_path + ":" + std::to_string(lineno) + ": " +
                      branch_name(branch) +
                      " is not an expert branch and cannot be absent");
    }
    records_by_id_[entry["id"].get<std::string>()] = std::move(record);
  }
}

FeatureRecord PrecomputedBackend::encode(const Sample& sample) {
  auto it = records_by_id_.find(sample.id);
  if (it == records_by_id_.end()) {
    throw RunError(std::string("no precomputed ") +
                   branch_name(descriptor_.branch) + " feature for sample '" +
                   sample.id + "'");
  }
  return it->second;
}

void BackendRegistry::set(std::unique_ptr<EncoderBackend> backend) {
  Branch branch = backend->descriptor().branch;
  backends_[static_cast<size_t>(branch)] = std::move(backend);
}

bool BackendRegistry::has(Branch branch) const {
  return backends_[static_cast<size_t>(branch)] != nullptr;
}

EncoderBackend& BackendRegistry::backend(Branch branch) const {
  const auto& b = backends_[static_cast<size_t>(branch)];
  if (!b) {
    throw ConfigError(std::string("no backend registered for branch '") +
                      branch_name(branch) + "'");
  }
  return *b;
}

void validate_record(const FeatureRecord& record,
                     const BackendDescriptor& descriptor,
                     const std::string& sample_id) {
  auto fail = [&](const std::string& what) {
    throw RunError(std::string("branch ") + branch_name(descriptor.branch) +
                   ", sample '" + sample_id + "': " + what);
  };
  if (record.branch != descriptor.branch) fail("record branch mismatch");
  if (record.dim() != descriptor.output_dim) {
    fail("dim " + std::to_string(record.dim()) + " != descriptor dim " +
         std::to_string(descriptor.output_dim));
  }
  if (!record.present && !is_expert_branch(descriptor.branch)) {
    fail("non-expert branch produced an absent record");
  }
  for (float v : record.values) {
    if (!std::isfinite(v)) fail("non-finite feature value");
    if (!record.present && v != 0.0f) fail("absent record is not zeroed");
  }
}

FeatureBundle extract_bundle(const Sample& sample,
                             const BackendRegistry& registry) {
  FeatureBundle bundle;
  bundle.sample_id = sample.id;
  for (Branch branch : all_branches()) {
    EncoderBackend& backend = registry.backend(branch);
    FeatureRecord record;
    try {
      record = backend.encode(sample);
      registry.count_encode_call();
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw RunError(std::string("branch ") + branch_name(branch) +
                     ", sample '" + sample.id + "': " + e.what());
    }
    validate_record(record, backend.descriptor(), sample.id);
    bundle.record(branch) = std::move(record);
  }
  return bundle;
}

}  // namespace mmsa
