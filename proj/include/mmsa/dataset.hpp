#pragma once

// Corpus ingestion and partitioning: manifest parsing, annotation
// aggregation into labels, stratified splits and folds, and the per-class
// presence statistics table.
//
// Manifest format (one JSON object per line):
//   {"id": "...", "text": "...", "image": "...", <label form>}
// where <label form> is one of
//   "label": "<token>"
//   "text_label": "<token>", "image_label": "<token>"
//   "annotations": [["<t>","<i>"], ["<t>","<i>"], ["<t>","<i>"]]
// Sentiment tokens: positive|neutral|negative. Emotion tokens: angry|bored|
// calm|fearful|happy|loving|sad. The two-label and annotation forms are
// only meaningful for sentiment corpora.

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmsa/textnorm.hpp"

namespace mmsa {

enum class Corpus { mvsa, tumemo };

Corpus corpus_from_name(const std::string& name);
const char* corpus_name(Corpus corpus);

int num_classes(Corpus corpus);  // 3 for sentiment, 7 for emotion
const std::vector<std::string>& label_names(Corpus corpus);
int parse_label(const std::string& token, Corpus corpus);

// Sentiment class indices used by the aggregation rules.
inline constexpr int kPositive = 0;
inline constexpr int kNeutral = 1;
inline constexpr int kNegative = 2;

struct Sample {
  std::string id;
  std::string text;       // raw manifest text
  std::string text_norm;  // filled by normalize_dataset
  std::string image_ref;
  int label = -1;
};

// Why a sample was dropped during label aggregation.
enum class DropReason { polarity_conflict, no_text_majority, no_image_majority };
const char* drop_reason_name(DropReason reason);

struct DropReport {
  size_t polarity_conflict = 0;
  size_t no_text_majority = 0;
  size_t no_image_majority = 0;
  size_t total() const {
    return polarity_conflict + no_text_majority + no_image_majority;
  }
  void count(DropReason reason);
};

struct Dataset {
  Corpus corpus = Corpus::mvsa;
  std::vector<Sample> samples;
  DropReport drops;

  int classes() const { return num_classes(corpus); }
  const Sample* find(const std::string& id) const;
  void rebuild_index();

 private:
  std::unordered_map<std::string, size_t> index_;
};

// Combines a text-modality and an image-modality sentiment label into one
// sample label. Agreement keeps the label, one polarized + one neutral
// keeps the polarized one, and opposite polarities discard the sample.
std::optional<int> aggregate_single(int text_label, int image_label);

struct AnnotatorPair {
  int text_label;
  int image_label;
};

// Three annotators: majority vote within each modality (none if all three
// differ), then the single-pair rule on the two votes.
std::optional<int> aggregate_multiple(const std::vector<AnnotatorPair>& pairs,
                                      DropReason* reason = nullptr);

Dataset load_manifest(const std::string& path, Corpus corpus);
void save_manifest(const Dataset& dataset, const std::string& path);

// Fills text_norm for every sample.
void normalize_dataset(Dataset& dataset, const NormPolicy& policy);

struct Split {
  std::vector<std::string> train_ids, val_ids, test_ids;
};

struct FoldPlan {
  int k = 0;
  uint64_t seed = 0;
  std::vector<std::vector<std::string>> folds;
};

// Stratified by label and deterministic per seed. Per class the val/test
// allotments are round(fraction * class_count), at least 1 each.
Split make_split(const Dataset& dataset, double val_fraction,
                 double test_fraction, uint64_t seed);

// Stratified partition into k folds whose overall sizes differ by at most
// one; extras within a class go to the currently smallest folds.
FoldPlan make_folds(const Dataset& dataset, int k, uint64_t seed);

void save_split(const Split& split, double val_fraction, double test_fraction,
                uint64_t seed, const std::string& path);
Split load_split(const std::string& path);
void save_folds(const FoldPlan& plan, const std::string& path);
FoldPlan load_folds(const std::string& path);

struct ClassPresence {
  std::string label;
  size_t count = 0;
  double face_pct = 0.0;
  double object_pct = 0.0;
  double ocr_pct = 0.0;
};

struct DatasetStats {
  std::vector<ClassPresence> per_class;  // classes with zero samples omitted
  ClassPresence overall;
};

struct FeatureBundle;

// Presence ratios come from the face/object/ocr records of each sample's
// bundle; every sample must have one.
DatasetStats compute_stats(const Dataset& dataset,
                           const std::vector<FeatureBundle>& bundles);

}  // namespace mmsa
