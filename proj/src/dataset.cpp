#include "mmsa/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "mmsa/common.hpp"
#include "mmsa/encoders.hpp"

namespace mmsa {

using nlohmann::json;

Corpus corpus_from_name(const std::string& name) {
  if (name == "mvsa") return Corpus::mvsa;
  if (name == "tumemo") return Corpus::tumemo;
  throw ConfigError("unknown corpus: '" + name + "' (expected mvsa|tumemo)");
}

const char* corpus_name(Corpus corpus) {
  return corpus == Corpus::mvsa ? "mvsa" : "tumemo";
}

int num_classes(Corpus corpus) { return corpus == Corpus::mvsa ? 3 : 7; }

const std::vector<std::string>& label_names(Corpus corpus) {
  static const std::vector<std::string> sentiment = {"positive", "neutral",
                                                     "negative"};
  static const std::vector<std::string> emotion = {
      "angry", "bored", "calm", "fearful", "happy", "loving", "sad"};
  return corpus == Corpus::mvsa ? sentiment : emotion;
}

int parse_label(const std::string& token, Corpus corpus) {
  const auto& names = label_names(corpus);
  for (size_t i = 0; i < names.size(); ++i) {
    if (names[i] == token) return static_cast<int>(i);
  }
  throw DataError("unknown label token '" + token + "' for corpus " +
                  corpus_name(corpus));
}

const char* drop_reason_name(DropReason reason) {
  switch (reason) {
    case DropReason::polarity_conflict:
      return "polarity_conflict";
    case DropReason::no_text_majority:
      return "no_text_majority";
    case DropReason::no_image_majority:
      return "no_image_majority";
  }
  return "?";
}

void DropReport::count(DropReason reason) {
  switch (reason) {
    case DropReason::polarity_conflict:
      ++polarity_conflict;
      break;
    case DropReason::no_text_majority:
      ++no_text_majority;
      break;
    case DropReason::no_image_majority:
      ++no_image_majority;
      break;
  }
}

const Sample* Dataset::find(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &samples[it->second];
}

void Dataset::rebuild_index() {
  index_.clear();
  index_.reserve(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    index_.emplace(samples[i].id, i);
  }
}

namespace {

void check_sentiment_label(int label) {
  if (label < 0 || label > 2) {
    throw DataError("sentiment label index out of range: " +
                    std::to_string(label));
  }
}

std::optional<int> majority3(int a, int b, int c) {
  if (a == b || a == c) return a;
  if (b == c) return b;
  return std::nullopt;
}

}  // namespace

std::optional<int> aggregate_single(int text_label, int image_label) {
  check_sentiment_label(text_label);
  check_sentiment_label(image_label);
  if (text_label == image_label) return text_label;
  if (text_label == kNeutral) return image_label;
  if (image_label == kNeutral) return text_label;
  return std::nullopt;  // opposite polarities
}

std::optional<int> aggregate_multiple(const std::vector<AnnotatorPair>& pairs,
                                      DropReason* reason) {
  if (pairs.size() != 3) {
    throw DataError("expected exactly 3 annotator pairs, got " +
                    std::to_string(pairs.size()));
  }
  for (const auto& p : pairs) {
    check_sentiment_label(p.text_label);
    check_sentiment_label(p.image_label);
  }
  auto text_vote =
      majority3(pairs[0].text_label, pairs[1].text_label, pairs[2].text_label);
  if (!text_vote) {
    if (reason) *reason = DropReason::no_text_majority;
    return std::nullopt;
  }
  auto image_vote = majority3(pairs[0].image_label, pairs[1].image_label,
                              pairs[2].image_label);
  if (!image_vote) {
    if (reason) *reason = DropReason::no_image_majority;
    return std::nullopt;
  }
  auto label = aggregate_single(*text_vote, *image_vote);
  if (!label && reason) *reason = DropReason::polarity_conflict;
  return label;
}

namespace {

[[noreturn]] void line_error(const std::string& path, size_t line,
                             const std::string& what) {
  throw DataError(path + ":" + std::to_string(line) + ": " + what);
}

std::string require_string(const json& record, const char* key,
                           const std::string& path, size_t line) {
  auto it = record.find(key);
  if (it == record.end() || !it->is_string()) {
    line_error(path, line, std::string("missing or non-string field '") + key +
                               "'");
  }
  return it->get<std::string>();
}

}  // namespace

Dataset load_manifest(const std::string& path, Corpus corpus) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open manifest: " + path);
  }
  static const std::unordered_set<std::string> known_keys = {
      "id", "text", "image", "label", "text_label", "image_label",
      "annotations"};

  Dataset dataset;
  dataset.corpus = corpus;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (record.is_discarded() || !record.is_object()) {
      line_error(path, lineno, "malformed record");
    }
    for (const auto& [key, value] : record.items()) {
      if (known_keys.count(key) == 0) {
        line_error(path, lineno, "unknown field '" + key + "'");
      }
    }
    Sample sample;
    sample.id = require_string(record, "id", path, lineno);
    sample.text = require_string(record, "text", path, lineno);
    sample.image_ref = require_string(record, "image", path, lineno);
    if (!is_valid_utf8(sample.text)) {
      line_error(path, lineno, "text is not valid UTF-8");
    }
    if (sample.id.empty()) {
      line_error(path, lineno, "empty id");
    }
    if (!seen_ids.insert(sample.id).second) {
      line_error(path, lineno, "duplicate id '" + sample.id + "'");
    }

    const bool has_label = record.contains("label");
    const bool has_pair =
        record.contains("text_label") || record.contains("image_label");
    const bool has_annotations = record.contains("annotations");
    if (has_label + has_pair + has_annotations != 1) {
      line_error(path, lineno,
                 "expected exactly one of label, text_label/image_label, "
                 "annotations");
    }

    std::optional<int> label;
    DropReason reason = DropReason::polarity_conflict;
    try {
      if (has_label) {
        label = parse_label(require_string(record, "label", path, lineno),
                            corpus);
      } else if (has_pair) {
        if (corpus != Corpus::mvsa) {
          line_error(path, lineno,
                     "two-label aggregation applies to sentiment corpora only");
        }
        int t = parse_label(require_string(record, "text_label", path, lineno),
                            corpus);
        int i = parse_label(
            require_string(record, "image_label", path, lineno), corpus);
        label = aggregate_single(t, i);
      } else {
        if (corpus != Corpus::mvsa) {
          line_error(path, lineno,
                     "annotator aggregation applies to sentiment corpora only");
        }
        const json& ann = record["annotations"];
        if (!ann.is_array() || ann.size() != 3) {
          line_error(path, lineno, "annotations must be an array of 3 pairs");
        }
        std::vector<AnnotatorPair> pairs;
        for (const json& pair : ann) {
          if (!pair.is_array() || pair.size() != 2 || !pair[0].is_string() ||
              !pair[1].is_string()) {
            line_error(path, lineno, "annotation pair must be [text, image]");
          }
          pairs.push_back({parse_label(pair[0].get<std::string>(), corpus),
                           parse_label(pair[1].get<std::string>(), corpus)});
        }
        label = aggregate_multiple(pairs, &reason);
      }
    } catch (const DataError& e) {
      // re-raise parse_label failures with location context
      std::string msg = e.what();
      if (msg.find(path) == std::string::npos) {
        line_error(path, lineno, msg);
      }
      throw;
    }

    if (!label) {
      dataset.drops.count(reason);
      continue;
    }
    sample.label = *label;
    dataset.samples.push_back(std::move(sample));
  }
  dataset.rebuild_index();
  return dataset;
}

void save_manifest(const Dataset& dataset, const std::string& path) {
  std::ostringstream out;
  const auto& names = label_names(dataset.corpus);
  for (const Sample& s : dataset.samples) {
    json record;
    record["id"] = s.id;
    record["text"] = s.text_norm.empty() ? s.text : s.text_norm;
    record["image"] = s.image_ref;
    record["label"] = names[static_cast<size_t>(s.label)];
    out << record.dump() << "\n";
  }
  write_text_file(path, out.str());
}

void normalize_dataset(Dataset& dataset, const NormPolicy& policy) {
  policy.validate();
  for (Sample& s : dataset.samples) {
    s.text_norm = normalize(s.text, policy);
  }
}

namespace {

// ids grouped by label, in dataset order.
std::vector<std::vector<std::string>> ids_by_class(const Dataset& dataset) {
  std::vector<std::vector<std::string>> groups(
      static_cast<size_t>(dataset.classes()));
  for (const Sample& s : dataset.samples) {
    if (s.label < 0 || s.label >= dataset.classes()) {
      throw DataError("sample '" + s.id + "' has out-of-range label " +
                      std::to_string(s.label));
    }
    groups[static_cast<size_t>(s.label)].push_back(s.id);
  }
  return groups;
}

}  // namespace

Split make_split(const Dataset& dataset, double val_fraction,
                 double test_fraction, uint64_t seed) {
  if (!(val_fraction > 0.0) || !(test_fraction > 0.0) ||
      !(val_fraction + test_fraction < 1.0)) {
    throw ConfigError("split fractions must be positive and sum below 1");
  }
  Split split;
  Rng rng(seed);
  auto groups = ids_by_class(dataset);
  for (size_t c = 0; c < groups.size(); ++c) {
    auto& ids = groups[c];
    if (ids.empty()) continue;
    rng.shuffle(ids);
    size_t n = ids.size();
    size_t n_test = std::max<size_t>(
        1, static_cast<size_t>(std::llround(test_fraction * static_cast<double>(n))));
    size_t n_val = std::max<size_t>(
        1, static_cast<size_t>(std::llround(val_fraction * static_cast<double>(n))));
    if (n_test + n_val >= n) {
      throw DataError("class '" + label_names(dataset.corpus)[c] +
                      "' has too few samples (" + std::to_string(n) +
                      ") for the requested split");
    }
    split.test_ids.insert(split.test_ids.end(), ids.begin(),
                          ids.begin() + static_cast<long>(n_test));
    split.val_ids.insert(split.val_ids.end(),
                         ids.begin() + static_cast<long>(n_test),
                         ids.begin() + static_cast<long>(n_test + n_val));
    split.train_ids.insert(split.train_ids.end(),
                           ids.begin() + static_cast<long>(n_test + n_val),
                           ids.end());
  }
  return split;
}

FoldPlan make_folds(const Dataset& dataset, int k, uint64_t seed) {
  if (k < 2) {
    throw ConfigError("fold count must be at least 2");
  }
  if (static_cast<size_t>(k) > dataset.samples.size()) {
    throw DataError("fold count " + std::to_string(k) +
                    " exceeds dataset size " +
                    std::to_string(dataset.samples.size()));
  }
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.folds.assign(static_cast<size_t>(k), {});

  Rng rng(seed);
  auto groups = ids_by_class(dataset);
  std::vector<size_t> load(static_cast<size_t>(k), 0);
  for (size_t c = 0; c < groups.size(); ++c) {
    auto& ids = groups[c];
    if (ids.empty()) continue;
    if (ids.size() < static_cast<size_t>(k)) {
      throw DataError("class '" + label_names(dataset.corpus)[c] +
                      "' has fewer samples than folds");
    }
    rng.shuffle(ids);
    size_t q = ids.size() / static_cast<size_t>(k);
    size_t r = ids.size() % static_cast<size_t>(k);
    // The r extra samples go to the currently smallest folds, which keeps
    // overall fold sizes within one of each other.
    std::vector<int> order(static_cast<size_t>(k));
    for (int f = 0; f < k; ++f) order[static_cast<size_t>(f)] = f;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return load[static_cast<size_t>(a)] < load[static_cast<size_t>(b)];
    });
    std::vector<size_t> take(static_cast<size_t>(k), q);
    for (size_t i = 0; i < r; ++i) {
      take[static_cast<size_t>(order[i])] += 1;
    }
    size_t pos = 0;
    for (int f = 0; f < k; ++f) {
      size_t nf = take[static_cast<size_t>(f)];
      auto& fold = plan.folds[static_cast<size_t>(f)];
      fold.insert(fold.end(), ids.begin() + static_cast<long>(pos),
                  ids.begin() + static_cast<long>(pos + nf));
      load[static_cast<size_t>(f)] += nf;
      pos += nf;
    }
  }
  return plan;
}

void save_split(const Split& split, double val_fraction, double test_fraction,
                uint64_t seed, const std::string& path) {
  std::ostringstream out;
  out << "# mmsa-split v1 seed=" << seed << " val=" << val_fraction
      << " test=" << test_fraction << "\n";
  for (const auto& id : split.train_ids) out << "train " << id << "\n";
  for (const auto& id : split.val_ids) out << "val " << id << "\n";
  for (const auto& id : split.test_ids) out << "test " << id << "\n";
  write_text_file(path, out.str());
}

Split load_split(const std::string& path) {
  std::istringstream in(read_text_file(path));
  Split split;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto space = line.find(' ');
    if (space == std::string::npos) {
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected '<set> <id>'");
    }
    std::string set = line.substr(0, space);
    std::string id = line.substr(space + 1);
    if (set == "train") {
      split.train_ids.push_back(id);
    } else if (set == "val") {
      split.val_ids.push_back(id);
    } else if (set == "test") {
      split.test_ids.push_back(id);
    } else {
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": unknown set '" + set + "'");
    }
  }
  return split;
}

void save_folds(const FoldPlan& plan, const std::string& path) {
  std::ostringstream out;
  out << "# mmsa-folds v1 k=" << plan.k << " seed=" << plan.seed << "\n";
  for (size_t f = 0; f < plan.folds.size(); ++f) {
    for (const auto& id : plan.folds[f]) {
      out << f << " " << id << "\n";
    }
  }
  write_text_file(path, out.str());
}

FoldPlan load_folds(const std::string& path) {
  std::istringstream in(read_text_file(path));
  FoldPlan plan;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto kpos = line.find("k=");
      auto spos = line.find("seed=");
      if (kpos != std::string::npos) {
        plan.k = std::stoi(line.substr(kpos + 2));
      }
      if (spos != std::string::npos) {
        plan.seed = std::stoull(line.substr(spos + 5));
      }
      plan.folds.assign(static_cast<size_t>(std::max(plan.k, 0)), {});
      continue;
    }
    auto space = line.find(' ');
    if (space == std::string::npos) {
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected '<fold> <id>'");
    }
    size_t f = std::stoul(line.substr(0, space));
    if (f >= plan.folds.size()) {
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": fold index out of range");
    }
    plan.folds[f].push_back(line.substr(space + 1));
  }
  return plan;
}

DatasetStats compute_stats(const Dataset& dataset,
                           const std::vector<FeatureBundle>& bundles) {
  std::unordered_map<std::string, const FeatureBundle*> by_id;
  by_id.reserve(bundles.size());
  for (const auto& b : bundles) {
    by_id[b.sample_id] = &b;
  }

  const int C = dataset.classes();
  std::vector<size_t> count(static_cast<size_t>(C), 0);
  std::vector<size_t> face(static_cast<size_t>(C), 0);
  std::vector<size_t> object(static_cast<size_t>(C), 0);
  std::vector<size_t> ocr(static_cast<size_t>(C), 0);
  for (const Sample& s : dataset.samples) {
    auto it = by_id.find(s.id);
    if (it == by_id.end()) {
      throw DataError("missing feature bundle for sample '" + s.id + "'");
    }
    const FeatureBundle& b = *it->second;
    size_t c = static_cast<size_t>(s.label);
    ++count[c];
    if (b.record(Branch::face).present) ++face[c];
    if (b.record(Branch::object).present) ++object[c];
    if (b.record(Branch::ocr).present) ++ocr[c];
  }

  auto pct = [](size_t part, size_t total) {
    return total == 0 ? 0.0
                      : 100.0 * static_cast<double>(part) /
                            static_cast<double>(total);
  };

  DatasetStats stats;
  size_t total = 0, face_total = 0, object_total = 0, ocr_total = 0;
  const auto& names = label_names(dataset.corpus);
  for (int c = 0; c < C; ++c) {
    size_t ci = static_cast<size_t>(c);
    total += count[ci];
    face_total += face[ci];
    object_total += object[ci];
    ocr_total += ocr[ci];
    if (count[ci] == 0) continue;  // zero-support class stays out of the table
    stats.per_class.push_back({names[ci], count[ci], pct(face[ci], count[ci]),
                               pct(object[ci], count[ci]),
                               pct(ocr[ci], count[ci])});
  }
  stats.overall = {"all", total, pct(face_total, total),
                   pct(object_total, total), pct(ocr_total, total)};
  return stats;
}

}  // namespace mmsa
