#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvgf/error.hpp"
#include "pvgf/rng.hpp"
#include "pvgf/tokenize.hpp"
#include "pvgf/util.hpp"

namespace pvgf {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// vocabulary

// Token <-> id bijection with four reserved ids at the front.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumReserved = 4;

  Vocabulary() = default;

  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i)
      index_[tokens_[i]] = kNumReserved + static_cast<int>(i);
  }

  int size() const { return kNumReserved + static_cast<int>(tokens_.size()); }

  int id_of(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& token) const { return index_.count(token) > 0; }

  std::string token_of(int id) const {
    if (id == kPad) return "<pad>";
    if (id == kBos) return "<bos>";
    if (id == kEos) return "<eos>";
    if (id == kUnk) return "<unk>";
    if (id < 0 || id >= size()) throw DataError("token id out of range: " + std::to_string(id));
    return tokens_[static_cast<std::size_t>(id - kNumReserved)];
  }

  // Non-reserved tokens in id order.
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
};

// Tokens with corpus frequency >= min_count get ids in descending frequency
// order, ties broken lexicographically; the rest map to UNK.
inline Vocabulary build_vocab(const std::vector<std::string>& captions, int min_count) {
  if (min_count < 1) throw ConfigError("build_vocab: min_count must be >= 1");
  if (captions.empty()) throw ConfigError("build_vocab: empty caption corpus");
  std::map<std::string, int> freq;
  for (const auto& c : captions)
    for (const auto& t : tokenize(c)) ++freq[t];
  std::vector<std::pair<std::string, int>> entries(freq.begin(), freq.end());
  std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> kept;
  for (const auto& [tok, n] : entries)
    if (n >= min_count) kept.push_back(tok);
  return Vocabulary(std::move(kept));
}

inline std::vector<int> encode_tokens(const std::vector<std::string>& tokens, const Vocabulary& vocab) {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab.id_of(t));
  return ids;
}

// BOS + tokens + EOS, truncated so EOS is always retained, padded to max_len.
inline std::vector<int> encode_caption(const std::string& text, const Vocabulary& vocab, int max_len) {
  if (max_len < 3) throw ConfigError("encode_caption: max_len must be >= 3");
  std::vector<int> ids;
  ids.push_back(Vocabulary::kBos);
  for (const auto& t : tokenize(text)) {
    if (static_cast<int>(ids.size()) == max_len - 1) break;
    ids.push_back(vocab.id_of(t));
  }
  ids.push_back(Vocabulary::kEos);
  while (static_cast<int>(ids.size()) < max_len) ids.push_back(Vocabulary::kPad);
  return ids;
}

inline std::string decode_tokens(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::vector<std::string> words;
  for (int id : ids) {
    if (id == Vocabulary::kPad || id == Vocabulary::kBos || id == Vocabulary::kEos) continue;
    words.push_back(vocab.token_of(id));
  }
  return join_tokens(words);
}

// ---------------------------------------------------------------------------
// samples and manifests

struct CaptionSample {
  std::string image_path;  // relative to the manifest directory
  std::string caption;
  std::string category;
  std::vector<std::string> lineage;  // applied transform names, empty for originals
};

struct PromptCatalog {
  std::vector<std::string> labels;       // sorted, unique
  std::vector<std::string> label_texts;  // subject/action text per label

  int size() const { return static_cast<int>(labels.size()); }

  int index_of(const std::string& label) const {
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == label) return static_cast<int>(i);
    throw DataError("category not in catalog: " + label);
  }
};

struct Dataset {
  fs::path base_dir;  // directory every image path is relative to
  std::vector<CaptionSample> samples;

  std::size_t size() const { return samples.size(); }
  fs::path image_file(const CaptionSample& s) const { return base_dir / s.image_path; }
};

// The subject/action text spliced into the prompt template for a label.
inline std::string default_label_text(const std::string& label) { return "a " + label; }

inline PromptCatalog catalog_from_samples(const std::vector<CaptionSample>& samples) {
  std::vector<std::string> labels;
  for (const auto& s : samples)
    if (std::find(labels.begin(), labels.end(), s.category) == labels.end()) labels.push_back(s.category);
  std::sort(labels.begin(), labels.end());
  PromptCatalog cat;
  cat.labels = labels;
  for (const auto& l : labels) cat.label_texts.push_back(default_label_text(l));
  return cat;
}

// JSONL manifest: one {image, caption, category, lineage?} object per line.
inline Dataset load_manifest(const fs::path& manifest_path) {
  std::ifstream f(manifest_path);
  if (!f) throw DataError("cannot open manifest: " + manifest_path.string());
  Dataset ds;
  ds.base_dir = manifest_path.parent_path();
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("manifest line " + std::to_string(lineno) + ": invalid JSON (" + e.what() + ")");
    }
    CaptionSample s;
    try {
      for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        if (key == "image")
          s.image_path = it.value().get<std::string>();
        else if (key == "caption")
          s.caption = it.value().get<std::string>();
        else if (key == "category")
          s.category = it.value().get<std::string>();
        else if (key == "lineage")
          s.lineage = it.value().get<std::vector<std::string>>();
        else
          throw DataError("manifest line " + std::to_string(lineno) + ": unknown field '" + key + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
    if (s.image_path.empty()) throw DataError("manifest line " + std::to_string(lineno) + ": missing image");
    if (s.caption.empty()) throw DataError("manifest line " + std::to_string(lineno) + ": empty caption");
    if (s.category.empty()) throw DataError("manifest line " + std::to_string(lineno) + ": missing category");
    if (!fs::exists(ds.base_dir / s.image_path))
      throw DataError("manifest line " + std::to_string(lineno) + ": image file not found: " + s.image_path);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

inline void write_manifest(const fs::path& manifest_path, const Dataset& ds) {
  std::ofstream f(manifest_path, std::ios::trunc);
  if (!f) throw DataError("cannot write manifest: " + manifest_path.string());
  for (const auto& s : ds.samples) {
    nlohmann::ordered_json j;
    j["image"] = s.image_path;
    j["caption"] = s.caption;
    j["category"] = s.category;
    if (!s.lineage.empty()) j["lineage"] = s.lineage;
    f << j.dump() << "\n";
  }
}

// ---------------------------------------------------------------------------
// train/val/test split

// Augmented copies are named "<origin>__aug<k>_<transform>.png"; the part
// before "__aug" identifies the original image, so a whole augmentation
// family lands in one split.
inline std::string origin_stem(const std::string& image_path) {
  std::string stem = fs::path(image_path).stem().string();
  const auto pos = stem.find("__aug");
  if (pos != std::string::npos) stem = stem.substr(0, pos);
  return stem;
}

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

// Deterministic split by seeded shuffle at the original-image level.
inline SplitIndices split_dataset(const Dataset& ds, double train_frac, double val_frac, std::uint64_t seed) {
  if (train_frac < 0 || val_frac < 0 || train_frac + val_frac > 1.0 + 1e-12)
    throw ConfigError("split_dataset: fractions must be nonnegative and sum to at most 1");
  std::vector<std::string> origins;
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const std::string o = origin_stem(ds.samples[i].image_path);
    if (!groups.count(o)) origins.push_back(o);
    groups[o].push_back(i);
  }
  Rng rng(mix_seed(seed, 0x53504c4954ULL));  // "SPLIT" stream
  rng.shuffle(origins);
  const std::size_t n = origins.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(n)));
  SplitIndices out;
  for (std::size_t i = 0; i < n; ++i) {
    auto& bucket = i < n_train ? out.train : (i < n_train + n_val ? out.val : out.test);
    for (std::size_t idx : groups[origins[i]]) bucket.push_back(idx);
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

}  // namespace pvgf
