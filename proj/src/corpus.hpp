// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "embeddings.hpp"

namespace polysearch {

struct Caption {
  std::string lang;
  std::string text;
};

struct ManifestRecord {
  std::string image_id;
  std::filesystem::path feature_path;  // absolute after loading
  std::vector<Caption> captions;
};

struct Manifest {
  std::string split;  // "train", "val", "test" or empty when untagged
  std::vector<ManifestRecord> records;

  std::size_t caption_count() const;
};

/// JSONL, one {"image_id", "feature_path", "captions": [{"lang", "text"}],
/// optional "split"} object per line. Relative feature paths resolve against
/// the manifest's directory. Duplicate ids, empty caption lists and (when
/// `check_files`) missing feature files are errors.
Manifest load_manifest(const std::filesystem::path& path, bool check_files = true);
/// Feature paths are written relative to `path`'s directory when possible.
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// One (image, caption) pair, addressed by record and caption index.
struct PairRef {
  std::size_t record = 0;
  std::size_t caption = 0;
  friend auto operator<=>(const PairRef&, const PairRef&) = default;
};

struct PairBatch {
  std::vector<PairRef> pairs;
};

/// Every (image, caption) pair whose language is in `languages`, in manifest
/// order. Throws ValidationError when none match.
std::vector<PairRef> filter_pairs(const Manifest& manifest, const std::vector<std::string>& languages);

/// Single-consumer stream over one epoch: a seed-determined shuffle of the
/// filtered pairs cut into batches of `batch_size`. A batch with fewer than
/// two distinct image ids is merged into its predecessor (or successor, for
/// the first batch).
class BatchStream {
 public:
  BatchStream(const Manifest& manifest, std::size_t batch_size, std::uint64_t seed,
              const std::vector<std::string>& languages);

  std::optional<PairBatch> next();
  std::size_t batch_count() const { return batches_.size(); }

 private:
  std::vector<PairBatch> batches_;
  std::size_t cursor_ = 0;
};

inline BatchStream make_batches(const Manifest& manifest, std::size_t batch_size, std::uint64_t seed,
                                const std::vector<std::string>& languages) {
  return BatchStream(manifest, batch_size, seed, languages);
}

/// Parameters of the synthetic desk-scale dataset.
struct ToySpec {
  int concepts = 20;
  std::vector<std::string> languages = {"en", "fr"};  // first is the pivot
  std::vector<std::string> zero_shot_languages;       // test captions only
  int images_per_concept = 25;
  int test_images_per_concept = 0;
  int captions_per_image = 1;  // per language
  int channels = 8;
  int height = 4;
  int width = 4;
  double noise = 0.05;
  int embedding_dim = 32;
  int filler_words = 50;
  std::uint64_t seed = 7;

  static ToySpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

struct ToyDataset {
  Manifest train;
  Manifest test;  // empty when test_images_per_concept == 0
  std::map<std::string, EmbeddingTable> tables;
  std::map<std::string, SeedDictionary> dictionaries;  // lang -> pivot
  std::map<std::string, Matrix> rotations;             // table = rotation * base
  std::vector<std::vector<std::string>> concept_words;  // [lang index][concept]
  std::filesystem::path wordspace_path;
};

/// Generates the toy corpus into `out_dir`: train.jsonl, test.jsonl,
/// features/*.fmap, <lang>.vec, dict.<lang>-<pivot>.tsv,
/// align.<lang>-<pivot>.json and wordspace.json.
///
/// Image = prototype(concept) + N(0, noise^2) per value; prototypes are
/// redrawn until every pair has cosine < 0.5. Each language's table is a
/// random rotation of one shared base table (the pivot's rotation is the
/// identity). Captions hold 3-6 tokens: the concept word plus fillers.
ToyDataset make_toy_dataset(const ToySpec& spec, const std::filesystem::path& out_dir);

/// Concept index of a toy image id ("c07-train-003" -> 7), if it parses.
std::optional<int> toy_concept_of(const std::string& image_id);

}  // namespace polysearch
