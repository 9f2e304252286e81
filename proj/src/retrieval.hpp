// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "common.hpp"

namespace polysearch {

enum class Modality { kImage, kCaption };

std::string to_string(Modality m);

struct IndexItem {
  std::string id;
  Modality modality = Modality::kImage;
  JointVector vector;
  std::string lang;          // captions only
  std::string text;          // captions only
  std::string image_id;      // captions: the image it describes
  std::string feature_path;  // images: where the feature map lives, if known
};

struct SearchFilter {
  std::optional<Modality> modality;
  std::optional<std::string> lang;

  bool accepts(const IndexItem& item) const {
    return (!modality || item.modality == *modality) && (!lang || item.lang == *lang);
  }
};

struct SearchHit {
  std::size_t item = 0;  // position in the index
  std::string id;
  double score = 0.0;
};

/// Exact inner-product index over unit-norm vectors.
class RetrievalIndex {
 public:
  RetrievalIndex() = default;

  /// Throws ConflictError on a duplicate id, ValidationError when the vector
  /// is off unit norm by more than 1e-4 or has the wrong dimension.
  void add(IndexItem item);

  std::size_t size() const { return items_.size(); }
  Eigen::Index dim() const { return dim_; }
  const std::vector<IndexItem>& items() const { return items_; }
  const IndexItem* find(const std::string& id) const;
  std::size_t count(Modality m) const;

  /// Top-k by dot product among items passing `filter`, descending score,
  /// ties broken by ascending id. Throws NotFoundError when nothing passes
  /// the filter and ValidationError when k < 1.
  std::vector<SearchHit> search(const JointVector& query, std::size_t k, const SearchFilter& filter = {}) const;

  /// One file: a JSON header line {"count", "dim"}, count*dim little-endian
  /// float32 values, then one JSON metadata line per item.
  void save(const std::filesystem::path& path) const;
  static RetrievalIndex load(const std::filesystem::path& path);

 private:
  Eigen::Index dim_ = 0;
  std::vector<IndexItem> items_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

RetrievalIndex build_index(std::vector<IndexItem> items);

struct RecallCell {
  double r1 = 0.0;
  double r5 = 0.0;
  double r10 = 0.0;
  std::size_t queries = 0;
};

struct RecallRow {
  RecallCell caption_retrieval;  // image query -> captions
  RecallCell image_retrieval;    // caption query -> images
};

/// Recall@{1,5,10} per language plus the pooled "all" row.
struct RecallReport {
  std::map<std::string, RecallRow> rows;
  std::size_t eval_batch_size = 0;
  std::size_t batches = 0;

  nlohmann::json to_json() const;
  /// Aligned plain-text table, percentages with two decimals.
  std::string to_table() const;
};

/// Images are cut into consecutive evaluation batches of `eval_batch_size`;
/// each caption joins its image's batch. Within a batch, image retrieval
/// ranks the batch's images for every caption, and caption retrieval ranks
/// the batch's captions for every image, counting a hit when any true
/// caption lands within k. Language rows restrict the captions to that
/// language; "all" pools every language. Hits are pooled over batches.
///
/// `captions` items must carry image_id. Throws ValidationError when the
/// ground truth is empty or names an image that is not in `images`.
RecallReport evaluate_recall(const RetrievalIndex& images, const RetrievalIndex& captions,
                             std::size_t eval_batch_size = 1000);

}  // namespace polysearch
