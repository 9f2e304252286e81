// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "common.hpp"

namespace polysearch {

class AlignmentMap;

/// Per-language word vectors. Tokens are lowercased on insertion.
///
/// `lang` is the language of the tokens; `space` names the vector space the
/// rows live in. They coincide until an alignment is applied.
class EmbeddingTable {
 public:
  EmbeddingTable(std::string lang, Eigen::Index dim);

  /// Appends a row. Throws ValidationError on a duplicate token, wrong
  /// dimension or non-finite values.
  void add(std::string_view token, const Vector& values);

  std::optional<Vector> lookup(std::string_view token) const;
  std::optional<Eigen::Index> row_of(std::string_view token) const;

  const std::string& lang() const { return lang_; }
  const std::string& space() const { return space_; }
  Eigen::Index dim() const { return dim_; }
  Eigen::Index size() const { return static_cast<Eigen::Index>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  /// Row `i` as a column vector.
  Vector row(Eigen::Index i) const { return vectors_.col(i); }
  /// E x V, one column per token.
  const Matrix& vectors() const { return vectors_; }

 private:
  friend EmbeddingTable apply_alignment(const AlignmentMap& map, const EmbeddingTable& table);

  std::string lang_;
  std::string space_;
  Eigen::Index dim_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, Eigen::Index> index_;
  Matrix vectors_;
};

/// Orthogonal E x E map from one language's word space into another's.
class AlignmentMap {
 public:
  static constexpr double kOrthogonalityTolerance = 1e-8;

  /// Throws ValidationError unless max|W^T W - I| <= 1e-8.
  AlignmentMap(std::string source_lang, std::string target_lang, Matrix w);

  static AlignmentMap identity(const std::string& lang, Eigen::Index dim);

  const std::string& source_lang() const { return source_; }
  const std::string& target_lang() const { return target_; }
  const Matrix& matrix() const { return w_; }
  Eigen::Index dim() const { return w_.rows(); }
  Vector apply(const Vector& x) const { return w_ * x; }

  nlohmann::json to_json() const;
  static AlignmentMap from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static AlignmentMap load(const std::filesystem::path& path);

 private:
  std::string source_;
  std::string target_;
  Matrix w_;
};

/// max_ij |W^T W - I|_ij
double orthogonality_error(const Matrix& w);

using SeedDictionary = std::vector<std::pair<std::string, std::string>>;

/// Reads "source<TAB>target" lines; blank lines and '#' comments ignored.
SeedDictionary load_dictionary(const std::filesystem::path& path);
void save_dictionary(const SeedDictionary& dict, const std::filesystem::path& path);

/// Word2vec text format: "V E" header, then "token v1 ... vE" per line.
EmbeddingTable load_table(const std::filesystem::path& path, const std::string& lang);
void save_table(const EmbeddingTable& table, const std::filesystem::path& path);

/// Supervised orthogonal Procrustes: W = U V^T for U S V^T = svd(Y X^T),
/// X/Y holding the dictionary's source/target rows as columns. Pairs with an
/// OOV side are dropped with a warning.
AlignmentMap procrustes_align(const EmbeddingTable& source, const EmbeddingTable& target,
                              const SeedDictionary& dict);

/// a -> pivot and b -> pivot give a -> b as W_b^T W_a.
AlignmentMap compose_via_pivot(const AlignmentMap& a_to_pivot, const AlignmentMap& b_to_pivot);

/// Maps every row through `map`; tokens are unchanged and the table's space
/// becomes map.target_lang().
EmbeddingTable apply_alignment(const AlignmentMap& map, const EmbeddingTable& table);

/// Languages whose tables have been aligned into one shared pivot space.
class WordSpace {
 public:
  WordSpace() = default;
  explicit WordSpace(std::string pivot) : pivot_(std::move(pivot)) {}

  /// Adds a table already living in the pivot space.
  void add(EmbeddingTable aligned);

  /// Reads a word-space manifest:
  ///   {"pivot": "en", "languages": [{"lang": "en", "table": "en.vec"},
  ///     {"lang": "fr", "table": "fr.vec", "alignment": "fr-en.json"},
  ///     {"lang": "de", "table": "de.vec", "dictionary": "de-en.tsv"}]}
  /// Relative paths resolve against the manifest's directory. A dictionary
  /// entry is aligned against the pivot table with Procrustes at load time.
  static WordSpace load(const std::filesystem::path& path);

  const std::string& pivot() const { return pivot_; }
  Eigen::Index dim() const { return dim_; }
  bool has_language(std::string_view lang) const;
  std::vector<std::string> languages() const;
  const EmbeddingTable& table(std::string_view lang) const;

  /// Aligned vector for `token` in `lang`, or nullopt when OOV.
  std::optional<Vector> lookup(std::string_view lang, std::string_view token) const;

 private:
  std::string pivot_;
  Eigen::Index dim_ = 0;
  std::map<std::string, EmbeddingTable, std::less<>> tables_;
};

}  // namespace polysearch
