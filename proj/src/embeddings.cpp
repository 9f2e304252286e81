// SPDX-License-Identifier: Apache-2.0
#include "embeddings.hpp"

#include <charconv>
#include <fstream>
#include <unordered_set>

#include "io_util.hpp"
#include "log.hpp"
#include "tokenizer.hpp"

namespace polysearch {

EmbeddingTable::EmbeddingTable(std::string lang, Eigen::Index dim)
    : lang_(std::move(lang)), space_(lang_), dim_(dim), vectors_(dim, 0) {
  if (dim <= 0) throw ValidationError("embedding dimension must be positive");
}

void EmbeddingTable::add(std::string_view token, const Vector& values) {
  if (values.size() != dim_)
    throw ValidationError("token '" + std::string(token) + "' has " + std::to_string(values.size()) +
                          " values, expected " + std::to_string(dim_));
  if (!values.allFinite()) throw ValidationError("token '" + std::string(token) + "' has non-finite values");
  std::string key = to_lower_utf8(token);
  if (key.empty()) throw ValidationError("empty token");
  if (index_.contains(key)) throw ValidationError("duplicate token '" + key + "'");
  const Eigen::Index row = size();
  index_.emplace(key, row);
  tokens_.push_back(std::move(key));
  vectors_.conservativeResize(Eigen::NoChange, row + 1);
  vectors_.col(row) = values;
}

std::optional<Eigen::Index> EmbeddingTable::row_of(std::string_view token) const {
  auto it = index_.find(to_lower_utf8(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::optional<Vector> EmbeddingTable::lookup(std::string_view token) const {
  if (auto r = row_of(token)) return Vector(vectors_.col(*r));
  return std::nullopt;
}

double orthogonality_error(const Matrix& w) {
  if (w.rows() != w.cols()) return std::numeric_limits<double>::infinity();
  const Matrix g = w.transpose() * w - Matrix::Identity(w.rows(), w.cols());
  return g.cwiseAbs().maxCoeff();
}

AlignmentMap::AlignmentMap(std::string source_lang, std::string target_lang, Matrix w)
    : source_(std::move(source_lang)), target_(std::move(target_lang)), w_(std::move(w)) {
  if (w_.rows() == 0 || w_.rows() != w_.cols()) throw ValidationError("alignment matrix must be square and non-empty");
  if (!w_.allFinite()) throw ValidationError("alignment matrix has non-finite entries");
  const double err = orthogonality_error(w_);
  if (err > kOrthogonalityTolerance)
    throw ValidationError("alignment matrix is not orthogonal (max |W^T W - I| = " + std::to_string(err) + ")");
}

AlignmentMap AlignmentMap::identity(const std::string& lang, Eigen::Index dim) {
  return AlignmentMap(lang, lang, Matrix::Identity(dim, dim));
}

nlohmann::json AlignmentMap::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < w_.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < w_.cols(); ++c) row.push_back(w_(r, c));
    rows.push_back(std::move(row));
  }
  return {{"source", source_}, {"target", target_}, {"dim", w_.rows()}, {"rows", std::move(rows)}};
}

AlignmentMap AlignmentMap::from_json(const nlohmann::json& j) {
  try {
    const auto dim = j.at("dim").get<Eigen::Index>();
    const auto& rows = j.at("rows");
    if (dim <= 0 || static_cast<Eigen::Index>(rows.size()) != dim)
      throw ValidationError("alignment 'rows' count does not match 'dim'");
    Matrix w(dim, dim);
    for (Eigen::Index r = 0; r < dim; ++r) {
      const auto& row = rows.at(r);
      if (static_cast<Eigen::Index>(row.size()) != dim)
        throw ValidationError("alignment row " + std::to_string(r) + " has wrong length");
      for (Eigen::Index c = 0; c < dim; ++c) w(r, c) = row.at(c).get<double>();
    }
    return AlignmentMap(j.at("source").get<std::string>(), j.at("target").get<std::string>(), std::move(w));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed alignment JSON: ") + e.what());
  }
}

void AlignmentMap::save(const std::filesystem::path& path) const { write_text_file(path, to_json().dump() + "\n"); }

AlignmentMap AlignmentMap::load(const std::filesystem::path& path) { return from_json(read_json_file(path)); }

SeedDictionary load_dictionary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dictionary " + path.string());
  SeedDictionary dict;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size())
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": expected 'source<TAB>target'");
    dict.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  if (dict.empty()) throw ValidationError("dictionary " + path.string() + " is empty");
  return dict;
}

void save_dictionary(const SeedDictionary& dict, const std::filesystem::path& path) {
  std::string out;
  for (const auto& [s, t] : dict) out += s + "\t" + t + "\n";
  write_text_file(path, out);
}

namespace {

std::string line_error(const std::filesystem::path& path, std::size_t line_no, const std::string& what) {
  return path.string() + ":" + std::to_string(line_no) + ": " + what;
}

}  // namespace

EmbeddingTable load_table(const std::filesystem::path& path, const std::string& lang) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open embedding table " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw ValidationError(line_error(path, 1, "missing 'V E' header"));
  if (!line.empty() && line.back() == '\r') line.pop_back();
  long long vocab = -1;
  long long dim = -1;
  {
    const char* p = line.data();
    const char* end = p + line.size();
    auto r1 = std::from_chars(p, end, vocab);
    if (r1.ec != std::errc{} || r1.ptr == end || *r1.ptr != ' ')
      throw ValidationError(line_error(path, 1, "malformed header '" + line + "'"));
    auto r2 = std::from_chars(r1.ptr + 1, end, dim);
    if (r2.ec != std::errc{} || r2.ptr != end || vocab < 0 || dim <= 0)
      throw ValidationError(line_error(path, 1, "malformed header '" + line + "'"));
  }

  EmbeddingTable table(lang, dim);
  Vector values(dim);
  std::unordered_set<std::string> raw_seen;
  std::size_t line_no = 1;
  long long read = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (read == vocab) throw ValidationError(line_error(path, line_no, "more rows than the header's V"));
    const auto sp = line.find(' ');
    if (sp == std::string::npos || sp == 0) throw ValidationError(line_error(path, line_no, "missing token or values"));
    const std::string_view token(line.data(), sp);
    const char* p = line.data() + sp;
    const char* end = line.data() + line.size();
    Eigen::Index n = 0;
    while (p < end) {
      while (p < end && *p == ' ') ++p;
      if (p == end) break;
      double v = 0.0;
      auto r = std::from_chars(p, end, v);
      if (r.ec != std::errc{} || (r.ptr != end && *r.ptr != ' '))
        throw ValidationError(line_error(path, line_no, "unparseable value for token '" + std::string(token) + "'"));
      if (n == dim)
        throw ValidationError(line_error(path, line_no, "dimension mismatch: more than " + std::to_string(dim) +
                                                            " values for token '" + std::string(token) + "'"));
      values[n++] = v;
      p = r.ptr;
    }
    if (n != dim)
      throw ValidationError(line_error(path, line_no, "dimension mismatch: " + std::to_string(n) + " values, expected " +
                                                          std::to_string(dim)));
    if (!raw_seen.emplace(token).second)
      throw ValidationError(line_error(path, line_no, "duplicate token '" + std::string(token) + "'"));
    const std::string key = to_lower_utf8(token);
    if (table.row_of(key)) {
      log().warn("{}:{}: '{}' collides with an earlier token after lowercasing; keeping the first", path.string(),
                 line_no, std::string(token));
      ++read;
      continue;
    }
    try {
      table.add(key, values);
    } catch (const ValidationError& e) {
      throw ValidationError(line_error(path, line_no, e.what()));
    }
    ++read;
  }
  if (read != vocab)
    throw ValidationError(path.string() + ": header declares " + std::to_string(vocab) + " rows but file has " +
                          std::to_string(read));
  return table;
}

void save_table(const EmbeddingTable& table, const std::filesystem::path& path) {
  std::string out = std::to_string(table.size()) + " " + std::to_string(table.dim()) + "\n";
  char buf[32];
  for (Eigen::Index i = 0; i < table.size(); ++i) {
    out += table.tokens()[static_cast<std::size_t>(i)];
    for (Eigen::Index k = 0; k < table.dim(); ++k) {
      auto r = std::to_chars(buf, buf + sizeof(buf), table.vectors()(k, i));
      out.push_back(' ');
      out.append(buf, r.ptr);
    }
    out.push_back('\n');
  }
  write_text_file(path, out);
}

AlignmentMap procrustes_align(const EmbeddingTable& source, const EmbeddingTable& target, const SeedDictionary& dict) {
  if (source.dim() != target.dim())
    throw ValidationError("dimension mismatch: source E=" + std::to_string(source.dim()) +
                          ", target E=" + std::to_string(target.dim()));
  if (dict.empty()) throw ValidationError("seed dictionary is empty");

  std::vector<std::pair<Eigen::Index, Eigen::Index>> rows;
  rows.reserve(dict.size());
  for (const auto& [s, t] : dict) {
    auto rs = source.row_of(s);
    auto rt = target.row_of(t);
    if (!rs || !rt) {
      log().warn("dropping dictionary pair ({}, {}): {} is out of vocabulary", s, t, !rs ? s : t);
      continue;
    }
    rows.emplace_back(*rs, *rt);
  }
  if (rows.empty()) throw ValidationError("no dictionary pair is in vocabulary on both sides");
  const Eigen::Index dim = source.dim();
  if (static_cast<Eigen::Index>(rows.size()) < dim)
    log().warn("only {} dictionary pairs for E={}; the alignment is under-determined", rows.size(), dim);

  // Y X^T accumulated as a sum of outer products.
  Matrix cross = Matrix::Zero(dim, dim);
  for (const auto& [rs, rt] : rows) cross.noalias() += target.vectors().col(rt) * source.vectors().col(rs).transpose();

  Eigen::JacobiSVD<Matrix> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix w = svd.matrixU() * svd.matrixV().transpose();
  return AlignmentMap(source.lang(), target.lang(), std::move(w));
}

AlignmentMap compose_via_pivot(const AlignmentMap& a_to_pivot, const AlignmentMap& b_to_pivot) {
  if (a_to_pivot.target_lang() != b_to_pivot.target_lang())
    throw ValidationError("pivot mismatch: '" + a_to_pivot.target_lang() + "' vs '" + b_to_pivot.target_lang() + "'");
  if (a_to_pivot.dim() != b_to_pivot.dim()) throw ValidationError("dimension mismatch between alignment maps");
  return AlignmentMap(a_to_pivot.source_lang(), b_to_pivot.source_lang(),
                      b_to_pivot.matrix().transpose() * a_to_pivot.matrix());
}

EmbeddingTable apply_alignment(const AlignmentMap& map, const EmbeddingTable& table) {
  if (map.source_lang() != table.space())
    throw ValidationError("alignment maps '" + map.source_lang() + "' but table lives in '" + table.space() + "'");
  if (map.dim() != table.dim()) throw ValidationError("dimension mismatch between alignment map and table");
  EmbeddingTable out = table;
  out.vectors_ = map.matrix() * table.vectors();
  out.space_ = map.target_lang();
  return out;
}

void WordSpace::add(EmbeddingTable aligned) {
  if (aligned.space() != pivot_)
    throw ValidationError("table for '" + aligned.lang() + "' lives in '" + aligned.space() + "', not pivot '" + pivot_ +
                          "'");
  if (dim_ == 0) dim_ = aligned.dim();
  if (aligned.dim() != dim_) throw ValidationError("word space dimension mismatch for '" + aligned.lang() + "'");
  const std::string lang = aligned.lang();
  if (tables_.contains(lang)) throw ConflictError("language '" + lang + "' already in the word space");
  tables_.emplace(lang, std::move(aligned));
}

WordSpace WordSpace::load(const std::filesystem::path& path) {
  const nlohmann::json j = read_json_file(path);
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) { return std::filesystem::path(p).is_absolute() ? std::filesystem::path(p) : base / p; };
  try {
    WordSpace ws(j.at("pivot").get<std::string>());
    std::optional<EmbeddingTable> pivot_table;
    for (const auto& entry : j.at("languages")) {
      if (entry.at("lang").get<std::string>() == ws.pivot_)
        pivot_table = load_table(resolve(entry.at("table").get<std::string>()), ws.pivot_);
    }
    if (!pivot_table) throw ValidationError("word space has no table for pivot '" + ws.pivot_ + "'");

    for (const auto& entry : j.at("languages")) {
      const auto lang = entry.at("lang").get<std::string>();
      if (lang == ws.pivot_) {
        ws.add(*pivot_table);
        continue;
      }
      EmbeddingTable table = load_table(resolve(entry.at("table").get<std::string>()), lang);
      std::optional<AlignmentMap> map;
      if (entry.contains("alignment")) {
        map = AlignmentMap::load(resolve(entry.at("alignment").get<std::string>()));
      } else if (entry.contains("dictionary")) {
        map = procrustes_align(table, *pivot_table, load_dictionary(resolve(entry.at("dictionary").get<std::string>())));
      } else {
        throw ValidationError("language '" + lang + "' needs an 'alignment' or 'dictionary' entry");
      }
      if (map->target_lang() != ws.pivot_)
        throw ValidationError("alignment for '" + lang + "' targets '" + map->target_lang() + "', not the pivot");
      ws.add(apply_alignment(*map, table));
    }
    return ws;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed word space " + path.string() + ": " + e.what());
  }
}

bool WordSpace::has_language(std::string_view lang) const { return tables_.find(lang) != tables_.end(); }

std::vector<std::string> WordSpace::languages() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : tables_) out.push_back(k);
  return out;
}

const EmbeddingTable& WordSpace::table(std::string_view lang) const {
  auto it = tables_.find(lang);
  if (it == tables_.end()) throw NotFoundError("language '" + std::string(lang) + "' is not loaded");
  return it->second;
}

std::optional<Vector> WordSpace::lookup(std::string_view lang, std::string_view token) const {
  return table(lang).lookup(token);
}

}  // namespace polysearch
