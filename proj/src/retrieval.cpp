// SPDX-License-Identifier: Apache-2.0
#include "retrieval.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "io_util.hpp"

namespace polysearch {

std::string to_string(Modality m) { return m == Modality::kImage ? "image" : "caption"; }

namespace {

Modality modality_from_string(const std::string& s) {
  if (s == "image") return Modality::kImage;
  if (s == "caption") return Modality::kCaption;
  throw ValidationError("unknown modality '" + s + "'");
}

// Descending score, then ascending id.
bool ranks_before(double score_a, const std::string& id_a, double score_b, const std::string& id_b) {
  return score_a > score_b || (score_a == score_b && id_a < id_b);
}

}  // namespace

void RetrievalIndex::add(IndexItem item) {
  if (item.id.empty()) throw ValidationError("index item id must not be empty");
  if (by_id_.contains(item.id)) throw ConflictError("id '" + item.id + "' is already indexed");
  if (item.vector.dim() == 0) throw ValidationError("index item '" + item.id + "' has no vector");
  if (dim_ != 0 && item.vector.dim() != dim_)
    throw ValidationError("index item '" + item.id + "' has dimension " + std::to_string(item.vector.dim()) +
                          ", index has " + std::to_string(dim_));
  // Re-validate: a JointVector may have been built with a looser tolerance.
  const double n = item.vector.values().norm();
  if (!std::isfinite(n) || std::abs(n - 1.0) > 1e-4)
    throw ValidationError("index item '" + item.id + "' is not unit-norm (norm = " + std::to_string(n) + ")");
  dim_ = item.vector.dim();
  by_id_.emplace(item.id, items_.size());
  items_.push_back(std::move(item));
}

const IndexItem* RetrievalIndex::find(const std::string& id) const {
  auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : &items_[it->second];
}

std::size_t RetrievalIndex::count(Modality m) const {
  return static_cast<std::size_t>(
      std::count_if(items_.begin(), items_.end(), [m](const IndexItem& i) { return i.modality == m; }));
}

std::vector<SearchHit> RetrievalIndex::search(const JointVector& query, std::size_t k, const SearchFilter& filter) const {
  if (k < 1) throw ValidationError("k must be >= 1");
  if (dim_ != 0 && query.dim() != dim_)
    throw ValidationError("query has dimension " + std::to_string(query.dim()) + ", index has " + std::to_string(dim_));
  std::vector<SearchHit> hits;
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (!filter.accepts(items_[i])) continue;
    hits.push_back({i, items_[i].id, query.dot(items_[i].vector)});
  }
  if (hits.empty()) throw NotFoundError("no indexed item passes the filter");
  const std::size_t keep = std::min(k, hits.size());
  auto cmp = [](const SearchHit& a, const SearchHit& b) { return ranks_before(a.score, a.id, b.score, b.id); };
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(), cmp);
  hits.resize(keep);
  return hits;
}

void RetrievalIndex::save(const std::filesystem::path& path) const {
  std::string out = nlohmann::json{{"count", items_.size()}, {"dim", dim_}}.dump() + "\n";
  out.reserve(out.size() + items_.size() * static_cast<std::size_t>(dim_) * 4);
  for (const auto& item : items_) {
    for (Eigen::Index k = 0; k < dim_; ++k) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(item.vector[k]));
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
    }
  }
  for (const auto& item : items_) {
    nlohmann::json j = {{"id", item.id}, {"modality", to_string(item.modality)}};
    if (!item.lang.empty()) j["lang"] = item.lang;
    if (!item.text.empty()) j["text"] = item.text;
    if (!item.image_id.empty()) j["image_id"] = item.image_id;
    if (!item.feature_path.empty()) j["feature_path"] = item.feature_path;
    out += j.dump() + "\n";
  }
  write_text_file(path, out);
}

RetrievalIndex RetrievalIndex::load(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const auto header_end = bytes.find('\n');
  if (header_end == std::string::npos) throw ValidationError(path.string() + ": missing index header");
  std::size_t count = 0;
  Eigen::Index dim = 0;
  try {
    const auto header = nlohmann::json::parse(bytes.substr(0, header_end));
    count = header.at("count").get<std::size_t>();
    dim = header.at("dim").get<Eigen::Index>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": malformed index header: " + e.what());
  }
  const std::size_t vec_bytes = count * static_cast<std::size_t>(dim) * 4;
  std::size_t pos = header_end + 1;
  if (bytes.size() < pos + vec_bytes) throw ValidationError(path.string() + ": truncated vector block");
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  pos += vec_bytes;

  std::istringstream meta(bytes.substr(pos));
  RetrievalIndex index;
  std::string line;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(meta, line)) throw ValidationError(path.string() + ": expected " + std::to_string(count) + " metadata lines");
    IndexItem item;
    try {
      const auto j = nlohmann::json::parse(line);
      item.id = j.at("id").get<std::string>();
      item.modality = modality_from_string(j.at("modality").get<std::string>());
      item.lang = j.value("lang", std::string{});
      item.text = j.value("text", std::string{});
      item.image_id = j.value("image_id", std::string{});
      item.feature_path = j.value("feature_path", std::string{});
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.string() + ": malformed metadata line: " + e.what());
    }
    Vector v(dim);
    for (Eigen::Index k = 0; k < dim; ++k) {
      const unsigned char* p = raw + 4 * (i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(k));
      const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                                 (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
      v[k] = static_cast<double>(std::bit_cast<float>(bits));
    }
    item.vector = JointVector::from_unit(std::move(v));
    index.add(std::move(item));
  }
  return index;
}

RetrievalIndex build_index(std::vector<IndexItem> items) {
  RetrievalIndex index;
  for (auto& item : items) index.add(std::move(item));
  return index;
}

nlohmann::json RecallReport::to_json() const {
  auto cell = [](const RecallCell& c) { return nlohmann::json{{"r1", c.r1}, {"r5", c.r5}, {"r10", c.r10}, {"queries", c.queries}}; };
  nlohmann::json rows_json = nlohmann::json::object();
  for (const auto& [name, row] : rows)
    rows_json[name] = {{"caption_retrieval", cell(row.caption_retrieval)}, {"image_retrieval", cell(row.image_retrieval)}};
  return {{"eval_batch_size", eval_batch_size}, {"batches", batches}, {"rows", rows_json}};
}

std::string RecallReport::to_table() const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << std::left << std::setw(10) << "Languages" << " | " << std::setw(26) << "Caption retrieval" << " | "
      << "Image retrieval\n";
  out << std::setw(10) << "" << " | " << std::right << std::setw(8) << "R@1" << std::setw(9) << "R@5" << std::setw(9)
      << "R@10" << " | " << std::setw(8) << "R@1" << std::setw(9) << "R@5" << std::setw(9) << "R@10" << "\n";
  out << std::string(10, '-') << "-+-" << std::string(26, '-') << "-+-" << std::string(26, '-') << "\n";
  auto emit = [&](const std::string& name, const RecallRow& row) {
    const auto& c = row.caption_retrieval;
    const auto& i = row.image_retrieval;
    out << std::left << std::setw(10) << name << " | " << std::right << std::setw(8) << 100.0 * c.r1 << std::setw(9)
        << 100.0 * c.r5 << std::setw(9) << 100.0 * c.r10 << " | " << std::setw(8) << 100.0 * i.r1 << std::setw(9)
        << 100.0 * i.r5 << std::setw(9) << 100.0 * i.r10 << "\n";
  };
  for (const auto& [name, row] : rows)
    if (name != "all") emit(name, row);
  if (auto it = rows.find("all"); it != rows.end()) emit("all", it->second);
  return out.str();
}

namespace {

struct HitCounter {
  std::size_t h1 = 0, h5 = 0, h10 = 0, n = 0;
  void record(std::size_t rank) {
    ++n;
    h1 += rank <= 1;
    h5 += rank <= 5;
    h10 += rank <= 10;
  }
  RecallCell cell() const {
    RecallCell c;
    c.queries = n;
    if (n == 0) return c;
    const double d = static_cast<double>(n);
    c.r1 = static_cast<double>(h1) / d;
    c.r5 = static_cast<double>(h5) / d;
    c.r10 = static_cast<double>(h10) / d;
    return c;
  }
};

// 1-based position of `target` among `candidates` under the search order.
std::size_t rank_of(std::size_t target, const std::vector<std::size_t>& candidates, const std::vector<double>& scores,
                    const std::vector<IndexItem>& items) {
  std::size_t rank = 1;
  for (std::size_t c : candidates)
    if (c != target && ranks_before(scores[c], items[c].id, scores[target], items[target].id)) ++rank;
  return rank;
}

}  // namespace

RecallReport evaluate_recall(const RetrievalIndex& images, const RetrievalIndex& captions, std::size_t eval_batch_size) {
  if (eval_batch_size < 1) throw ValidationError("evaluation batch size must be >= 1");
  if (captions.size() == 0 || images.size() == 0) throw ValidationError("evaluation needs images and captions");

  const auto& img_items = images.items();
  const auto& cap_items = captions.items();
  std::unordered_map<std::string, std::size_t> image_pos;
  for (std::size_t i = 0; i < img_items.size(); ++i) image_pos.emplace(img_items[i].id, i);

  std::vector<std::size_t> caption_image(cap_items.size());
  std::set<std::string> languages;
  for (std::size_t c = 0; c < cap_items.size(); ++c) {
    auto it = image_pos.find(cap_items[c].image_id);
    if (it == image_pos.end())
      throw ValidationError("caption '" + cap_items[c].id + "' refers to unknown image '" + cap_items[c].image_id + "'");
    caption_image[c] = it->second;
    languages.insert(cap_items[c].lang);
  }

  std::map<std::string, HitCounter> caption_hits;
  std::map<std::string, HitCounter> image_hits;
  const std::size_t n_batches = (img_items.size() + eval_batch_size - 1) / eval_batch_size;

  for (std::size_t b = 0; b < n_batches; ++b) {
    const std::size_t lo = b * eval_batch_size;
    const std::size_t hi = std::min(lo + eval_batch_size, img_items.size());
    std::vector<std::size_t> batch_images(hi - lo);
    std::iota(batch_images.begin(), batch_images.end(), lo);
    std::vector<std::size_t> batch_captions;
    for (std::size_t c = 0; c < cap_items.size(); ++c)
      if (caption_image[c] >= lo && caption_image[c] < hi) batch_captions.push_back(c);

    // Image retrieval: each caption ranks the batch's images.
    std::vector<double> img_scores(img_items.size());
    for (std::size_t c : batch_captions) {
      for (std::size_t i : batch_images) img_scores[i] = cap_items[c].vector.dot(img_items[i].vector);
      const std::size_t rank = rank_of(caption_image[c], batch_images, img_scores, img_items);
      image_hits[cap_items[c].lang].record(rank);
      image_hits["all"].record(rank);
    }

    // Caption retrieval: each image ranks the batch's captions, per language and pooled.
    std::vector<double> cap_scores(cap_items.size());
    for (std::size_t i : batch_images) {
      for (std::size_t c : batch_captions) cap_scores[c] = img_items[i].vector.dot(cap_items[c].vector);
      std::map<std::string, std::vector<std::size_t>> pools;
      for (std::size_t c : batch_captions) {
        pools[cap_items[c].lang].push_back(c);
        pools["all"].push_back(c);
      }
      for (const auto& [scope, pool] : pools) {
        std::size_t best = std::numeric_limits<std::size_t>::max();
        for (std::size_t c : pool)
          if (caption_image[c] == i) best = std::min(best, rank_of(c, pool, cap_scores, cap_items));
        if (best != std::numeric_limits<std::size_t>::max()) caption_hits[scope].record(best);
      }
    }
  }

  RecallReport report;
  report.eval_batch_size = eval_batch_size;
  report.batches = n_batches;
  languages.insert("all");
  for (const auto& lang : languages) report.rows[lang] = {caption_hits[lang].cell(), image_hits[lang].cell()};
  return report;
}

}  // namespace polysearch
