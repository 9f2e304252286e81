// SPDX-License-Identifier: Apache-2.0
#include "corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <unordered_set>

#include "image_encoder.hpp"
#include "io_util.hpp"
#include "log.hpp"

namespace polysearch {

std::size_t Manifest::caption_count() const {
  std::size_t n = 0;
  for (const auto& r : records) n += r.captions.size();
  return n;
}

Manifest load_manifest(const std::filesystem::path& path, bool check_files) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  Manifest m;
  std::optional<std::string> split;
  std::unordered_set<std::string> ids;
  std::vector<std::string> missing;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(where + "malformed JSON: " + e.what());
    }
    ManifestRecord rec;
    try {
      rec.image_id = j.at("image_id").get<std::string>();
      rec.feature_path = j.at("feature_path").get<std::string>();
      for (const auto& c : j.at("captions"))
        rec.captions.push_back({c.at("lang").get<std::string>(), c.at("text").get<std::string>()});
      const std::string record_split = j.value("split", std::string{});
      if (!split) split = record_split;
      if (*split != record_split) throw ValidationError(where + "record split '" + record_split + "' differs from '" + *split + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where + "bad record: " + e.what());
    }
    if (rec.image_id.empty()) throw ValidationError(where + "empty image_id");
    if (rec.captions.empty()) throw ValidationError(where + "image '" + rec.image_id + "' has no captions");
    if (!ids.insert(rec.image_id).second) throw ValidationError(where + "duplicate image_id '" + rec.image_id + "'");
    if (rec.feature_path.is_relative()) rec.feature_path = base / rec.feature_path;
    rec.feature_path = std::filesystem::absolute(rec.feature_path).lexically_normal();
    if (check_files && !std::filesystem::exists(rec.feature_path)) missing.push_back(rec.feature_path.string());
    m.records.push_back(std::move(rec));
  }
  if (!missing.empty()) {
    constexpr std::size_t kShown = 10;
    std::string list;
    for (std::size_t i = 0; i < std::min(kShown, missing.size()); ++i) list += "\n  " + missing[i];
    if (missing.size() > kShown) list += "\n  ... and " + std::to_string(missing.size() - kShown) + " more";
    throw ValidationError("manifest " + path.string() + " references missing feature files:" + list);
  }
  m.split = split.value_or("");
  return m;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  const auto base = std::filesystem::absolute(path).lexically_normal().parent_path();
  std::string out;
  for (const auto& r : manifest.records) {
    nlohmann::json captions = nlohmann::json::array();
    for (const auto& c : r.captions) captions.push_back({{"lang", c.lang}, {"text", c.text}});
    const std::filesystem::path fp = std::filesystem::absolute(r.feature_path).lexically_normal().lexically_proximate(base);
    nlohmann::json j = {{"image_id", r.image_id}, {"feature_path", fp.generic_string()}, {"captions", captions}};
    if (!manifest.split.empty()) j["split"] = manifest.split;
    out += j.dump() + "\n";
  }
  write_text_file(path, out);
}

std::vector<PairRef> filter_pairs(const Manifest& manifest, const std::vector<std::string>& languages) {
  std::vector<PairRef> pairs;
  for (std::size_t r = 0; r < manifest.records.size(); ++r) {
    const auto& caps = manifest.records[r].captions;
    for (std::size_t c = 0; c < caps.size(); ++c)
      if (std::find(languages.begin(), languages.end(), caps[c].lang) != languages.end()) pairs.push_back({r, c});
  }
  if (pairs.empty()) {
    std::string langs;
    for (const auto& l : languages) langs += (langs.empty() ? "" : ",") + l;
    throw ValidationError("no caption matches the language filter {" + langs + "}");
  }
  return pairs;
}

BatchStream::BatchStream(const Manifest& manifest, std::size_t batch_size, std::uint64_t seed,
                         const std::vector<std::string>& languages) {
  if (batch_size < 2) throw ValidationError("batch size must be >= 2 so every anchor has negatives");
  std::vector<PairRef> pairs = filter_pairs(manifest, languages);
  std::mt19937_64 rng(seed);
  std::shuffle(pairs.begin(), pairs.end(), rng);

  auto distinct_images = [](const PairBatch& b) {
    std::set<std::size_t> s;
    for (const auto& p : b.pairs) s.insert(p.record);
    return s.size();
  };

  for (std::size_t i = 0; i < pairs.size(); i += batch_size) {
    PairBatch b;
    b.pairs.assign(pairs.begin() + static_cast<std::ptrdiff_t>(i),
                   pairs.begin() + static_cast<std::ptrdiff_t>(std::min(i + batch_size, pairs.size())));
    if (distinct_images(b) < 2 && !batches_.empty()) {
      auto& prev = batches_.back().pairs;
      prev.insert(prev.end(), b.pairs.begin(), b.pairs.end());
    } else {
      batches_.push_back(std::move(b));
    }
  }
  if (batches_.size() > 1 && distinct_images(batches_.front()) < 2) {
    auto first = std::move(batches_.front().pairs);
    batches_.erase(batches_.begin());
    auto& next = batches_.front().pairs;
    next.insert(next.begin(), first.begin(), first.end());
  }
  if (distinct_images(batches_.front()) < 2)
    throw ValidationError("the filtered corpus has fewer than two distinct images");
}

std::optional<PairBatch> BatchStream::next() {
  if (cursor_ >= batches_.size()) return std::nullopt;
  return batches_[cursor_++];
}

ToySpec ToySpec::from_json(const nlohmann::json& j) {
  ToySpec s;
  try {
    s.concepts = j.value("concepts", s.concepts);
    s.languages = j.value("languages", s.languages);
    s.zero_shot_languages = j.value("zero_shot_languages", s.zero_shot_languages);
    s.images_per_concept = j.value("images_per_concept", s.images_per_concept);
    s.test_images_per_concept = j.value("test_images_per_concept", s.test_images_per_concept);
    s.captions_per_image = j.value("captions_per_image", s.captions_per_image);
    s.channels = j.value("channels", s.channels);
    s.height = j.value("height", s.height);
    s.width = j.value("width", s.width);
    s.noise = j.value("noise", s.noise);
    s.embedding_dim = j.value("embedding_dim", s.embedding_dim);
    s.filler_words = j.value("filler_words", s.filler_words);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed toy spec: ") + e.what());
  }
  s.validate();
  return s;
}

nlohmann::json ToySpec::to_json() const {
  return {{"concepts", concepts},
          {"languages", languages},
          {"zero_shot_languages", zero_shot_languages},
          {"images_per_concept", images_per_concept},
          {"test_images_per_concept", test_images_per_concept},
          {"captions_per_image", captions_per_image},
          {"channels", channels},
          {"height", height},
          {"width", width},
          {"noise", noise},
          {"embedding_dim", embedding_dim},
          {"filler_words", filler_words},
          {"seed", seed}};
}

void ToySpec::validate() const {
  if (concepts < 2) throw ValidationError("toy spec needs at least 2 concepts");
  if (languages.empty()) throw ValidationError("toy spec needs at least one language");
  std::set<std::string> all(languages.begin(), languages.end());
  for (const auto& l : zero_shot_languages)
    if (!all.insert(l).second) throw ValidationError("language '" + l + "' listed twice");
  if (all.size() != languages.size() + zero_shot_languages.size()) throw ValidationError("duplicate language in toy spec");
  if (images_per_concept < 1 || test_images_per_concept < 0 || captions_per_image < 1)
    throw ValidationError("toy image and caption counts must be positive");
  if (channels < 1 || height < 1 || width < 1) throw ValidationError("toy feature-map dimensions must be >= 1");
  if (!(noise >= 0.0)) throw ValidationError("toy noise level must be >= 0");
  if (embedding_dim < 1 || filler_words < 1) throw ValidationError("toy vocabulary sizes must be positive");
}

namespace {

constexpr std::array<const char*, 24> kGreek = {"alpha", "beta",  "gamma", "delta",   "epsilon", "zeta",
                                                "eta",   "theta", "iota",  "kappa",   "lambda",  "mu",
                                                "nu",    "xi",    "omicron", "pi",    "rho",     "sigma",
                                                "tau",   "upsilon", "phi", "chi",     "psi",     "omega"};

constexpr std::array<const char*, 50> kFillers = {
    "a",      "the",    "photo",   "of",     "with",   "near",  "small", "large",  "two",    "some",
    "in",     "on",     "picture", "shows",  "there",  "is",    "an",    "old",    "young",  "next",
    "to",     "under",  "over",    "very",   "bright", "dark",  "group", "single", "close",  "view",
    "at",     "day",    "night",   "street", "field",  "room",  "by",    "across",   "image",  "scene",
    "and",    "from",   "inside",  "outside", "blue",  "red",   "green", "quiet",  "busy",   "little"};

std::string pseudo_word(std::mt19937_64& rng) {
  static constexpr std::string_view consonants = "bdfgklmnprstvz";
  static constexpr std::string_view vowels = "aeiou";
  std::uniform_int_distribution<int> syllables(2, 3);
  std::uniform_int_distribution<std::size_t> cpick(0, consonants.size() - 1);
  std::uniform_int_distribution<std::size_t> vpick(0, vowels.size() - 1);
  std::string w;
  for (int s = syllables(rng); s > 0; --s) {
    w.push_back(consonants[cpick(rng)]);
    w.push_back(vowels[vpick(rng)]);
  }
  return w;
}

std::vector<std::string> vocabulary(std::size_t lang_index, int concepts, int fillers, std::mt19937_64& rng) {
  std::vector<std::string> words;
  std::unordered_set<std::string> used;
  auto unique = [&](std::string w) {
    while (!used.insert(w).second) w += pseudo_word(rng).substr(0, 2);
    words.push_back(w);
  };
  for (int k = 0; k < concepts + fillers; ++k) {
    if (lang_index == 0) {
      const bool concept_slot = k < concepts;
      const auto idx = static_cast<std::size_t>(concept_slot ? k : k - concepts);
      if (concept_slot && idx < kGreek.size()) {
        unique(kGreek[idx]);
      } else if (!concept_slot && idx < kFillers.size()) {
        unique(kFillers[idx]);
      } else {
        unique(pseudo_word(rng));
      }
    } else {
      unique(pseudo_word(rng));
    }
  }
  return words;
}

Matrix random_rotation(Eigen::Index dim, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  const Matrix a = Matrix::NullaryExpr(dim, dim, [&] { return gauss(rng); });
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ();
  // Fix column signs so the distribution is uniform (Haar).
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index i = 0; i < dim; ++i)
    if (r(i, i) < 0) q.col(i) = -q.col(i);
  return q;
}

std::string image_id(int concept_index, const char* split, int i) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "c%02d-%s-%03d", concept_index, split, i);
  return buf;
}

}  // namespace

std::optional<int> toy_concept_of(const std::string& image_id) {
  if (image_id.size() < 4 || image_id[0] != 'c' || image_id[3] != '-') return std::nullopt;
  if (!std::isdigit(static_cast<unsigned char>(image_id[1])) || !std::isdigit(static_cast<unsigned char>(image_id[2])))
    return std::nullopt;
  return (image_id[1] - '0') * 10 + (image_id[2] - '0');
}

ToyDataset make_toy_dataset(const ToySpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  if (spec.concepts > 100) throw ValidationError("toy generator supports at most 100 concepts");
  std::filesystem::create_directories(out_dir / "features");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const Eigen::Index locations = static_cast<Eigen::Index>(spec.height) * spec.width;
  const Eigen::Index flat = spec.channels * locations;

  // Prototypes: redraw any that is too similar to an earlier one.
  std::vector<Matrix> prototypes;
  for (int k = 0; k < spec.concepts; ++k) {
    for (int attempt = 0;; ++attempt) {
      Matrix p = Matrix::NullaryExpr(spec.channels, locations, [&] { return gauss(rng); });
      bool ok = true;
      for (const auto& q : prototypes) {
        const double cosine = p.reshaped().dot(q.reshaped()) / (p.norm() * q.norm());
        if (cosine >= 0.5) ok = false;
      }
      if (ok) {
        prototypes.push_back(std::move(p));
        break;
      }
      if (attempt > 1000)
        throw ValidationError("cannot draw " + std::to_string(spec.concepts) + " distinct prototypes at C*H*W=" +
                              std::to_string(flat));
    }
  }

  std::vector<std::string> all_langs = spec.languages;
  all_langs.insert(all_langs.end(), spec.zero_shot_languages.begin(), spec.zero_shot_languages.end());
  const std::string& pivot = spec.languages.front();

  ToyDataset ds;
  const int slots = spec.concepts + spec.filler_words;
  const Eigen::Index dim = spec.embedding_dim;
  const Matrix base = Matrix::NullaryExpr(dim, slots, [&] { return gauss(rng); }) / std::sqrt(static_cast<double>(dim));
  std::vector<std::vector<std::string>> words;
  for (std::size_t li = 0; li < all_langs.size(); ++li) {
    const auto& lang = all_langs[li];
    words.push_back(vocabulary(li, spec.concepts, spec.filler_words, rng));
    const Matrix rotation = li == 0 ? Matrix(Matrix::Identity(dim, dim)) : random_rotation(dim, rng);
    const Matrix rows = rotation * base;
    EmbeddingTable table(lang, dim);
    for (int s = 0; s < slots; ++s) table.add(words[li][static_cast<std::size_t>(s)], rows.col(s));
    save_table(table, out_dir / (lang + ".vec"));
    ds.rotations.emplace(lang, rotation);
    ds.tables.emplace(lang, std::move(table));
    ds.concept_words.emplace_back(words[li].begin(), words[li].begin() + spec.concepts);
  }

  nlohmann::json ws_langs = nlohmann::json::array();
  ws_langs.push_back({{"lang", pivot}, {"table", pivot + ".vec"}});
  for (std::size_t li = 1; li < all_langs.size(); ++li) {
    const auto& lang = all_langs[li];
    SeedDictionary dict;
    for (int s = 0; s < slots; ++s)
      dict.emplace_back(words[li][static_cast<std::size_t>(s)], words[0][static_cast<std::size_t>(s)]);
    const std::string dict_name = "dict." + lang + "-" + pivot + ".tsv";
    const std::string align_name = "align." + lang + "-" + pivot + ".json";
    save_dictionary(dict, out_dir / dict_name);
    procrustes_align(ds.tables.at(lang), ds.tables.at(pivot), dict).save(out_dir / align_name);
    ds.dictionaries.emplace(lang, std::move(dict));
    ws_langs.push_back({{"lang", lang}, {"table", lang + ".vec"}, {"alignment", align_name}});
  }
  ds.wordspace_path = out_dir / "wordspace.json";
  write_text_file(ds.wordspace_path, nlohmann::json{{"pivot", pivot}, {"languages", ws_langs}}.dump(2) + "\n");

  std::uniform_int_distribution<int> length(3, 6);
  std::uniform_int_distribution<int> filler_pick(spec.concepts, slots - 1);
  auto caption = [&](std::size_t li, int concept_index) {
    const int n = length(rng);
    std::uniform_int_distribution<int> position(0, n - 1);
    const int at = position(rng);
    std::string text;
    for (int i = 0; i < n; ++i) {
      const int slot = i == at ? concept_index : filler_pick(rng);
      text += (i ? " " : "") + words[li][static_cast<std::size_t>(slot)];
    }
    return text;
  };

  auto make_split = [&](const char* split, int per_concept, std::size_t caption_langs) {
    Manifest m;
    m.split = split;
    for (int k = 0; k < spec.concepts; ++k) {
      for (int i = 0; i < per_concept; ++i) {
        ManifestRecord rec;
        rec.image_id = image_id(k, split, i);
        Matrix values = prototypes[static_cast<std::size_t>(k)];
        if (spec.noise > 0.0) values += spec.noise * Matrix::NullaryExpr(spec.channels, locations, [&] { return gauss(rng); });
        rec.feature_path = std::filesystem::absolute(out_dir / "features" / (rec.image_id + ".fmap")).lexically_normal();
        FeatureMap(spec.height, spec.width, std::move(values)).save(rec.feature_path);
        for (std::size_t li = 0; li < caption_langs; ++li)
          for (int c = 0; c < spec.captions_per_image; ++c) rec.captions.push_back({all_langs[li], caption(li, k)});
        m.records.push_back(std::move(rec));
      }
    }
    return m;
  };

  ds.train = make_split("train", spec.images_per_concept, spec.languages.size());
  save_manifest(ds.train, out_dir / "train.jsonl");
  if (spec.test_images_per_concept > 0) {
    ds.test = make_split("test", spec.test_images_per_concept, all_langs.size());
    save_manifest(ds.test, out_dir / "test.jsonl");
  }
  write_text_file(out_dir / "toy_spec.json", spec.to_json().dump(2) + "\n");
  log().info("toy dataset: {} train / {} test images, {} languages in {}", ds.train.records.size(),
             ds.test.records.size(), all_langs.size(), out_dir.string());
  return ds;
}

}  // namespace polysearch
