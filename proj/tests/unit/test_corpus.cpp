// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <fstream>
#include <map>
#include <set>

#include "corpus.hpp"
#include "fixtures.hpp"
#include "image_encoder.hpp"

using namespace polysearch;

namespace {

void write(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

Manifest small_manifest(int images, int captions_each) {
  Manifest m;
  for (int i = 0; i < images; ++i) {
    ManifestRecord r;
    r.image_id = "img" + std::to_string(i);
    r.feature_path = "/nonexistent/" + r.image_id + ".fmap";
    for (int c = 0; c < captions_each; ++c) r.captions.push_back({c % 2 ? "fr" : "en", "text"});
    m.records.push_back(r);
  }
  return m;
}

std::vector<std::vector<PairRef>> drain(BatchStream s) {
  std::vector<std::vector<PairRef>> out;
  while (auto b = s.next()) out.push_back(b->pairs);
  return out;
}

}  // namespace

TEST_CASE("manifests load with relative paths and reject bad records") {
  testing::TempDir dir;
  std::filesystem::create_directories(dir / "feat");
  FeatureMap(1, 1, 1).save(dir / "feat/a.fmap");
  write(dir / "m.jsonl",
        R"({"image_id": "a", "feature_path": "feat/a.fmap", "captions": [{"lang": "en", "text": "a cat"}]})"
        "\n\n");
  const auto m = load_manifest(dir / "m.jsonl");
  REQUIRE(m.records.size() == 1);
  CHECK(m.records[0].feature_path == std::filesystem::absolute(dir / "feat/a.fmap").lexically_normal());
  CHECK(m.caption_count() == 1);

  save_manifest(m, dir / "copy.jsonl");
  CHECK(load_manifest(dir / "copy.jsonl").records[0].feature_path == m.records[0].feature_path);

  write(dir / "dup.jsonl",
        R"({"image_id": "a", "feature_path": "feat/a.fmap", "captions": [{"lang": "en", "text": "x"}]})"
        "\n"
        R"({"image_id": "a", "feature_path": "feat/a.fmap", "captions": [{"lang": "en", "text": "y"}]})"
        "\n");
  CHECK_THROWS_WITH_AS(load_manifest(dir / "dup.jsonl"), doctest::Contains(":2:"), ValidationError);

  write(dir / "nocap.jsonl", R"({"image_id": "a", "feature_path": "feat/a.fmap", "captions": []})" "\n");
  CHECK_THROWS_AS(load_manifest(dir / "nocap.jsonl"), ValidationError);
  write(dir / "broken.jsonl", "{not json\n");
  CHECK_THROWS_AS(load_manifest(dir / "broken.jsonl"), ValidationError);
  write(dir / "missing.jsonl",
        R"({"image_id": "b", "feature_path": "feat/b.fmap", "captions": [{"lang": "en", "text": "x"}]})" "\n");
  CHECK_THROWS_WITH_AS(load_manifest(dir / "missing.jsonl"), doctest::Contains("b.fmap"), ValidationError);
  CHECK_NOTHROW(load_manifest(dir / "missing.jsonl", false));
  CHECK_THROWS_AS(load_manifest(dir / "absent.jsonl"), IoError);
}

TEST_CASE("batches cover every pair exactly once") {
  const auto m = small_manifest(10, 1);
  const auto batches = drain(make_batches(m, 4, 1, {"en"}));
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].size() == 4);
  CHECK(batches[1].size() == 4);
  CHECK(batches[2].size() == 2);
  std::multiset<PairRef> seen;
  for (const auto& b : batches) seen.insert(b.begin(), b.end());
  std::multiset<PairRef> all;
  for (const auto& p : filter_pairs(m, {"en"})) all.insert(p);
  CHECK(seen == all);
}

TEST_CASE("batch order is a function of the seed") {
  const auto m = small_manifest(30, 2);
  CHECK(drain(make_batches(m, 8, 5, {"en", "fr"})) == drain(make_batches(m, 8, 5, {"en", "fr"})));
  CHECK(drain(make_batches(m, 8, 5, {"en", "fr"})) != drain(make_batches(m, 8, 6, {"en", "fr"})));
}

TEST_CASE("language filter and batch size validation") {
  const auto m = small_manifest(6, 2);
  CHECK(filter_pairs(m, {"fr"}).size() == 6);
  CHECK_THROWS_AS(filter_pairs(m, {"de"}), ValidationError);
  CHECK_THROWS_AS(make_batches(m, 1, 1, {"en"}), ValidationError);
  CHECK_THROWS_AS(make_batches(small_manifest(1, 2), 4, 1, {"en", "fr"}), ValidationError);
}

TEST_CASE("every batch holds at least two distinct images") {
  // Two captions per image make single-image tail batches possible.
  const auto m = small_manifest(3, 2);
  for (std::uint64_t seed = 0; seed < 50; ++seed)
    for (const auto& b : drain(make_batches(m, 2, seed, {"en", "fr"}))) {
      std::set<std::size_t> ids;
      for (const auto& p : b) ids.insert(p.record);
      CHECK(ids.size() >= 2);
    }
}

TEST_CASE("noise-free toy images of one concept are identical") {
  testing::TempDir dir;
  ToySpec spec;
  spec.concepts = 3;
  spec.images_per_concept = 4;
  spec.noise = 0.0;
  const auto ds = make_toy_dataset(spec, dir / "toy");
  REQUIRE(ds.train.records.size() == 12);
  std::map<int, Matrix> first;
  for (const auto& r : ds.train.records) {
    const int k = *toy_concept_of(r.image_id);
    const auto fm = FeatureMap::load(r.feature_path);
    if (!first.contains(k)) first[k] = fm.values();
    CHECK(fm.values() == first[k]);
  }
  CHECK(load_manifest(dir / "toy/train.jsonl").records.size() == 12);
}

TEST_CASE("toy word tables are rotations recovered by the shipped alignments") {
  testing::TempDir dir;
  ToySpec spec;
  spec.concepts = 5;
  spec.images_per_concept = 2;
  spec.zero_shot_languages = {"de"};
  const auto ds = make_toy_dataset(spec, dir / "toy");
  for (const std::string lang : {"fr", "de"}) {
    const auto map = AlignmentMap::load(dir / ("toy/align." + lang + "-en.json"));
    CHECK((map.matrix() - ds.rotations.at(lang).transpose()).cwiseAbs().maxCoeff() < 1e-6);
  }
  const auto ws = WordSpace::load(ds.wordspace_path);
  for (std::size_t k = 0; k < 5; ++k) {
    const auto en = *ws.lookup("en", ds.concept_words[0][k]);
    const auto de = *ws.lookup("de", ds.concept_words[2][k]);
    CHECK((en - de).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("toy prototypes are well separated") {
  testing::TempDir dir;
  ToySpec spec;
  spec.concepts = 20;
  spec.images_per_concept = 1;
  spec.noise = 0.0;
  const auto ds = make_toy_dataset(spec, dir / "toy");
  std::vector<Vector> protos;
  for (const auto& r : ds.train.records) protos.push_back(FeatureMap::load(r.feature_path).values().reshaped());
  for (std::size_t a = 0; a < protos.size(); ++a)
    for (std::size_t b = a + 1; b < protos.size(); ++b)
      CHECK(protos[a].dot(protos[b]) / (protos[a].norm() * protos[b].norm()) < 0.5);
}

TEST_CASE("toy concepts are linearly separable from pooled features") {
  testing::TempDir dir;
  ToySpec spec;  // K = 20, C = 8, 4 x 4
  spec.noise = 0.1;  // noisiest setting the generator is meant for
  const auto ds = make_toy_dataset(spec, dir / "toy");
  const auto n = static_cast<Eigen::Index>(ds.train.records.size());
  const int k = default_weldon_k(spec.height * spec.width);
  // Features are the pooled top and bottom means per channel, kept apart.
  // Their sum alone (the C-dim signature) is not linearly separable here.
  const Eigen::Index c = spec.channels;
  Matrix x(n, 2 * c + 1);
  Matrix y = Matrix::Zero(n, spec.concepts);
  std::vector<int> label;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = ds.train.records[static_cast<std::size_t>(i)];
    const auto fm = FeatureMap::load(r.feature_path);
    WeldonSelection sel;
    weldon_pool(fm.values(), k, k, &sel);
    for (Eigen::Index ch = 0; ch < c; ++ch) {
      double top = 0.0, bottom = 0.0;
      for (auto l : sel.top[static_cast<std::size_t>(ch)]) top += fm.values()(ch, l);
      for (auto l : sel.bottom[static_cast<std::size_t>(ch)]) bottom += fm.values()(ch, l);
      x(i, ch) = top / k;
      x(i, c + ch) = bottom / k;
    }
    x(i, 2 * c) = 1.0;
    label.push_back(*toy_concept_of(r.image_id));
    y(i, label.back()) = 1.0;
  }
  const Matrix w = x.colPivHouseholderQr().solve(y);
  const Matrix scores = x * w;
  Eigen::Index correct = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index best = 0;
    scores.row(i).maxCoeff(&best);
    correct += best == label[static_cast<std::size_t>(i)];
  }
  const double accuracy = static_cast<double>(correct) / static_cast<double>(n);
  MESSAGE("linear probe accuracy " << accuracy);
  CHECK(accuracy >= 0.95);
}

TEST_CASE("toy spec validation") {
  ToySpec spec;
  spec.concepts = 1;
  CHECK_THROWS_AS(spec.validate(), ValidationError);
  spec = ToySpec{};
  spec.languages = {"en", "en"};
  CHECK_THROWS_AS(spec.validate(), ValidationError);
  spec = ToySpec{};
  spec.noise = -1;
  CHECK_THROWS_AS(spec.validate(), ValidationError);
  CHECK(ToySpec::from_json(ToySpec{}.to_json()).to_json() == ToySpec{}.to_json());
  CHECK(toy_concept_of("c07-train-003") == 7);
  CHECK_FALSE(toy_concept_of("cat").has_value());
}
