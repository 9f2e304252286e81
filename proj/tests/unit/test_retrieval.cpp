// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "retrieval.hpp"

using namespace polysearch;

namespace {

JointVector unit(std::initializer_list<double> v) {
  Vector x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) x[i++] = d;
  return JointVector::normalize(x);
}

oracle::Vec to_vec(const JointVector& v) { return {v.values().data(), v.values().data() + v.dim()}; }

IndexItem image(std::string id, JointVector v) {
  IndexItem it;
  it.id = std::move(id);
  it.vector = std::move(v);
  return it;
}

IndexItem caption(std::string id, JointVector v, std::string image_id, std::string lang = "en") {
  IndexItem it;
  it.id = std::move(id);
  it.modality = Modality::kCaption;
  it.vector = std::move(v);
  it.image_id = std::move(image_id);
  it.lang = std::move(lang);
  it.text = "caption of " + it.image_id;
  return it;
}

void check_cell(const RecallCell& got, const oracle::Recall& want) {
  CHECK(got.queries == want.n);
  CHECK(got.r1 == want.r1);
  CHECK(got.r5 == want.r5);
  CHECK(got.r10 == want.r10);
}

void check_monotone(const RecallReport& report) {
  for (const auto& [lang, row] : report.rows)
    for (const auto* cell : {&row.caption_retrieval, &row.image_retrieval}) {
      CHECK(cell->r1 <= cell->r5);
      CHECK(cell->r5 <= cell->r10);
    }
}

struct Instance {
  std::vector<oracle::EvalItem> images, captions;
  RetrievalIndex image_index, caption_index;
};

// Clustered vectors so that ranks spread across 1..10 and beyond.
Instance random_instance(std::mt19937_64& rng, int pairs, Eigen::Index dim, const std::vector<std::string>& langs) {
  Instance in;
  std::uniform_int_distribution<std::size_t> pick(0, langs.size() - 1);
  for (int i = 0; i < pairs; ++i) {
    const std::string id = "img" + std::to_string(1000 + i);
    const Vector base = testing::gaussian(dim, rng);
    const auto iv = JointVector::normalize(base + 0.8 * testing::gaussian(dim, rng));
    in.image_index.add(image(id, iv));
    in.images.push_back({id, to_vec(iv), "", ""});
    const int caps = 1 + i % 2;
    for (int c = 0; c < caps; ++c) {
      const auto cv = JointVector::normalize(base + 0.8 * testing::gaussian(dim, rng));
      const std::string lang = langs[pick(rng)];
      const std::string cid = id + "#" + lang + "#" + std::to_string(c);
      in.caption_index.add(caption(cid, cv, id, lang));
      in.captions.push_back({cid, to_vec(cv), lang, id});
    }
  }
  return in;
}

}  // namespace

TEST_CASE("index construction validates items") {
  RetrievalIndex idx;
  idx.add(image("a", unit({1, 0, 0})));
  idx.add(image("b", unit({0, 1, 0})));
  idx.add(image("c", unit({0, 0, 1})));
  CHECK(idx.size() == 3);
  CHECK_THROWS_AS(idx.add(image("a", unit({1, 0, 0}))), ConflictError);

  IndexItem half = image("d", unit({1, 0, 0}));
  half.vector = JointVector::from_unit(0.5 * Vector::Unit(3, 0), 1.0);
  CHECK_THROWS_AS(idx.add(half), ValidationError);

  std::vector<IndexItem> items = {image("x", unit({1, 0})), image("x", unit({0, 1}))};
  CHECK_THROWS_AS(build_index(items), ConflictError);
  CHECK_THROWS_AS(idx.add(image("f", unit({1, 0}))), ValidationError);
  CHECK_THROWS_AS(idx.add(image("", unit({1, 0, 0}))), ValidationError);
}

TEST_CASE("search orders by score then id") {
  const auto idx = build_index({image("e1", unit({1, 0})), image("e2", unit({0, 1})), image("mixed", unit({1, 1}))});
  const auto hits = idx.search(unit({1, 0}), 3);
  REQUIRE(hits.size() == 3);
  CHECK(hits[0].id == "e1");
  CHECK(hits[0].score == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(hits[1].id == "mixed");
  CHECK(hits[1].score == doctest::Approx(std::sqrt(0.5)).epsilon(1e-4));
  CHECK(hits[2].id == "e2");
  CHECK(hits[2].score == 0.0);

  CHECK(idx.search(unit({1, 0}), 50).size() == 3);
  CHECK_THROWS_AS(idx.search(unit({1, 0}), 0), ValidationError);

  const auto tied = build_index({image("b", unit({1, 0})), image("a", unit({1, 0})), image("c", unit({1, 0}))});
  const auto t = tied.search(unit({1, 0}), 3);
  CHECK(t[0].id == "a");
  CHECK(t[1].id == "b");
  CHECK(t[2].id == "c");
}

TEST_CASE("search matches an exhaustive-sort oracle") {
  std::mt19937_64 rng(1);
  const auto in = random_instance(rng, 200, 8, {"en"});
  std::vector<std::pair<std::string, oracle::Vec>> all;
  for (const auto& it : in.image_index.items()) all.push_back({it.id, to_vec(it.vector)});
  for (int q = 0; q < 50; ++q) {
    const auto query = testing::random_unit(8, rng);
    const auto want = oracle::full_ranking(to_vec(query), all);
    const auto got = in.image_index.search(query, 25);
    REQUIRE(got.size() == 25);
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].id == want[i].id);
      CHECK(got[i].score == want[i].score);
      CHECK(std::abs(got[i].score) <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("filters are sound") {
  std::mt19937_64 rng(2);
  RetrievalIndex idx;
  for (int i = 0; i < 30; ++i) {
    const std::string id = "i" + std::to_string(i);
    idx.add(image(id, testing::random_unit(4, rng)));
    idx.add(caption(id + "#en#0", testing::random_unit(4, rng), id, "en"));
    idx.add(caption(id + "#fr#0", testing::random_unit(4, rng), id, "fr"));
  }
  CHECK(idx.count(Modality::kImage) == 30);
  CHECK(idx.count(Modality::kCaption) == 60);
  const SearchFilter fr{Modality::kCaption, std::string("fr")};
  for (const auto& h : idx.search(testing::random_unit(4, rng), 100, fr)) {
    CHECK(idx.items()[h.item].modality == Modality::kCaption);
    CHECK(idx.items()[h.item].lang == "fr");
  }
  CHECK(idx.search(testing::random_unit(4, rng), 100, fr).size() == 30);
  CHECK_THROWS_AS(idx.search(testing::random_unit(4, rng), 5, SearchFilter{std::nullopt, std::string("de")}),
                  NotFoundError);
}

TEST_CASE("scores are symmetric") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const auto a = testing::random_unit(16, rng), b = testing::random_unit(16, rng);
    const auto ab = build_index({image("b", b)}).search(a, 1)[0].score;
    const auto ba = build_index({image("a", a)}).search(b, 1)[0].score;
    CHECK(std::abs(ab - ba) <= 1e-12);
  }
}

TEST_CASE("snapshots round-trip") {
  testing::TempDir dir;
  std::mt19937_64 rng(4);
  auto in = random_instance(rng, 20, 6, {"en", "fr"});
  for (const auto& it : in.caption_index.items()) in.image_index.add(it);
  in.image_index.save(dir / "idx.bin");
  const auto back = RetrievalIndex::load(dir / "idx.bin");
  REQUIRE(back.size() == in.image_index.size());
  CHECK(back.dim() == 6);
  for (std::size_t i = 0; i < back.size(); ++i) {
    const auto& a = back.items()[i];
    const auto& b = in.image_index.items()[i];
    CHECK(a.id == b.id);
    CHECK(a.modality == b.modality);
    CHECK(a.lang == b.lang);
    CHECK(a.text == b.text);
    CHECK(a.image_id == b.image_id);
    // Stored as float32.
    CHECK((a.vector.values() - b.vector.values()).cwiseAbs().maxCoeff() < 1e-7);
  }
  back.save(dir / "again.bin");
  const auto twice = RetrievalIndex::load(dir / "again.bin");
  for (std::size_t i = 0; i < back.size(); ++i) CHECK(twice.items()[i].vector == back.items()[i].vector);

  std::ofstream(dir / "junk.bin") << "{\"count\": 3, \"dim\": 2}\nabc";
  CHECK_THROWS_AS(RetrievalIndex::load(dir / "junk.bin"), ValidationError);
  CHECK_THROWS_AS(RetrievalIndex::load(dir / "absent.bin"), IoError);
}

TEST_CASE("perfect embeddings give perfect recall") {
  RetrievalIndex images, captions;
  for (Eigen::Index i = 0; i < 12; ++i) {
    const std::string id = "img" + std::to_string(i);
    const auto v = JointVector::normalize(Vector::Unit(12, i));
    images.add(image(id, v));
    captions.add(caption(id + "#en#0", v, id, "en"));
    captions.add(caption(id + "#fr#0", v, id, "fr"));
  }
  const auto report = evaluate_recall(images, captions, 5);
  CHECK(report.batches == 3);
  for (const std::string lang : {"en", "fr", "all"}) {
    const auto& row = report.rows.at(lang);
    for (const auto* cell : {&row.caption_retrieval, &row.image_retrieval}) {
      CHECK(cell->r1 == 1.0);
      CHECK(cell->r5 == 1.0);
      CHECK(cell->r10 == 1.0);
    }
  }
  CHECK(report.rows.at("all").image_retrieval.queries == 24);
  CHECK(report.rows.at("en").caption_retrieval.queries == 12);
}

TEST_CASE("a misleading caption costs one image-retrieval hit at rank 1") {
  const auto images = build_index(
      {image("i1", unit({1, 0, 0})), image("i2", unit({0, 1, 0})), image("i3", unit({0, 0, 1}))});
  const auto captions = build_index({caption("c1", unit({0.4, 0.9, 0.1}), "i1"), caption("c2", unit({0, 1, 0}), "i2"),
                                     caption("c3", unit({0, 0, 1}), "i3")});
  const auto report = evaluate_recall(images, captions);
  const auto& cell = report.rows.at("all").image_retrieval;
  CHECK(cell.r1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(cell.r5 == 1.0);
  CHECK(cell.r10 == 1.0);
}

TEST_CASE("evaluate_recall matches an exhaustive-sort oracle") {
  std::mt19937_64 rng(5);
  for (const std::size_t batch : {std::size_t{1000}, std::size_t{64}, std::size_t{7}}) {
    const auto in = random_instance(rng, 200, 6, {"en", "fr", "de"});
    const auto report = evaluate_recall(in.image_index, in.caption_index, batch);
    const auto want = oracle::recall(in.images, in.captions, batch);
    REQUIRE(report.rows.size() == want.size());
    for (const auto& [lang, cells] : want) {
      INFO("lang " << lang << " batch " << batch);
      REQUIRE(report.rows.contains(lang));
      check_cell(report.rows.at(lang).caption_retrieval, cells.first);
      check_cell(report.rows.at(lang).image_retrieval, cells.second);
    }
    check_monotone(report);
    // Not every query is a hit, so the oracle comparison is not vacuous.
    CHECK(report.rows.at("all").image_retrieval.r1 < 1.0);
    CHECK(report.rows.at("all").image_retrieval.r10 > 0.0);
  }
}

TEST_CASE("evaluate_recall input errors") {
  const auto images = build_index({image("i1", unit({1, 0}))});
  CHECK_THROWS_AS(evaluate_recall(images, RetrievalIndex{}), ValidationError);
  CHECK_THROWS_AS(evaluate_recall(images, build_index({caption("c", unit({1, 0}), "nope")})), ValidationError);
  CHECK_THROWS_AS(evaluate_recall(images, build_index({caption("c", unit({1, 0}), "i1")}), 0), ValidationError);
}

TEST_CASE("report serialization") {
  RetrievalIndex images, captions;
  for (Eigen::Index i = 0; i < 3; ++i) {
    const std::string id = "img" + std::to_string(i);
    images.add(image(id, JointVector::normalize(Vector::Unit(3, i))));
    captions.add(caption(id + "#en#0", JointVector::normalize(Vector::Unit(3, i)), id));
  }
  const auto report = evaluate_recall(images, captions);
  const auto j = report.to_json();
  CHECK(j.at("rows").at("en").at("image_retrieval").at("r1") == 1.0);
  CHECK(j.at("eval_batch_size") == 1000);
  const auto table = report.to_table();
  CHECK(table.find("Caption retrieval") != std::string::npos);
  CHECK(table.find("100.00") != std::string::npos);
  CHECK(table.rfind("all") > table.rfind("en"));
}
