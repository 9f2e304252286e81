// SPDX-License-Identifier: Apache-2.0
// Exercises the shared library through its C header only, then the CLI
// binary built on top of it.
#include <doctest.h>
#include <polysearch/polysearch.h>
#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "polysearch-capi-XXXXXX").string();
    if (mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  fs::path operator/(const std::string& name) const { return path_ / name; }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

json take_json(char* s) {
  REQUIRE(s != nullptr);
  json j = json::parse(s);
  ps_string_free(s);
  return j;
}

// A trained toy model shared by the cases below.
struct Toy {
  TempDir dir;
  json data;
  json trained;
  std::vector<int> epochs_seen;

  Toy() {
    write(dir / "spec.json", R"({"concepts": 4, "images_per_concept": 8, "test_images_per_concept": 2,
                                 "zero_shot_languages": ["de"], "seed": 3})");
    char* summary = nullptr;
    REQUIRE(ps_make_toy_data((dir / "spec.json").c_str(), (dir / "toy").c_str(), &summary) == PS_OK);
    data = take_json(summary);
    write(dir / "train.json", R"({"wordspace": "toy/wordspace.json", "languages": ["en", "fr"], "epochs": 30,
                                  "batch_size": 8, "seed": 7, "dropout": 0.0,
                                  "optimizer": {"learning_rate": 0.01, "halve_every": 0}})");
    auto on_epoch = [](int epoch, const char* stage, double loss, double lr, void* user) {
      CHECK(std::string(stage) == "rnn_fc");
      CHECK(std::isfinite(loss));
      CHECK(lr == 0.01);
      static_cast<Toy*>(user)->epochs_seen.push_back(epoch);
    };
    REQUIRE(ps_train(data.at("train_manifest").get<std::string>().c_str(), (dir / "train.json").c_str(),
                     (dir / "run").c_str(), on_epoch, this, &summary) == PS_OK);
    trained = take_json(summary);
  }

  std::string checkpoint() const { return trained.at("checkpoint").get<std::string>(); }
  std::string test_manifest() const { return data.at("test_manifest").get<std::string>(); }
  fs::path toy() const { return dir / "toy"; }
};

Toy& toy() {
  static Toy t;
  return t;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(POLYSEARCH_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("version and error reporting") {
  CHECK(std::string(ps_version()).size() > 0);
  ps_table* t = nullptr;
  CHECK(ps_table_load("/no/such/file.vec", "en", &t) == PS_ERR_IO);
  CHECK(t == nullptr);
  CHECK(std::string(ps_last_error()).find("file.vec") != std::string::npos);
  CHECK(ps_table_load(nullptr, "en", &t) == PS_ERR_INVALID_ARGUMENT);
  CHECK(ps_model_joint_dim(nullptr, nullptr) == PS_ERR_INVALID_ARGUMENT);
  ps_string_free(nullptr);
  ps_table_free(nullptr);
  ps_model_free(nullptr);
  ps_index_free(nullptr);
  ps_results_free(nullptr);
  ps_alignment_free(nullptr);
}

TEST_CASE("training through the C API") {
  auto& t = toy();
  CHECK(t.epochs_seen.size() == 30);
  CHECK(t.epochs_seen.front() == 1);
  CHECK(t.trained.at("loss_curve").size() == 30);
  CHECK(fs::exists(t.checkpoint()));

  char* report = nullptr;
  char* table = nullptr;
  REQUIRE(ps_evaluate(t.checkpoint().c_str(), t.test_manifest().c_str(), 200, &report, &table) == PS_OK);
  const auto j = take_json(report);
  CHECK(std::string(table).find("Image retrieval") != std::string::npos);
  ps_string_free(table);
  for (const char* lang : {"en", "fr", "de", "all"})
    CHECK(j.at("rows").at(lang).at("image_retrieval").at("r10").get<double>() == 1.0);
  CHECK(ps_evaluate(t.checkpoint().c_str(), "/no/manifest.jsonl", 200, nullptr, nullptr) == PS_ERR_IO);
}

TEST_CASE("tables and alignments") {
  auto& t = toy();
  ps_table *en = nullptr, *fr = nullptr;
  REQUIRE(ps_table_load((t.toy() / "en.vec").c_str(), "en", &en) == PS_OK);
  REQUIRE(ps_table_load((t.toy() / "fr.vec").c_str(), "fr", &fr) == PS_OK);
  int64_t size = 0, dim = 0;
  REQUIRE(ps_table_shape(en, &size, &dim) == PS_OK);
  CHECK(size == 54);
  CHECK(dim == 32);
  std::vector<double> v(static_cast<std::size_t>(dim));
  CHECK(ps_table_lookup(en, "qqqqqq", v.data(), v.size()) == PS_ERR_NOT_FOUND);
  CHECK(ps_table_lookup(en, "qqqqqq", v.data(), 3) == PS_ERR_INVALID_ARGUMENT);

  ps_alignment* map = nullptr;
  REQUIRE(ps_align_procrustes(fr, en, (t.toy() / "dict.fr-en.tsv").c_str(), &map) == PS_OK);
  double err = 1.0;
  REQUIRE(ps_alignment_orthogonality_error(map, &err) == PS_OK);
  CHECK(err <= 1e-8);
  REQUIRE(ps_alignment_save(map, (t.dir / "fr-en.json").c_str()) == PS_OK);

  ps_alignment *loaded = nullptr, *de = nullptr, *composed = nullptr;
  REQUIRE(ps_alignment_load((t.dir / "fr-en.json").c_str(), &loaded) == PS_OK);
  REQUIRE(ps_alignment_load((t.toy() / "align.de-en.json").c_str(), &de) == PS_OK);
  REQUIRE(ps_align_compose(loaded, de, &composed) == PS_OK);
  int64_t n = 0;
  REQUIRE(ps_alignment_dim(composed, &n) == PS_OK);
  CHECK(n == 32);
  std::vector<double> m(static_cast<std::size_t>(n * n));
  REQUIRE(ps_alignment_matrix(composed, m.data(), m.size()) == PS_OK);
  REQUIRE(ps_alignment_orthogonality_error(composed, &err) == PS_OK);
  CHECK(err <= 1e-8);
  CHECK(ps_align_compose(loaded, nullptr, &composed) == PS_ERR_INVALID_ARGUMENT);

  ps_alignment_free(map);
  ps_alignment_free(loaded);
  ps_alignment_free(de);
  ps_alignment_free(composed);
  ps_table_free(en);
  ps_table_free(fr);
}

TEST_CASE("model, index and queries") {
  auto& t = toy();
  ps_model* model = nullptr;
  REQUIRE(ps_model_load(t.checkpoint().c_str(), nullptr, &model) == PS_OK);
  int64_t d = 0;
  REQUIRE(ps_model_joint_dim(model, &d) == PS_OK);
  CHECK(d == 64);
  char* langs = nullptr;
  REQUIRE(ps_model_languages(model, &langs) == PS_OK);
  CHECK(take_json(langs) == json::array({"de", "en", "fr"}));

  std::vector<double> v(static_cast<std::size_t>(d));
  CHECK(ps_model_encode_text(model, "qqqq", "en", v.data(), v.size()) == PS_ERR_INVALID_ARGUMENT);
  CHECK(ps_model_encode_text(model, "x", "zz", v.data(), v.size()) != PS_OK);

  ps_index* index = nullptr;
  REQUIRE(ps_index_build(model, t.test_manifest().c_str(), &index) == PS_OK);
  size_t images = 0, captions = 0;
  REQUIRE(ps_index_counts(index, &images, &captions) == PS_OK);
  CHECK(images == 8);
  CHECK(captions == 24);
  REQUIRE(ps_index_save(index, (t.dir / "idx.bin").c_str()) == PS_OK);
  ps_index* loaded = nullptr;
  REQUIRE(ps_index_load((t.dir / "idx.bin").c_str(), &loaded) == PS_OK);

  // First test image of concept 1 and its text.
  std::string fmap, word;
  std::ifstream manifest(t.test_manifest());
  for (std::string line; std::getline(manifest, line);) {
    const auto rec = json::parse(line);
    if (rec.at("image_id").get<std::string>().rfind("c01-", 0) == 0) {
      fmap = (fs::path(t.test_manifest()).parent_path() / rec.at("feature_path").get<std::string>()).string();
      break;
    }
  }
  REQUIRE_FALSE(fmap.empty());
  REQUIRE(ps_model_encode_fmap(model, fmap.c_str(), v.data(), v.size()) == PS_OK);
  double norm = 0;
  for (double x : v) norm += x * x;
  CHECK(std::abs(norm - 1.0) < 1e-9);

  ps_results* hits = nullptr;
  REQUIRE(ps_index_query_fmap(loaded, model, fmap.c_str(), 3, &hits) == PS_OK);
  REQUIRE(ps_results_count(hits) == 3);
  CHECK(std::string(ps_results_id(hits, 0)).rfind("c01-", 0) == 0);
  CHECK(std::string(ps_results_lang(hits, 0)).size() == 2);
  word = ps_results_text(hits, 0);
  CHECK(ps_results_score(hits, 0) >= ps_results_score(hits, 1));
  CHECK(ps_results_id(hits, 3) == nullptr);
  CHECK(std::isnan(ps_results_score(hits, 3)));
  const std::string lang = ps_results_lang(hits, 0);
  ps_results_free(hits);

  REQUIRE(ps_index_query_text(loaded, model, word.c_str(), lang.c_str(), 2, &hits) == PS_OK);
  REQUIRE(ps_results_count(hits) == 2);
  CHECK(std::string(ps_results_id(hits, 0)).rfind("c01-", 0) == 0);
  CHECK(std::string(ps_results_text(hits, 0)).empty());
  ps_results_free(hits);
  CHECK(ps_index_query_text(loaded, model, word.c_str(), lang.c_str(), 0, &hits) == PS_ERR_INVALID_ARGUMENT);

  char* out = nullptr;
  const std::string first_word = word.substr(0, word.find(' '));
  REQUIRE(ps_model_heatmap(model, first_word.c_str(), lang.c_str(), fmap.c_str(), "json", &out) == PS_OK);
  CHECK(take_json(out).size() == 4);
  REQUIRE(ps_model_heatmap(model, first_word.c_str(), lang.c_str(), fmap.c_str(), "pgm", &out) == PS_OK);
  CHECK(std::string(out).rfind("P2\n4 4\n255\n", 0) == 0);
  ps_string_free(out);
  CHECK(ps_model_heatmap(model, first_word.c_str(), lang.c_str(), fmap.c_str(), "png", &out) ==
        PS_ERR_INVALID_ARGUMENT);

  ps_index_free(index);
  ps_index_free(loaded);
  ps_model_free(model);
}

TEST_CASE("gradient check through the C API") {
  int passed = 0;
  char* report = nullptr;
  REQUIRE(ps_gradcheck("loss", 1e-6, 1, &passed, &report) == PS_OK);
  CHECK(passed == 1);
  CHECK(take_json(report).at("max_relative_error").get<double>() < 1e-6);
  CHECK(ps_gradcheck("nope", 1e-6, 1, &passed, nullptr) == PS_ERR_INVALID_ARGUMENT);
}

TEST_CASE("CLI exit codes") {
  auto& t = toy();
  const std::string ckpt = t.checkpoint();
  const std::string dir = t.dir.path().string();
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("") == 1);
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("eval --checkpoint " + ckpt) == 1);

  CHECK(run_cli("make-toy-data --out " + dir + "/cli-toy") == 0);
  CHECK(fs::exists(t.dir / "cli-toy/train.jsonl"));
  CHECK(run_cli("eval --checkpoint " + ckpt + " --manifest " + t.test_manifest() + " --batch 200 --out " + dir +
                "/report.json") == 0);
  CHECK(fs::exists(t.dir / "report.json"));
  CHECK(run_cli("eval --checkpoint " + ckpt + " --manifest /no/such.jsonl") == 1);
  CHECK(run_cli("align --src " + t.toy().string() + "/fr.vec --tgt " + t.toy().string() + "/en.vec --dict " +
                t.toy().string() + "/dict.fr-en.tsv --out " + dir + "/cli-fr-en.json") == 0);
  CHECK(run_cli("align --out " + dir + "/x.json") == 1);

  CHECK(run_cli("index --checkpoint " + ckpt + " --manifest " + t.test_manifest() + " --out " + dir + "/cli.idx") == 0);
  CHECK(run_cli("query --checkpoint " + ckpt + " --index " + dir + "/cli.idx --text hello --lang zz") == 1);
  CHECK(run_cli("query --checkpoint " + ckpt + " --index " + dir + "/cli.idx --text qqqq --lang en") == 1);
  CHECK(run_cli("gradcheck --component loss") == 0);
  CHECK(run_cli("gradcheck --component image --tolerance 1e-30") == 1);

  // A diverging run is a numeric failure, not a user error.
  write(t.dir / "diverge.json", R"({"wordspace": "toy/wordspace.json", "languages": ["en"], "epochs": 3,
                                    "batch_size": 8, "optimizer": {"learning_rate": 1e300}})");
  CHECK(run_cli("train --quiet --corpus " + t.data.at("train_manifest").get<std::string>() + " --config " + dir +
                "/diverge.json --out " + dir + "/diverge") == 2);
  write(t.dir / "bad.json", R"({"wordspace": "toy/wordspace.json", "languages": ["en"], "batch_size": 1})");
  CHECK(run_cli("train --quiet --corpus " + t.data.at("train_manifest").get<std::string>() + " --config " + dir +
                "/bad.json --out " + dir + "/bad") == 1);
}
