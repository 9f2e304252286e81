// SPDX-License-Identifier: Apache-2.0
#include "polysearch/polysearch.h"

#include <cmath>
#include <cstring>
#include <limits>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "embeddings.hpp"
#include "evaluation.hpp"
#include "gradcheck.hpp"
#include "io_util.hpp"
#include "model.hpp"
#include "retrieval.hpp"
#include "service.hpp"
#include "trainer.hpp"

struct ps_table {
  polysearch::EmbeddingTable table;
};

struct ps_alignment {
  polysearch::AlignmentMap map;
};

struct ps_model {
  polysearch::Model model;
};

struct ps_index {
  polysearch::RetrievalIndex index;
};

struct ps_results {
  struct Row {
    std::string id;
    double score;
    std::string text;
    std::string lang;
  };
  std::vector<Row> rows;
};

namespace {

thread_local std::string last_error;

ps_status fail(ps_status status, const char* what) {
  last_error = what;
  return status;
}

// Runs `body`, translating exceptions into status codes.
template <class F>
ps_status guard(F&& body) {
  try {
    body();
    return PS_OK;
  } catch (const polysearch::ValidationError& e) {
    return fail(PS_ERR_INVALID_ARGUMENT, e.what());
  } catch (const polysearch::NotFoundError& e) {
    return fail(PS_ERR_NOT_FOUND, e.what());
  } catch (const polysearch::IoError& e) {
    return fail(PS_ERR_IO, e.what());
  } catch (const polysearch::ConflictError& e) {
    return fail(PS_ERR_CONFLICT, e.what());
  } catch (const polysearch::NumericError& e) {
    return fail(PS_ERR_NUMERIC, e.what());
  } catch (const std::exception& e) {
    return fail(PS_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(PS_ERR_INTERNAL, "unknown exception");
  }
}

void require(const void* p, const char* name) {
  if (p == nullptr) throw polysearch::ValidationError(std::string(name) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void copy_vector(const polysearch::Vector& v, double* out, size_t out_len) {
  require(out, "out");
  if (out_len < static_cast<size_t>(v.size()))
    throw polysearch::ValidationError("output buffer holds " + std::to_string(out_len) + " values, need " +
                                      std::to_string(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) out[i] = v[i];
}

ps_results* to_results(const polysearch::RetrievalIndex& index, const std::vector<polysearch::SearchHit>& hits) {
  auto* r = new ps_results;
  for (const auto& hit : hits) {
    const auto& item = index.items()[hit.item];
    r->rows.push_back({hit.id, hit.score, item.text, item.lang});
  }
  return r;
}

}  // namespace

extern "C" {

const char* ps_version(void) { return "0.1.0"; }

const char* ps_last_error(void) { return last_error.c_str(); }

void ps_string_free(char* s) { delete[] s; }

ps_status ps_table_load(const char* path, const char* lang, ps_table** out) {
  return guard([&] {
    require(path, "path");
    require(lang, "lang");
    require(out, "out");
    *out = new ps_table{polysearch::load_table(path, lang)};
  });
}

void ps_table_free(ps_table* table) { delete table; }

ps_status ps_table_shape(const ps_table* table, int64_t* size, int64_t* dim) {
  return guard([&] {
    require(table, "table");
    if (size) *size = table->table.size();
    if (dim) *dim = table->table.dim();
  });
}

ps_status ps_table_lookup(const ps_table* table, const char* token, double* out, size_t out_len) {
  return guard([&] {
    require(table, "table");
    require(token, "token");
    copy_vector(polysearch::Vector::Zero(table->table.dim()), out, out_len);
    auto v = table->table.lookup(token);
    if (!v) throw polysearch::NotFoundError(std::string("'") + token + "' is out of vocabulary");
    copy_vector(*v, out, out_len);
  });
}

ps_status ps_align_procrustes(const ps_table* source, const ps_table* target, const char* dictionary_path,
                              ps_alignment** out) {
  return guard([&] {
    require(source, "source");
    require(target, "target");
    require(dictionary_path, "dictionary_path");
    require(out, "out");
    *out = new ps_alignment{
        polysearch::procrustes_align(source->table, target->table, polysearch::load_dictionary(dictionary_path))};
  });
}

ps_status ps_align_compose(const ps_alignment* a_to_pivot, const ps_alignment* b_to_pivot, ps_alignment** out) {
  return guard([&] {
    require(a_to_pivot, "a_to_pivot");
    require(b_to_pivot, "b_to_pivot");
    require(out, "out");
    *out = new ps_alignment{polysearch::compose_via_pivot(a_to_pivot->map, b_to_pivot->map)};
  });
}

ps_status ps_alignment_load(const char* path, ps_alignment** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = new ps_alignment{polysearch::AlignmentMap::load(path)};
  });
}

ps_status ps_alignment_save(const ps_alignment* map, const char* path) {
  return guard([&] {
    require(map, "map");
    require(path, "path");
    map->map.save(path);
  });
}

void ps_alignment_free(ps_alignment* map) { delete map; }

ps_status ps_alignment_dim(const ps_alignment* map, int64_t* dim) {
  return guard([&] {
    require(map, "map");
    require(dim, "dim");
    *dim = map->map.dim();
  });
}

ps_status ps_alignment_matrix(const ps_alignment* map, double* out, size_t out_len) {
  return guard([&] {
    require(map, "map");
    require(out, "out");
    const auto& w = map->map.matrix();
    if (out_len < static_cast<size_t>(w.size())) throw polysearch::ValidationError("output buffer too small");
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) out[r * w.cols() + c] = w(r, c);
  });
}

ps_status ps_alignment_orthogonality_error(const ps_alignment* map, double* out) {
  return guard([&] {
    require(map, "map");
    require(out, "out");
    *out = polysearch::orthogonality_error(map->map.matrix());
  });
}

ps_status ps_model_load(const char* checkpoint, const char* wordspace, ps_model** out) {
  return guard([&] {
    require(checkpoint, "checkpoint");
    require(out, "out");
    *out = new ps_model{polysearch::Model::load(checkpoint, wordspace ? wordspace : "")};
  });
}

void ps_model_free(ps_model* model) { delete model; }

ps_status ps_model_joint_dim(const ps_model* model, int64_t* dim) {
  return guard([&] {
    require(model, "model");
    require(dim, "dim");
    *dim = model->model.joint_dim();
  });
}

ps_status ps_model_languages(const ps_model* model, char** out_json) {
  return guard([&] {
    require(model, "model");
    require(out_json, "out_json");
    *out_json = dup_string(nlohmann::json(model->model.words().languages()).dump());
  });
}

ps_status ps_model_encode_text(const ps_model* model, const char* text, const char* lang, double* out,
                               size_t out_len) {
  return guard([&] {
    require(model, "model");
    require(text, "text");
    require(lang, "lang");
    copy_vector(model->model.encode_text(text, lang).values(), out, out_len);
  });
}

ps_status ps_model_encode_fmap(const ps_model* model, const char* fmap_path, double* out, size_t out_len) {
  return guard([&] {
    require(model, "model");
    require(fmap_path, "fmap_path");
    copy_vector(model->model.encode_image(polysearch::FeatureMap::load(fmap_path)).values(), out, out_len);
  });
}

ps_status ps_model_heatmap(const ps_model* model, const char* word, const char* lang, const char* fmap_path,
                           const char* format, char** out) {
  return guard([&] {
    require(model, "model");
    require(word, "word");
    require(lang, "lang");
    require(fmap_path, "fmap_path");
    require(out, "out");
    const std::string fmt = format ? format : "json";
    if (fmt != "json" && fmt != "pgm") throw polysearch::ValidationError("heatmap format must be json or pgm");
    const auto map = model->model.heatmap(word, lang, polysearch::FeatureMap::load(fmap_path));
    *out = dup_string(fmt == "json" ? polysearch::heatmap_to_json(map) : polysearch::heatmap_to_pgm(map));
  });
}

ps_status ps_index_build(const ps_model* model, const char* manifest_path, ps_index** out) {
  return guard([&] {
    require(model, "model");
    require(manifest_path, "manifest_path");
    require(out, "out");
    *out = new ps_index{polysearch::index_manifest(model->model, polysearch::load_manifest(manifest_path))};
  });
}

ps_status ps_index_load(const char* path, ps_index** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = new ps_index{polysearch::RetrievalIndex::load(path)};
  });
}

ps_status ps_index_save(const ps_index* index, const char* path) {
  return guard([&] {
    require(index, "index");
    require(path, "path");
    index->index.save(path);
  });
}

void ps_index_free(ps_index* index) { delete index; }

ps_status ps_index_counts(const ps_index* index, size_t* images, size_t* captions) {
  return guard([&] {
    require(index, "index");
    if (images) *images = index->index.count(polysearch::Modality::kImage);
    if (captions) *captions = index->index.count(polysearch::Modality::kCaption);
  });
}

ps_status ps_index_query_text(const ps_index* index, const ps_model* model, const char* text, const char* lang,
                              size_t k, ps_results** out) {
  return guard([&] {
    require(index, "index");
    require(model, "model");
    require(text, "text");
    require(lang, "lang");
    require(out, "out");
    const auto query = model->model.encode_text(text, lang);
    *out = to_results(index->index,
                      index->index.search(query, k, {polysearch::Modality::kImage, std::nullopt}));
  });
}

ps_status ps_index_query_fmap(const ps_index* index, const ps_model* model, const char* fmap_path, size_t k,
                              ps_results** out) {
  return guard([&] {
    require(index, "index");
    require(model, "model");
    require(fmap_path, "fmap_path");
    require(out, "out");
    const auto query = model->model.encode_image(polysearch::FeatureMap::load(fmap_path));
    *out = to_results(index->index,
                      index->index.search(query, k, {polysearch::Modality::kCaption, std::nullopt}));
  });
}

size_t ps_results_count(const ps_results* results) { return results ? results->rows.size() : 0; }

const char* ps_results_id(const ps_results* results, size_t i) {
  return results && i < results->rows.size() ? results->rows[i].id.c_str() : nullptr;
}

double ps_results_score(const ps_results* results, size_t i) {
  return results && i < results->rows.size() ? results->rows[i].score : std::numeric_limits<double>::quiet_NaN();
}

const char* ps_results_text(const ps_results* results, size_t i) {
  return results && i < results->rows.size() ? results->rows[i].text.c_str() : nullptr;
}

const char* ps_results_lang(const ps_results* results, size_t i) {
  return results && i < results->rows.size() ? results->rows[i].lang.c_str() : nullptr;
}

void ps_results_free(ps_results* results) { delete results; }

ps_status ps_make_toy_data(const char* spec_path, const char* out_dir, char** summary_json) {
  return guard([&] {
    require(out_dir, "out_dir");
    const polysearch::ToySpec spec =
        spec_path ? polysearch::ToySpec::from_json(polysearch::read_json_file(spec_path)) : polysearch::ToySpec{};
    const auto ds = polysearch::make_toy_dataset(spec, out_dir);
    if (summary_json) {
      const std::filesystem::path dir(out_dir);
      nlohmann::json s = {{"train_manifest", (dir / "train.jsonl").string()},
                          {"wordspace", ds.wordspace_path.string()},
                          {"train_images", ds.train.records.size()},
                          {"test_images", ds.test.records.size()},
                          {"languages", spec.languages},
                          {"zero_shot_languages", spec.zero_shot_languages}};
      if (!ds.test.records.empty()) s["test_manifest"] = (dir / "test.jsonl").string();
      *summary_json = dup_string(s.dump());
    }
  });
}

ps_status ps_train(const char* manifest, const char* config_path, const char* out_dir, ps_epoch_callback callback,
                   void* user, char** summary_json) {
  return guard([&] {
    require(manifest, "manifest");
    require(config_path, "config_path");
    require(out_dir, "out_dir");
    const std::filesystem::path cfg_path(config_path);
    const auto config =
        polysearch::TrainConfig::from_json(polysearch::read_json_file(cfg_path), cfg_path.parent_path());
    const auto corpus = polysearch::load_manifest(manifest);
    const auto result = polysearch::train(corpus, config, out_dir, [&](const polysearch::EpochStats& s) {
      if (callback) callback(s.epoch, polysearch::to_string(s.stage).c_str(), s.mean_loss, s.learning_rate, user);
    });
    if (summary_json)
      *summary_json = dup_string(
          nlohmann::json{{"checkpoint", result.checkpoint.string()}, {"loss_curve", result.loss_curve}}.dump());
  });
}

ps_status ps_evaluate(const char* checkpoint, const char* manifest, size_t eval_batch_size, char** report_json,
                      char** report_table) {
  return guard([&] {
    require(checkpoint, "checkpoint");
    require(manifest, "manifest");
    const auto model = polysearch::Model::load(checkpoint);
    const auto report = polysearch::evaluate_model(model, polysearch::load_manifest(manifest), eval_batch_size);
    if (report_json) *report_json = dup_string(report.to_json().dump(2));
    if (report_table) *report_table = dup_string(report.to_table());
  });
}

ps_status ps_gradcheck(const char* component, double tolerance, uint64_t seed, int* passed, char** report_json) {
  return guard([&] {
    require(component, "component");
    if (!(tolerance > 0.0)) throw polysearch::ValidationError("tolerance must be positive");
    const auto r = polysearch::gradient_check(component, tolerance, seed);
    if (passed) *passed = r.passed ? 1 : 0;
    if (report_json)
      *report_json = dup_string(nlohmann::json{{"component", r.component},
                                               {"max_relative_error", r.max_relative_error},
                                               {"worst_entry", r.worst_entry},
                                               {"checked", r.checked},
                                               {"tolerance", r.tolerance},
                                               {"passed", r.passed}}
                                    .dump());
  });
}

ps_status ps_serve(const char* config_path, ps_listen_callback callback, void* user) {
  return guard([&] {
    require(config_path, "config_path");
    polysearch::serve(polysearch::ServiceConfig::load(config_path), [&](int port) {
      if (callback) callback(port, user);
    });
  });
}

}  // extern "C"
