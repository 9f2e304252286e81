// SPDX-License-Identifier: Apache-2.0
// Command-line front end. Talks to the library only through the C API.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "polysearch/polysearch.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitInternal = 2;

// Thrown to unwind out of a subcommand with the status of a failed call.
struct CallFailed {
  ps_status status;
};

void check(ps_status status) {
  if (status != PS_OK) throw CallFailed{status};
}

int exit_code(ps_status status) {
  switch (status) {
    case PS_OK:
      return kExitOk;
    case PS_ERR_INVALID_ARGUMENT:
    case PS_ERR_NOT_FOUND:
    case PS_ERR_IO:
    case PS_ERR_CONFLICT:
      return kExitValidation;
    default:
      return kExitInternal;
  }
}

struct StringDeleter {
  void operator()(char* s) const { ps_string_free(s); }
};
using OwnedString = std::unique_ptr<char, StringDeleter>;

template <class T, void (*Free)(T*)>
struct HandleDeleter {
  void operator()(T* p) const { Free(p); }
};
using Model = std::unique_ptr<ps_model, HandleDeleter<ps_model, ps_model_free>>;
using Index = std::unique_ptr<ps_index, HandleDeleter<ps_index, ps_index_free>>;
using Table = std::unique_ptr<ps_table, HandleDeleter<ps_table, ps_table_free>>;
using Alignment = std::unique_ptr<ps_alignment, HandleDeleter<ps_alignment, ps_alignment_free>>;
using Results = std::unique_ptr<ps_results, HandleDeleter<ps_results, ps_results_free>>;

void write_file(const std::string& path, const std::string& contents) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << contents;
  if (!out) throw std::runtime_error("cannot write " + path);
}

Model load_model(const std::string& checkpoint, const std::string& wordspace) {
  ps_model* m = nullptr;
  check(ps_model_load(checkpoint.c_str(), wordspace.empty() ? nullptr : wordspace.c_str(), &m));
  return Model(m);
}

void print_results(const ps_results* r, bool captions) {
  for (size_t i = 0; i < ps_results_count(r); ++i) {
    if (captions)
      std::printf("%2zu  %.6f  %-24s [%s] %s\n", i + 1, ps_results_score(r, i), ps_results_id(r, i),
                  ps_results_lang(r, i), ps_results_text(r, i));
    else
      std::printf("%2zu  %.6f  %s\n", i + 1, ps_results_score(r, i), ps_results_id(r, i));
  }
}

std::string stem_lang(const std::string& path) { return std::filesystem::path(path).stem().string(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"polysearch: multilingual image and caption retrieval"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ps_version()));

  // train
  std::string corpus, train_config, train_out;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "Train both encoders on a manifest");
  train->add_option("--corpus", corpus, "Training manifest (JSONL)")->required();
  train->add_option("--config", train_config, "Training config (JSON)")->required();
  train->add_option("--out", train_out, "Output directory for checkpoints")->required();
  train->add_flag("--quiet", quiet, "Do not print per-epoch progress");

  // eval
  std::string eval_checkpoint, eval_manifest, eval_out;
  std::size_t eval_batch = 1000;
  auto* eval = app.add_subcommand("eval", "Recall@{1,5,10} of a checkpoint on a manifest");
  eval->add_option("--checkpoint", eval_checkpoint)->required();
  eval->add_option("--manifest", eval_manifest)->required();
  eval->add_option("--batch", eval_batch, "Evaluation batch size (images)")->capture_default_str();
  eval->add_option("--out", eval_out, "Write the report as JSON here");

  // align
  std::string align_src, align_tgt, align_dict, align_out, src_lang, tgt_lang;
  std::vector<std::string> compose;
  auto* align = app.add_subcommand("align", "Fit an orthogonal map between two embedding tables");
  align->add_option("--src", align_src, "Source table (word2vec text)");
  align->add_option("--tgt", align_tgt, "Target table (word2vec text)");
  align->add_option("--dict", align_dict, "Seed dictionary (source<TAB>target)");
  align->add_option("--src-lang", src_lang, "Source language code (default: file stem)");
  align->add_option("--tgt-lang", tgt_lang, "Target language code (default: file stem)");
  align->add_option("--compose", compose, "Two maps a->pivot and b->pivot; writes a->b")->expected(2);
  align->add_option("--out", align_out, "Output map (JSON)")->required();

  // make-toy-data
  std::string toy_spec, toy_out;
  auto* toy = app.add_subcommand("make-toy-data", "Generate the synthetic toy corpus");
  toy->add_option("--spec", toy_spec, "Toy spec (JSON); defaults when omitted");
  toy->add_option("--out", toy_out, "Output directory")->required();

  // index
  std::string index_checkpoint, index_manifest, index_out, index_wordspace;
  auto* index = app.add_subcommand("index", "Encode a manifest into an index snapshot");
  index->add_option("--checkpoint", index_checkpoint)->required();
  index->add_option("--manifest", index_manifest)->required();
  index->add_option("--wordspace", index_wordspace, "Override the checkpoint's word space");
  index->add_option("--out", index_out, "Snapshot path")->required();

  // query
  std::string query_checkpoint, query_index, query_text, query_fmap, query_lang, query_wordspace;
  std::size_t query_k = 10;
  auto* query = app.add_subcommand("query", "Query an index snapshot with text or a feature map");
  query->add_option("--checkpoint", query_checkpoint)->required();
  query->add_option("--index", query_index, "Index snapshot")->required();
  query->add_option("--wordspace", query_wordspace, "Override the checkpoint's word space");
  auto* text_opt = query->add_option("--text", query_text, "Text query (returns images)");
  auto* fmap_opt = query->add_option("--fmap", query_fmap, "FMAP query (returns captions)");
  text_opt->excludes(fmap_opt);
  query->add_option("--lang", query_lang, "Language of --text");
  query->add_option("-k,--k", query_k, "Number of results")->capture_default_str();

  // serve
  std::string serve_config;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  serve->add_option("--config", serve_config, "Service config (JSON)")->required();

  // heatmap
  std::string hm_checkpoint, hm_word, hm_lang, hm_fmap, hm_format = "json", hm_out, hm_wordspace;
  auto* heat = app.add_subcommand("heatmap", "Per-location activation of a word over a feature map");
  heat->add_option("--checkpoint", hm_checkpoint)->required();
  heat->add_option("--word", hm_word)->required();
  heat->add_option("--lang", hm_lang)->required();
  heat->add_option("--fmap", hm_fmap)->required();
  heat->add_option("--wordspace", hm_wordspace, "Override the checkpoint's word space");
  heat->add_option("--format", hm_format)->check(CLI::IsMember({"json", "pgm"}))->capture_default_str();
  heat->add_option("--out", hm_out, "Write here instead of stdout");

  // gradcheck
  std::string gc_component = "all";
  std::optional<double> gc_tolerance;
  std::uint64_t gc_seed = 1;
  auto* grad = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
  grad->add_option("--component", gc_component)
      ->check(CLI::IsMember({"text", "image", "loss", "full", "all"}))
      ->capture_default_str();
  grad->add_option("--tolerance", gc_tolerance, "Default 1e-6 for loss, 1e-4 otherwise");
  grad->add_option("--seed", gc_seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (train->parsed()) {
      OwnedString summary;
      char* raw = nullptr;
      auto progress = [](int epoch, const char* stage, double loss, double lr, void*) {
        std::printf("epoch %3d  %-12s  lr %.2e  loss %.6f\n", epoch, stage, lr, loss);
        std::fflush(stdout);
      };
      check(ps_train(corpus.c_str(), train_config.c_str(), train_out.c_str(), quiet ? nullptr : +progress, nullptr,
                     &raw));
      summary.reset(raw);
      std::printf("%s\n", summary.get());
    } else if (eval->parsed()) {
      char* json = nullptr;
      char* table = nullptr;
      check(ps_evaluate(eval_checkpoint.c_str(), eval_manifest.c_str(), eval_batch, &json, &table));
      OwnedString j(json), t(table);
      std::fputs(t.get(), stdout);
      if (!eval_out.empty()) write_file(eval_out, std::string(j.get()) + "\n");
    } else if (align->parsed()) {
      ps_alignment* raw = nullptr;
      if (!compose.empty()) {
        if (!align_src.empty() || !align_tgt.empty() || !align_dict.empty()) {
          std::fprintf(stderr, "error: --compose cannot be combined with --src/--tgt/--dict\n");
          return kExitValidation;
        }
        ps_alignment* a = nullptr;
        ps_alignment* b = nullptr;
        check(ps_alignment_load(compose[0].c_str(), &a));
        Alignment a_owned(a);
        check(ps_alignment_load(compose[1].c_str(), &b));
        Alignment b_owned(b);
        check(ps_align_compose(a, b, &raw));
      } else {
        if (align_src.empty() || align_tgt.empty() || align_dict.empty()) {
          std::fprintf(stderr, "error: align needs --src, --tgt and --dict (or --compose)\n");
          return kExitValidation;
        }
        ps_table* src = nullptr;
        ps_table* tgt = nullptr;
        check(ps_table_load(align_src.c_str(), (src_lang.empty() ? stem_lang(align_src) : src_lang).c_str(), &src));
        Table src_owned(src);
        check(ps_table_load(align_tgt.c_str(), (tgt_lang.empty() ? stem_lang(align_tgt) : tgt_lang).c_str(), &tgt));
        Table tgt_owned(tgt);
        check(ps_align_procrustes(src, tgt, align_dict.c_str(), &raw));
      }
      Alignment map(raw);
      check(ps_alignment_save(map.get(), align_out.c_str()));
      double err = 0.0;
      check(ps_alignment_orthogonality_error(map.get(), &err));
      std::printf("wrote %s (max |W^T W - I| = %.3e)\n", align_out.c_str(), err);
    } else if (toy->parsed()) {
      char* raw = nullptr;
      check(ps_make_toy_data(toy_spec.empty() ? nullptr : toy_spec.c_str(), toy_out.c_str(), &raw));
      OwnedString summary(raw);
      std::printf("%s\n", summary.get());
    } else if (index->parsed()) {
      Model model = load_model(index_checkpoint, index_wordspace);
      ps_index* raw = nullptr;
      check(ps_index_build(model.get(), index_manifest.c_str(), &raw));
      Index idx(raw);
      check(ps_index_save(idx.get(), index_out.c_str()));
      std::size_t images = 0, captions = 0;
      check(ps_index_counts(idx.get(), &images, &captions));
      std::printf("indexed %zu images and %zu captions into %s\n", images, captions, index_out.c_str());
    } else if (query->parsed()) {
      if (query_text.empty() == query_fmap.empty()) {
        std::fprintf(stderr, "error: give exactly one of --text or --fmap\n");
        return kExitValidation;
      }
      if (!query_text.empty() && query_lang.empty()) {
        std::fprintf(stderr, "error: --text needs --lang\n");
        return kExitValidation;
      }
      Model model = load_model(query_checkpoint, query_wordspace);
      ps_index* raw_index = nullptr;
      check(ps_index_load(query_index.c_str(), &raw_index));
      Index idx(raw_index);
      ps_results* raw = nullptr;
      if (!query_text.empty())
        check(ps_index_query_text(idx.get(), model.get(), query_text.c_str(), query_lang.c_str(), query_k, &raw));
      else
        check(ps_index_query_fmap(idx.get(), model.get(), query_fmap.c_str(), query_k, &raw));
      Results results(raw);
      print_results(results.get(), query_text.empty());
    } else if (serve->parsed()) {
      auto listening = [](int port, void*) {
        std::printf("listening on port %d\n", port);
        std::fflush(stdout);
      };
      check(ps_serve(serve_config.c_str(), +listening, nullptr));
    } else if (heat->parsed()) {
      Model model = load_model(hm_checkpoint, hm_wordspace);
      char* raw = nullptr;
      check(ps_model_heatmap(model.get(), hm_word.c_str(), hm_lang.c_str(), hm_fmap.c_str(), hm_format.c_str(), &raw));
      OwnedString out(raw);
      std::string text(out.get());
      if (hm_format == "json") text += "\n";
      if (hm_out.empty())
        std::fputs(text.c_str(), stdout);
      else
        write_file(hm_out, text);
    } else if (grad->parsed()) {
      std::vector<std::string> components = {gc_component};
      if (gc_component == "all") components = {"text", "image", "loss", "full"};
      bool all_passed = true;
      for (const auto& c : components) {
        const double tol = gc_tolerance.value_or(c == "loss" ? 1e-6 : 1e-4);
        int passed = 0;
        char* raw = nullptr;
        check(ps_gradcheck(c.c_str(), tol, gc_seed, &passed, &raw));
        OwnedString report(raw);
        std::printf("%s\n", report.get());
        all_passed = all_passed && passed;
      }
      return all_passed ? kExitOk : kExitValidation;
    }
  } catch (const CallFailed& e) {
    std::fprintf(stderr, "error: %s\n", ps_last_error());
    return exit_code(e.status);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInternal;
  }
  return kExitOk;
}
