// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "model.hpp"
#include "retrieval.hpp"

namespace polysearch {

struct EncodedManifest {
  RetrievalIndex images;
  RetrievalIndex captions;
  std::vector<std::string> skipped;  // captions with no in-vocabulary token
};

/// Caption ids are "<image_id>#<lang>#<n>", n counting within the record.
std::string caption_id(const std::string& image_id, const std::string& lang, std::size_t n);

/// Encodes every image and every caption whose language the word space knows
/// (restricted to `languages` when given). All-OOV captions are skipped and
/// reported instead of failing the run.
EncodedManifest encode_manifest(const Model& model, const Manifest& manifest,
                                const std::optional<std::vector<std::string>>& languages = std::nullopt);

/// Images and captions of `manifest` in one index, as served by the service.
RetrievalIndex index_manifest(const Model& model, const Manifest& manifest);

RecallReport evaluate_model(const Model& model, const Manifest& manifest, std::size_t eval_batch_size = 1000,
                            const std::optional<std::vector<std::string>>& languages = std::nullopt);

}  // namespace polysearch
