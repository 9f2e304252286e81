// SPDX-License-Identifier: Apache-2.0
#include "evaluation.hpp"

#include <algorithm>
#include <map>

#include "log.hpp"

namespace polysearch {

std::string caption_id(const std::string& image_id, const std::string& lang, std::size_t n) {
  return image_id + "#" + lang + "#" + std::to_string(n);
}

EncodedManifest encode_manifest(const Model& model, const Manifest& manifest,
                                const std::optional<std::vector<std::string>>& languages) {
  EncodedManifest out;
  for (const auto& rec : manifest.records) {
    IndexItem img;
    img.id = rec.image_id;
    img.modality = Modality::kImage;
    img.feature_path = rec.feature_path.string();
    img.vector = model.encode_image(FeatureMap::load(rec.feature_path));
    out.images.add(std::move(img));

    std::map<std::string, std::size_t> per_lang;
    for (const auto& cap : rec.captions) {
      const std::size_t n = per_lang[cap.lang]++;
      if (languages && std::find(languages->begin(), languages->end(), cap.lang) == languages->end()) continue;
      if (!model.words().has_language(cap.lang)) {
        log().warn("skipping caption of '{}': language '{}' is not in the word space", rec.image_id, cap.lang);
        continue;
      }
      IndexItem item;
      item.id = caption_id(rec.image_id, cap.lang, n);
      item.modality = Modality::kCaption;
      item.lang = cap.lang;
      item.text = cap.text;
      item.image_id = rec.image_id;
      try {
        item.vector = model.encode_text(cap.text, cap.lang);
      } catch (const ValidationError& e) {
        log().warn("skipping caption '{}': {}", item.id, e.what());
        out.skipped.push_back(item.id);
        continue;
      }
      out.captions.add(std::move(item));
    }
  }
  return out;
}

RetrievalIndex index_manifest(const Model& model, const Manifest& manifest) {
  EncodedManifest encoded = encode_manifest(model, manifest);
  RetrievalIndex index = std::move(encoded.images);
  for (const auto& item : encoded.captions.items()) index.add(item);
  return index;
}

RecallReport evaluate_model(const Model& model, const Manifest& manifest, std::size_t eval_batch_size,
                            const std::optional<std::vector<std::string>>& languages) {
  const EncodedManifest encoded = encode_manifest(model, manifest, languages);
  return evaluate_recall(encoded.images, encoded.captions, eval_batch_size);
}

}  // namespace polysearch
