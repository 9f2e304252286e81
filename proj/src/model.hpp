// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "embeddings.hpp"
#include "image_encoder.hpp"
#include "text_encoder.hpp"

namespace polysearch {

/// Every trainable tensor of both encoders.
struct ModelParams {
  TextEncoderParams text;
  ImageEncoderParams image;

  ModelParams zeros_like() const { return {text.zeros_like(), image.zeros_like()}; }

  template <class F, class... P>
  static void for_each_tensor(F&& f, P&... p) {
    TextEncoderParams::for_each_tensor(f, p.text...);
    ImageEncoderParams::for_each_tensor(f, p.image...);
  }

  /// {"name": {"shape": [rows, cols], "data": [... row-major ...]}, ...}
  nlohmann::json tensors_to_json() const;
  /// Overwrites tensors from JSON; shapes must match `*this` unless the
  /// tensors are empty, in which case they are taken from the JSON.
  void tensors_from_json(const nlohmann::json& j);
};

/// A loaded checkpoint bound to the word space its text encoder reads from.
class Model {
 public:
  Model(std::shared_ptr<const WordSpace> words, ModelParams params);

  /// Reads a checkpoint. The word space comes from `wordspace_override` when
  /// non-empty, otherwise from the path recorded in the checkpoint.
  static Model load(const std::filesystem::path& checkpoint, const std::filesystem::path& wordspace_override = {});

  const WordSpace& words() const { return *words_; }
  std::shared_ptr<const WordSpace> shared_words() const { return words_; }
  const ModelParams& params() const { return params_; }
  Eigen::Index joint_dim() const { return params_.text.joint_dim(); }

  JointVector encode_text(std::string_view text, std::string_view lang) const;
  JointVector encode_image(const FeatureMap& fm) const;
  /// Per-location activation of `word` over `fm`. Throws ValidationError when
  /// the word is out of vocabulary.
  Matrix heatmap(std::string_view word, std::string_view lang, const FeatureMap& fm) const;

 private:
  std::shared_ptr<const WordSpace> words_;
  ModelParams params_;
};

}  // namespace polysearch
