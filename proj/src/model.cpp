// SPDX-License-Identifier: Apache-2.0
#include "model.hpp"

#include "io_util.hpp"

namespace polysearch {
namespace {

template <class T>
nlohmann::json tensor_json(const T& t) {
  nlohmann::json data = nlohmann::json::array();
  for (Eigen::Index r = 0; r < t.rows(); ++r)
    for (Eigen::Index c = 0; c < t.cols(); ++c) data.push_back(t(r, c));
  return {{"shape", {t.rows(), t.cols()}}, {"data", std::move(data)}};
}

template <class T>
void tensor_from_json(const std::string& name, const nlohmann::json& j, T& t) {
  const auto rows = j.at("shape").at(0).get<Eigen::Index>();
  const auto cols = j.at("shape").at(1).get<Eigen::Index>();
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw ValidationError("tensor '" + name + "' has " + std::to_string(data.size()) + " values for shape [" +
                          std::to_string(rows) + ", " + std::to_string(cols) + "]");
  if constexpr (T::ColsAtCompileTime == 1) {
    if (cols != 1 && rows * cols != 0) throw ValidationError("tensor '" + name + "' must be a column vector");
    t.resize(rows);
  } else {
    t.resize(rows, cols);
  }
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) t(r, c) = data[static_cast<std::size_t>(r * cols + c)].get<double>();
  if (!t.allFinite()) throw ValidationError("tensor '" + name + "' has non-finite values");
}

}  // namespace

nlohmann::json ModelParams::tensors_to_json() const {
  nlohmann::json out = nlohmann::json::object();
  for_each_tensor([&](const std::string& name, const auto& t) { out[name] = tensor_json(t); }, *this);
  return out;
}

void ModelParams::tensors_from_json(const nlohmann::json& j) {
  for_each_tensor(
      [&](const std::string& name, auto& t) {
        if (!j.contains(name)) throw ValidationError("checkpoint is missing tensor '" + name + "'");
        tensor_from_json(name, j.at(name), t);
      },
      *this);
}

Model::Model(std::shared_ptr<const WordSpace> words, ModelParams params)
    : words_(std::move(words)), params_(std::move(params)) {
  if (!words_) throw ValidationError("model needs a word space");
  if (words_->dim() != params_.text.input_dim())
    throw ValidationError("word space has E=" + std::to_string(words_->dim()) + " but the text encoder expects " +
                          std::to_string(params_.text.input_dim()));
  if (params_.text.joint_dim() != params_.image.joint_dim())
    throw ValidationError("text and image encoders disagree on the joint dimension");
}

Model Model::load(const std::filesystem::path& checkpoint, const std::filesystem::path& wordspace_override) {
  const nlohmann::json j = read_json_file(checkpoint);
  try {
    ModelParams params;
    params.text.layers.resize(TextEncoderParams::kLayers);
    params.tensors_from_json(j.at("params"));
    params.text.dropout = j.at("config").value("dropout", 0.25);
    params.image.k_pos = j.at("weldon").at("k_pos").get<int>();
    params.image.k_neg = j.at("weldon").at("k_neg").get<int>();

    std::filesystem::path ws_path = wordspace_override;
    if (ws_path.empty()) {
      ws_path = j.at("wordspace").get<std::string>();
      if (ws_path.is_relative()) ws_path = checkpoint.parent_path() / ws_path;
    }
    return Model(std::make_shared<const WordSpace>(WordSpace::load(ws_path)), std::move(params));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed checkpoint " + checkpoint.string() + ": " + e.what());
  }
}

JointVector Model::encode_text(std::string_view text, std::string_view lang) const {
  return encode_sentence(tokenize(text, lang), *words_, params_.text, Mode::kEval);
}

JointVector Model::encode_image(const FeatureMap& fm) const { return polysearch::encode_image(fm, params_.image); }

Matrix Model::heatmap(std::string_view word, std::string_view lang, const FeatureMap& fm) const {
  const TokenSequence seq = tokenize(word, lang);
  if (seq.tokens.size() != 1) throw ValidationError("heatmap needs exactly one word, got '" + std::string(word) + "'");
  if (!words_->has_language(lang)) throw ValidationError("language '" + std::string(lang) + "' is not loaded");
  if (!words_->lookup(lang, seq.tokens.front()))
    throw ValidationError("'" + seq.tokens.front() + "' is not in the " + std::string(lang) + " vocabulary");
  return polysearch::heatmap(encode_sentence(seq, *words_, params_.text), fm, params_.image);
}

}  // namespace polysearch
