// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "corpus.hpp"
#include "loss.hpp"
#include "model.hpp"
#include "optimizer.hpp"

namespace polysearch {

/// rnn_fc trains the recurrent stack and both projections with the image
/// adapter frozen; finetune_all also trains the adapter.
enum class Stage { kRnnFc, kFinetuneAll };

std::string to_string(Stage stage);
Stage stage_from_string(const std::string& name);

struct TrainConfig {
  std::filesystem::path wordspace;
  std::vector<std::string> languages;  // captions used for training
  Stage stage = Stage::kRnnFc;         // stage of the first epoch
  int finetune_from_epoch = -1;        // switch to finetune_all here; < 0 never
  int epochs = 30;
  std::size_t batch_size = 32;
  std::uint64_t seed = 7;
  double dropout = 0.25;
  double margin = kDefaultMargin;
  AdamOptions optimizer;
  Eigen::Index hidden_dim = 64;
  Eigen::Index joint_dim = 64;
  std::optional<int> k_pos;  // default: max(1, floor(H*W/10))
  std::optional<int> k_neg;
  bool keep_epoch_checkpoints = false;

  /// Relative `wordspace` paths resolve against `base_dir`.
  static TrainConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  nlohmann::json to_json() const;
  void validate() const;
  Stage stage_for_epoch(int epoch) const;
};

/// Feature maps and resolved caption vectors for one manifest, held in memory.
struct TrainingData {
  Manifest manifest;
  std::vector<FeatureMap> features;               // per record
  std::vector<std::vector<Matrix>> caption_vectors;  // [record][caption], E x T; empty when filtered out

  static TrainingData load(Manifest manifest, const WordSpace& words, const std::vector<std::string>& languages);
};

/// Views into one batch; entry p pairs images[p] with captions[p].
struct BatchInputs {
  std::vector<std::string> image_ids;
  std::vector<const FeatureMap*> images;
  std::vector<const Matrix*> captions;
};

struct BatchStep {
  BatchLoss loss;
  ModelParams grads;
};

/// Encodes every distinct image once and every caption, evaluates the
/// hardest-negative batch loss and backpropagates it into parameter
/// gradients. `rng` drives dropout and is required in train mode.
BatchStep batch_forward_backward(const ModelParams& params, const BatchInputs& batch, double margin, Mode mode,
                                 std::mt19937_64* rng);

struct EpochStats {
  int epoch = 0;
  Stage stage = Stage::kRnnFc;
  double mean_loss = 0.0;
  double learning_rate = 0.0;
  std::size_t batches = 0;
};

struct TrainResult {
  ModelParams params;
  std::vector<double> loss_curve;  // mean batch loss per epoch
  std::filesystem::path checkpoint;
};

/// Initial parameters for the given data and config.
ModelParams init_params(const TrainConfig& config, Eigen::Index word_dim, const FeatureMap& sample);

/// Trains from scratch. Writes `checkpoint.json` into `out_dir` after every
/// epoch (plus `checkpoint-epochNN.json` when keep_epoch_checkpoints).
/// Throws NumericError on a non-finite loss or gradient.
TrainResult train(const Manifest& corpus, const TrainConfig& config, const std::filesystem::path& out_dir,
                  const std::function<void(const EpochStats&)>& on_epoch = {});

nlohmann::json make_checkpoint(const ModelParams& params, const TrainConfig& config, int epoch,
                               const std::vector<double>& loss_curve);

}  // namespace polysearch
