// SPDX-License-Identifier: Apache-2.0
#include "trainer.hpp"

#include <cstdio>
#include <map>

#include "io_util.hpp"
#include "log.hpp"

namespace polysearch {

std::string to_string(Stage stage) { return stage == Stage::kRnnFc ? "rnn_fc" : "finetune_all"; }

Stage stage_from_string(const std::string& name) {
  if (name == "rnn_fc") return Stage::kRnnFc;
  if (name == "finetune_all") return Stage::kFinetuneAll;
  throw ValidationError("unknown training stage '" + name + "' (expected rnn_fc or finetune_all)");
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  TrainConfig c;
  try {
    c.wordspace = j.at("wordspace").get<std::string>();
    if (c.wordspace.is_relative() && !base_dir.empty()) c.wordspace = base_dir / c.wordspace;
    c.languages = j.at("languages").get<std::vector<std::string>>();
    c.stage = stage_from_string(j.value("stage", std::string("rnn_fc")));
    c.finetune_from_epoch = j.value("finetune_from_epoch", c.finetune_from_epoch);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.dropout = j.value("dropout", c.dropout);
    c.margin = j.value("margin", c.margin);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.joint_dim = j.value("joint_dim", c.joint_dim);
    if (j.contains("k_pos") && !j.at("k_pos").is_null()) c.k_pos = j.at("k_pos").get<int>();
    if (j.contains("k_neg") && !j.at("k_neg").is_null()) c.k_neg = j.at("k_neg").get<int>();
    c.keep_epoch_checkpoints = j.value("keep_epoch_checkpoints", c.keep_epoch_checkpoints);
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      c.optimizer.learning_rate = o.value("learning_rate", c.optimizer.learning_rate);
      c.optimizer.beta1 = o.value("beta1", c.optimizer.beta1);
      c.optimizer.beta2 = o.value("beta2", c.optimizer.beta2);
      c.optimizer.epsilon = o.value("epsilon", c.optimizer.epsilon);
      c.optimizer.halve_every = o.value("halve_every", c.optimizer.halve_every);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed training config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = {{"wordspace", wordspace.string()},
                      {"languages", languages},
                      {"stage", polysearch::to_string(stage)},
                      {"finetune_from_epoch", finetune_from_epoch},
                      {"epochs", epochs},
                      {"batch_size", batch_size},
                      {"seed", seed},
                      {"dropout", dropout},
                      {"margin", margin},
                      {"hidden_dim", hidden_dim},
                      {"joint_dim", joint_dim},
                      {"keep_epoch_checkpoints", keep_epoch_checkpoints},
                      {"optimizer",
                       {{"learning_rate", optimizer.learning_rate},
                        {"beta1", optimizer.beta1},
                        {"beta2", optimizer.beta2},
                        {"epsilon", optimizer.epsilon},
                        {"halve_every", optimizer.halve_every}}}};
  j["k_pos"] = k_pos ? nlohmann::json(*k_pos) : nlohmann::json(nullptr);
  j["k_neg"] = k_neg ? nlohmann::json(*k_neg) : nlohmann::json(nullptr);
  return j;
}

void TrainConfig::validate() const {
  if (languages.empty()) throw ValidationError("training config lists no languages");
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (batch_size < 2) throw ValidationError("batch size must be >= 2 (mining sets would be empty)");
  if (dropout < 0.0 || dropout >= 1.0) throw ValidationError("dropout must lie in [0, 1)");
  if (!(margin > 0.0)) throw ValidationError("margin must be positive");
  if (hidden_dim < 1 || joint_dim < 1) throw ValidationError("hidden_dim and joint_dim must be positive");
  if (!(optimizer.learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
  if ((k_pos && *k_pos < 1) || (k_neg && *k_neg < 1)) throw ValidationError("Weldon counts must be >= 1");
}

Stage TrainConfig::stage_for_epoch(int epoch) const {
  if (finetune_from_epoch >= 0 && epoch >= finetune_from_epoch) return Stage::kFinetuneAll;
  return stage;
}

TrainingData TrainingData::load(Manifest manifest, const WordSpace& words, const std::vector<std::string>& languages) {
  for (const auto& lang : languages)
    if (!words.has_language(lang)) throw ValidationError("training language '" + lang + "' is not in the word space");
  TrainingData data;
  data.features.reserve(manifest.records.size());
  data.caption_vectors.resize(manifest.records.size());
  for (std::size_t r = 0; r < manifest.records.size(); ++r) {
    const auto& rec = manifest.records[r];
    data.features.push_back(FeatureMap::load(rec.feature_path));
    if (data.features.back().channels() != data.features.front().channels())
      throw ValidationError("image '" + rec.image_id + "' has a different channel count from the first image");
    for (const auto& cap : rec.captions) {
      const bool used = std::find(languages.begin(), languages.end(), cap.lang) != languages.end();
      data.caption_vectors[r].push_back(used ? resolve_tokens(tokenize(cap.text, cap.lang), words) : Matrix());
    }
  }
  data.manifest = std::move(manifest);
  return data;
}

BatchStep batch_forward_backward(const ModelParams& params, const BatchInputs& batch, double margin, Mode mode,
                                 std::mt19937_64* rng) {
  const std::size_t n = batch.image_ids.size();
  std::map<std::string, std::size_t> slot_of;
  std::vector<std::size_t> entry_slot(n);
  std::vector<const FeatureMap*> unique_images;
  for (std::size_t p = 0; p < n; ++p) {
    auto [it, inserted] = slot_of.emplace(batch.image_ids[p], unique_images.size());
    if (inserted) unique_images.push_back(batch.images[p]);
    entry_slot[p] = it->second;
  }

  std::vector<ImageTrace> image_traces(unique_images.size());
  std::vector<JointVector> unique_vectors;
  unique_vectors.reserve(unique_images.size());
  for (std::size_t s = 0; s < unique_images.size(); ++s)
    unique_vectors.push_back(encode_image(*unique_images[s], params.image, &image_traces[s]));

  std::vector<TextTrace> text_traces(n);
  std::vector<JointVector> captions;
  std::vector<JointVector> images;
  captions.reserve(n);
  images.reserve(n);
  for (std::size_t p = 0; p < n; ++p) {
    captions.push_back(encode_vectors(*batch.captions[p], params.text, mode, rng, &text_traces[p]));
    images.push_back(unique_vectors[entry_slot[p]]);
  }

  BatchStep step{batch_loss(batch.image_ids, images, captions, margin, true), params.zeros_like()};

  std::vector<Vector> d_unique(unique_images.size(), Vector::Zero(params.image.joint_dim()));
  for (std::size_t p = 0; p < n; ++p) {
    d_unique[entry_slot[p]] += step.loss.d_images[p];
    backward_text(params.text, text_traces[p], step.loss.d_captions[p], step.grads.text);
  }
  for (std::size_t s = 0; s < unique_images.size(); ++s)
    backward_image(*unique_images[s], params.image, image_traces[s], d_unique[s], step.grads.image);
  return step;
}

ModelParams init_params(const TrainConfig& config, Eigen::Index word_dim, const FeatureMap& sample) {
  std::mt19937_64 rng(config.seed);
  const int k_default = default_weldon_k(sample.locations());
  ModelParams p;
  p.text = TextEncoderParams::init(word_dim, config.hidden_dim, config.joint_dim, config.dropout, rng);
  p.image = ImageEncoderParams::init(sample.channels(), config.joint_dim, config.k_pos.value_or(k_default),
                                     config.k_neg.value_or(k_default), rng);
  if (p.image.k_pos > sample.locations() || p.image.k_neg > sample.locations())
    throw ValidationError("Weldon counts exceed the feature map's " + std::to_string(sample.locations()) + " locations");
  return p;
}

nlohmann::json make_checkpoint(const ModelParams& params, const TrainConfig& config, int epoch,
                               const std::vector<double>& loss_curve) {
  return {{"format", "polysearch-checkpoint"},
          {"version", 1},
          {"config", config.to_json()},
          {"seed", config.seed},
          {"epoch", epoch},
          {"wordspace", std::filesystem::absolute(config.wordspace).lexically_normal().string()},
          {"dims",
           {{"word", params.text.input_dim()},
            {"hidden", params.text.hidden_dim()},
            {"joint", params.text.joint_dim()},
            {"channels", params.image.channels()}}},
          {"weldon", {{"k_pos", params.image.k_pos}, {"k_neg", params.image.k_neg}}},
          {"params", params.tensors_to_json()},
          {"loss_curve", loss_curve}};
}

namespace {

void check_finite(const ModelParams& grads, int epoch, std::size_t batch) {
  ModelParams::for_each_tensor(
      [&](const std::string& name, const auto& g) {
        if (!g.allFinite())
          throw NumericError("non-finite gradient in '" + name + "' at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch));
      },
      grads);
}

}  // namespace

TrainResult train(const Manifest& corpus, const TrainConfig& config, const std::filesystem::path& out_dir,
                  const std::function<void(const EpochStats&)>& on_epoch) {
  config.validate();
  if (corpus.records.size() < 2) throw ValidationError("training corpus needs at least two images");
  const WordSpace words = WordSpace::load(config.wordspace);
  const TrainingData data = TrainingData::load(corpus, words, config.languages);

  TrainResult result;
  result.params = init_params(config, words.dim(), data.features.front());
  for (const auto& fm : data.features)
    if (fm.locations() < std::max(result.params.image.k_pos, result.params.image.k_neg))
      throw ValidationError("a feature map has fewer locations than the Weldon counts");

  Adam adam(result.params, config.optimizer);
  std::mt19937_64 dropout_rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
  std::filesystem::create_directories(out_dir);
  result.checkpoint = out_dir / "checkpoint.json";

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const Stage stage = config.stage_for_epoch(epoch);
    const double lr = adam.rate_for_epoch(epoch);
    auto frozen = [stage](const std::string& name) {
      return stage == Stage::kRnnFc && name.rfind("image.adapter", 0) == 0;
    };

    BatchStream stream(data.manifest, config.batch_size, config.seed * 1000003ULL + static_cast<std::uint64_t>(epoch),
                       config.languages);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    while (auto batch = stream.next()) {
      BatchInputs in;
      for (const auto& ref : batch->pairs) {
        in.image_ids.push_back(data.manifest.records[ref.record].image_id);
        in.images.push_back(&data.features[ref.record]);
        in.captions.push_back(&data.caption_vectors[ref.record][ref.caption]);
      }
      BatchStep step = batch_forward_backward(result.params, in, config.margin, Mode::kTrain, &dropout_rng);
      if (!std::isfinite(step.loss.value))
        throw NumericError("loss became non-finite at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches));
      check_finite(step.grads, epoch, batches);
      adam.step(result.params, step.grads, lr, frozen);
      loss_sum += step.loss.value;
      ++batches;
    }

    const double mean = loss_sum / static_cast<double>(batches);
    result.loss_curve.push_back(mean);
    const nlohmann::json ckpt = make_checkpoint(result.params, config, epoch + 1, result.loss_curve);
    const std::string text = ckpt.dump() + "\n";
    write_text_file(result.checkpoint, text);
    if (config.keep_epoch_checkpoints) {
      char name[48];
      std::snprintf(name, sizeof(name), "checkpoint-epoch%02d.json", epoch + 1);
      write_text_file(out_dir / name, text);
    }
    log().info("epoch {:>3} [{}] lr={:.2e} mean batch loss {:.6f}", epoch + 1, to_string(stage), lr, mean);
    if (on_epoch) on_epoch({epoch + 1, stage, mean, lr, batches});
  }
  return result;
}

}  // namespace polysearch
