// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdlib>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>

#include "common.hpp"
#include "corpus.hpp"
#include "trainer.hpp"

namespace testing {

/// Directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "polysearch-XXXXXX").string();
    if (mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline polysearch::Vector gaussian(Eigen::Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  return polysearch::Vector::NullaryExpr(d, [&] { return g(rng); });
}

inline polysearch::JointVector random_unit(Eigen::Index d, std::mt19937_64& rng) {
  return polysearch::JointVector::normalize(gaussian(d, rng));
}

/// Settings that train the toy corpus to full recall within 30 epochs.
inline polysearch::TrainConfig toy_train_config(const polysearch::ToyDataset& ds, int epochs = 30) {
  polysearch::TrainConfig c;
  c.wordspace = ds.wordspace_path;
  c.languages = {"en", "fr"};
  c.epochs = epochs;
  c.batch_size = 32;
  c.seed = 7;
  c.dropout = 0.1;
  c.optimizer.learning_rate = 5e-3;
  return c;
}

/// A few concepts, enough epochs to separate them; trains in about a second.
struct SmallToy {
  polysearch::ToyDataset data;
  polysearch::TrainResult result;
};

inline SmallToy train_small_toy(const std::filesystem::path& dir) {
  polysearch::ToySpec spec;
  spec.concepts = 4;
  spec.languages = {"en", "fr"};
  spec.images_per_concept = 8;
  spec.test_images_per_concept = 2;
  spec.seed = 11;
  SmallToy toy{polysearch::make_toy_dataset(spec, dir / "toy"), {}};
  polysearch::TrainConfig c = toy_train_config(toy.data, 40);
  c.batch_size = 8;
  c.optimizer.learning_rate = 1e-2;
  c.optimizer.halve_every = 0;
  c.dropout = 0.0;
  toy.result = polysearch::train(toy.data.train, c, dir / "run");
  return toy;
}

}  // namespace testing
