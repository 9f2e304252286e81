// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "model.hpp"
#include "retrieval.hpp"

namespace httplib {
class Server;
}

namespace polysearch {

struct ServiceConfig {
  std::filesystem::path checkpoint;
  std::filesystem::path wordspace;  // empty: the one recorded in the checkpoint
  std::filesystem::path index;      // empty: start with an empty index
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t default_k = 10;

  /// Relative paths resolve against `base_dir`. The PORT environment
  /// variable, when set, overrides "port".
  static ServiceConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static ServiceConfig load(const std::filesystem::path& path);
};

/// Immutable view served to readers. Feature maps are retained so heatmaps
/// can be computed for every indexed image.
struct IndexSnapshot {
  RetrievalIndex index;
  std::unordered_map<std::string, std::shared_ptr<const FeatureMap>> features;
};

/// Loads feature maps for every image item that records a feature_path.
std::shared_ptr<const IndexSnapshot> make_snapshot(RetrievalIndex index);

class Service {
 public:
  Service(std::shared_ptr<const Model> model, std::shared_ptr<const IndexSnapshot> snapshot, std::size_t default_k = 10);
  explicit Service(const ServiceConfig& config);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds `host`:`port` (0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void run();
  void stop();

  std::shared_ptr<const IndexSnapshot> snapshot() const;

 private:
  void routes();
  void publish(std::shared_ptr<const IndexSnapshot> next);

  std::shared_ptr<const Model> model_;
  std::size_t default_k_;
  std::shared_ptr<const IndexSnapshot> snapshot_;
  mutable std::mutex snapshot_mutex_;  // guards the pointer only
  std::mutex writer_mutex_;            // serializes index mutations
  std::unique_ptr<httplib::Server> server_;
};

/// Loads the config, binds and serves until the process is stopped.
/// `on_listening` receives the bound port.
void serve(const ServiceConfig& config, const std::function<void(int)>& on_listening = {});

}  // namespace polysearch
