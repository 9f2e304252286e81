// SPDX-License-Identifier: Apache-2.0
#include "service.hpp"

#include <charconv>
#include <cstdlib>
#include <cstring>

#include <httplib.h>

#include "io_util.hpp"
#include "log.hpp"

namespace polysearch {

ServiceConfig ServiceConfig::from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  ServiceConfig c;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };
  try {
    c.checkpoint = resolve(j.at("checkpoint").get<std::string>());
    if (j.contains("wordspace")) c.wordspace = resolve(j.at("wordspace").get<std::string>());
    if (j.contains("index")) c.index = resolve(j.at("index").get<std::string>());
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    c.default_k = j.value("default_k", c.default_k);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed service config: ") + e.what());
  }
  if (const char* env = std::getenv("PORT"); env != nullptr && *env != '\0') {
    int port = 0;
    const char* end = env + std::strlen(env);
    auto [ptr, ec] = std::from_chars(env, end, port);
    if (ec != std::errc() || ptr != end) throw ValidationError(std::string("PORT is not an integer: '") + env + "'");
    c.port = port;
  }
  if (c.port < 0 || c.port > 65535) throw ValidationError("port must lie in [0, 65535]");
  if (c.default_k < 1) throw ValidationError("default_k must be >= 1");
  return c;
}

ServiceConfig ServiceConfig::load(const std::filesystem::path& path) {
  return from_json(read_json_file(path), path.parent_path());
}

std::shared_ptr<const IndexSnapshot> make_snapshot(RetrievalIndex index) {
  auto snap = std::make_shared<IndexSnapshot>();
  for (const auto& item : index.items()) {
    if (item.modality != Modality::kImage || item.feature_path.empty()) continue;
    snap->features.emplace(item.id, std::make_shared<const FeatureMap>(FeatureMap::load(item.feature_path)));
  }
  snap->index = std::move(index);
  return snap;
}

namespace {

void reply(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& error, const std::string& detail) {
  reply(res, status, {{"error", error}, {"detail", detail}});
}

// Maps library exceptions onto HTTP statuses; nothing escapes as a stack trace.
template <class F>
httplib::Server::Handler guarded(F handler) {
  return [handler](const httplib::Request& req, httplib::Response& res) {
    try {
      handler(req, res);
    } catch (const ValidationError& e) {
      reply_error(res, 400, "invalid_argument", e.what());
    } catch (const NotFoundError& e) {
      reply_error(res, 404, "not_found", e.what());
    } catch (const ConflictError& e) {
      reply_error(res, 409, "conflict", e.what());
    } catch (const std::exception& e) {
      log().error("{} {}: {}", req.method, req.path, e.what());
      reply_error(res, 500, "internal", e.what());
    }
  };
}

nlohmann::json parse_body(const httplib::Request& req) {
  auto j = nlohmann::json::parse(req.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ValidationError("request body must be a JSON object");
  return j;
}

std::size_t parse_k(const nlohmann::json& value) {
  if (!value.is_number_integer()) throw ValidationError("k must be an integer");
  const auto k = value.get<long long>();
  if (k < 1) throw ValidationError("k must be >= 1");
  return static_cast<std::size_t>(k);
}

std::size_t parse_k(const std::string& text) {
  long long k = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), k);
  if (ec != std::errc() || ptr != text.data() + text.size()) throw ValidationError("k must be an integer");
  if (k < 1) throw ValidationError("k must be >= 1");
  return static_cast<std::size_t>(k);
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ", ") + s;
  return out;
}

}  // namespace

Service::Service(std::shared_ptr<const Model> model, std::shared_ptr<const IndexSnapshot> snapshot, std::size_t default_k)
    : model_(std::move(model)), default_k_(default_k), snapshot_(std::move(snapshot)),
      server_(std::make_unique<httplib::Server>()) {
  if (!model_) throw ValidationError("service needs a model");
  if (!snapshot_) snapshot_ = std::make_shared<const IndexSnapshot>();
  if (snapshot_->index.dim() != 0 && snapshot_->index.dim() != model_->joint_dim())
    throw ValidationError("index dimension " + std::to_string(snapshot_->index.dim()) +
                          " does not match the model's joint dimension " + std::to_string(model_->joint_dim()));
  for (const auto& [id, fm] : snapshot_->features)
    if (fm->channels() != model_->params().image.channels())
      throw ValidationError("feature map of '" + id + "' does not match the image encoder's channel count");
  routes();
}

Service::Service(const ServiceConfig& config)
    : Service(std::make_shared<const Model>(Model::load(config.checkpoint, config.wordspace)),
              config.index.empty() ? nullptr : make_snapshot(RetrievalIndex::load(config.index)), config.default_k) {}

Service::~Service() = default;

std::shared_ptr<const IndexSnapshot> Service::snapshot() const {
  std::lock_guard lock(snapshot_mutex_);
  return snapshot_;
}

void Service::publish(std::shared_ptr<const IndexSnapshot> next) {
  std::lock_guard lock(snapshot_mutex_);
  snapshot_ = std::move(next);
}

void Service::routes() {
  server_->set_default_headers({{"Access-Control-Allow-Origin", "*"}});

  server_->Get("/health", guarded([this](const httplib::Request&, httplib::Response& res) {
    const auto snap = snapshot();
    reply(res, 200,
          {{"status", "ok"},
           {"images", snap->index.count(Modality::kImage)},
           {"captions", snap->index.count(Modality::kCaption)}});
  }));

  server_->Get("/languages", guarded([this](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, {{"languages", model_->words().languages()}, {"pivot", model_->words().pivot()}});
  }));

  server_->Post("/query/text", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    if (!body.contains("text") || !body["text"].is_string()) throw ValidationError("'text' must be a string");
    if (!body.contains("lang") || !body["lang"].is_string()) throw ValidationError("'lang' must be a string");
    const auto text = body["text"].get<std::string>();
    const auto lang = body["lang"].get<std::string>();
    const std::size_t k = body.contains("k") ? parse_k(body["k"]) : default_k_;
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) throw ValidationError("'text' is empty");
    if (!model_->words().has_language(lang))
      throw ValidationError("unknown language '" + lang + "'; loaded: " + join(model_->words().languages()));

    const auto snap = snapshot();
    if (snap->index.count(Modality::kImage) == 0) {
      reply_error(res, 503, "index_not_loaded", "no images are indexed");
      return;
    }
    const JointVector query = model_->encode_text(text, lang);
    nlohmann::json results = nlohmann::json::array();
    bool heatmaps = true;
    for (const auto& hit : snap->index.search(query, k, SearchFilter{Modality::kImage, std::nullopt})) {
      results.push_back({{"image_id", hit.id}, {"score", hit.score}});
      heatmaps = heatmaps && snap->features.contains(hit.id);
    }
    reply(res, 200, {{"results", results}, {"heatmap_available", heatmaps}});
  }));

  server_->Post("/query/image", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const std::size_t k = req.has_param("k") ? parse_k(req.get_param_value("k")) : default_k_;
    const FeatureMap fm = FeatureMap::decode(req.body);
    const auto snap = snapshot();
    if (snap->index.count(Modality::kCaption) == 0) {
      reply_error(res, 503, "index_not_loaded", "no captions are indexed");
      return;
    }
    const JointVector query = model_->encode_image(fm);
    nlohmann::json results = nlohmann::json::array();
    for (const auto& hit : snap->index.search(query, k, SearchFilter{Modality::kCaption, std::nullopt})) {
      const auto& item = snap->index.items()[hit.item];
      results.push_back({{"caption_id", hit.id}, {"text", item.text}, {"lang", item.lang}, {"score", hit.score}});
    }
    reply(res, 200, {{"results", results}});
  }));

  server_->Post("/index/images", guarded([this](const httplib::Request& req, httplib::Response& res) {
    std::string image_id;
    std::string feature_path;
    std::shared_ptr<const FeatureMap> fm;
    if (req.get_header_value("Content-Type").starts_with("application/octet-stream")) {
      image_id = req.get_param_value("image_id");
      fm = std::make_shared<const FeatureMap>(FeatureMap::decode(req.body));
    } else {
      const auto body = parse_body(req);
      if (!body.contains("image_id") || !body["image_id"].is_string()) throw ValidationError("'image_id' must be a string");
      if (!body.contains("feature_path") || !body["feature_path"].is_string())
        throw ValidationError("'feature_path' must be a string");
      image_id = body["image_id"].get<std::string>();
      feature_path = std::filesystem::absolute(body["feature_path"].get<std::string>()).string();
      try {
        fm = std::make_shared<const FeatureMap>(FeatureMap::load(feature_path));
      } catch (const IoError& e) {
        throw ValidationError(e.what());
      }
    }
    if (image_id.empty()) throw ValidationError("'image_id' must not be empty");

    IndexItem item;
    item.id = image_id;
    item.modality = Modality::kImage;
    item.feature_path = feature_path;
    item.vector = model_->encode_image(*fm);

    std::lock_guard writer(writer_mutex_);
    const auto current = snapshot();
    if (current->index.find(image_id) != nullptr) throw ConflictError("image '" + image_id + "' is already indexed");
    auto next = std::make_shared<IndexSnapshot>(*current);
    next->index.add(std::move(item));
    next->features[image_id] = std::move(fm);
    const std::size_t count = next->index.count(Modality::kImage);
    publish(std::move(next));
    reply(res, 200, {{"indexed", true}, {"count", count}});
  }));

  server_->Get("/heatmap", guarded([this](const httplib::Request& req, httplib::Response& res) {
    for (const char* key : {"word", "lang", "image_id"})
      if (!req.has_param(key)) throw ValidationError(std::string("missing query parameter '") + key + "'");
    const auto image_id = req.get_param_value("image_id");
    const auto snap = snapshot();
    auto it = snap->features.find(image_id);
    if (it == snap->features.end()) throw NotFoundError("no feature map retained for image '" + image_id + "'");
    const Matrix map = model_->heatmap(req.get_param_value("word"), req.get_param_value("lang"), *it->second);
    res.status = 200;
    res.set_content(heatmap_to_json(map), "application/json");
  }));

  server_->set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (res.status == 404 && res.body.empty()) reply_error(res, 404, "not_found", "no route for " + req.path);
  });
  server_->set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr) {
    reply_error(res, 500, "internal", "unhandled exception");
  });
}

int Service::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = server_->bind_to_any_port(host);
    if (bound < 0) throw IoError("could not bind " + host);
    return bound;
  }
  if (!server_->bind_to_port(host, port)) throw IoError("could not bind " + host + ":" + std::to_string(port));
  return port;
}

void Service::run() {
  if (!server_->listen_after_bind()) throw IoError("server stopped with an error");
}

void Service::stop() { server_->stop(); }

void serve(const ServiceConfig& config, const std::function<void(int)>& on_listening) {
  Service service(config);
  const int port = service.bind(config.host, config.port);
  log().info("serving on http://{}:{}", config.host, port);
  if (on_listening) on_listening(port);
  service.run();
}

}  // namespace polysearch
