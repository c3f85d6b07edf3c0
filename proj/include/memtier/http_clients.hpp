#pragma once

#include <chrono>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "memtier/consolidation.hpp"
#include "memtier/errors.hpp"
#include "memtier/reader.hpp"
#include "memtier/retrieval.hpp"

namespace memtier {

/// "http://host:port/prefix" split into origin and path prefix (no trailing slash).
struct Endpoint {
  std::string origin;
  std::string prefix;

  static Endpoint parse(std::string_view url) {
    const auto scheme = url.find("://");
    if (scheme == std::string_view::npos) throw ValidationError("endpoint url needs a scheme: '" + std::string(url) + "'");
    const auto slash = url.find('/', scheme + 3);
    Endpoint e;
    e.origin = std::string(url.substr(0, slash));
    if (slash != std::string_view::npos) e.prefix = std::string(url.substr(slash));
    while (!e.prefix.empty() && e.prefix.back() == '/') e.prefix.pop_back();
    return e;
  }
};

/// POSTs JSON and returns the parsed reply. Transport errors, non-2xx statuses
/// and unparseable bodies all surface as ExternalServiceError.
inline nlohmann::json post_json(const Endpoint& endpoint, std::string_view path, const nlohmann::json& body,
                                std::chrono::seconds timeout = std::chrono::seconds(60)) {
  httplib::Client client(endpoint.origin);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  const auto target = endpoint.prefix + std::string(path);
  const auto res = client.Post(target, body.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace),
                               "application/json");
  if (!res) {
    throw ExternalServiceError("POST " + endpoint.origin + target + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status < 200 || res->status >= 300) {
    throw ExternalServiceError("POST " + endpoint.origin + target + " returned HTTP " + std::to_string(res->status));
  }
  try {
    return nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::parse_error& ex) {
    throw ExternalServiceError("POST " + endpoint.origin + target + " returned invalid JSON: " + ex.what());
  }
}

/// POST /embed {"texts": [...]} -> {"vectors": [[...], ...]}
class HttpEmbedder final : public Embedder {
 public:
  HttpEmbedder(std::string_view url, std::size_t dimension)
      : endpoint_(Endpoint::parse(url)), dimension_(dimension) {
    if (dimension_ == 0) throw ValidationError("embedder dimension must be positive");
  }

  std::size_t dimension() const override { return dimension_; }

  std::vector<std::vector<double>> embed(std::span<const std::string> texts) const override {
    const auto reply = post_json(endpoint_, "/embed", {{"texts", texts}});
    std::vector<std::vector<double>> out;
    try {
      out = reply.at("vectors").get<std::vector<std::vector<double>>>();
    } catch (const nlohmann::json::exception& ex) {
      throw ExternalServiceError(std::string("embedder reply malformed: ") + ex.what());
    }
    if (out.size() != texts.size()) throw ExternalServiceError("embedder returned the wrong number of vectors");
    for (auto& v : out) {
      if (v.size() != dimension_) throw ExternalServiceError("embedder returned a vector of the wrong dimension");
      l2_normalise(v);
    }
    return out;
  }

 private:
  Endpoint endpoint_;
  std::size_t dimension_;
};

/// POST /extract {"session_id", "text"} -> {"facts": [{"subject", "relation", "value"}, ...]}
class HttpExtractor final : public Extractor {
 public:
  explicit HttpExtractor(std::string_view url) : endpoint_(Endpoint::parse(url)) {}

  std::vector<FactDraft> extract(const std::string& session_id, const std::string& session_text) override {
    const auto reply = post_json(endpoint_, "/extract", {{"session_id", session_id}, {"text", session_text}});
    std::vector<FactDraft> out;
    try {
      for (const auto& f : reply.at("facts")) {
        out.push_back({f.at("subject").get<std::string>(), f.at("relation").get<std::string>(),
                       f.at("value").get<std::string>()});
      }
    } catch (const nlohmann::json::exception& ex) {
      throw ExternalServiceError(std::string("extractor reply malformed: ") + ex.what());
    }
    return out;
  }

 private:
  Endpoint endpoint_;
};

/// POST /answer {"question", "context"} -> {"answer"}; answers are cut to 30 tokens.
class HttpReader final : public Reader {
 public:
  explicit HttpReader(std::string_view url) : endpoint_(Endpoint::parse(url)) {}

  std::string answer(const ReaderRequest& r) override {
    const auto reply = post_json(endpoint_, "/answer", {{"question", r.question}, {"context", r.context}});
    if (!reply.contains("answer") || !reply["answer"].is_string()) {
      throw ExternalServiceError("reader reply has no string 'answer'");
    }
    return truncate_answer(reply["answer"].get<std::string>(), 30);
  }

 private:
  Endpoint endpoint_;
};

}  // namespace memtier
