#pragma once

// Client for an external embedding service:
//   POST <endpoint> {"texts": [...]} -> {"vectors": [[...], ...]}
// Any transport or format failure becomes ProviderUnavailable, which the
// label-set builder turns into a logged fallback to the builtin provider.

#include <chrono>
#include <string>
#include <vector>

#include <httplib.h>

#include "astbridge/label_unification.hpp"

namespace astbridge {

inline constexpr std::chrono::seconds kProviderTimeout{5};

struct EndpointUrl {
  std::string base;  // scheme://host[:port]
  std::string path;
};

inline EndpointUrl split_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ProviderUnavailable("endpoint must look like http://host:port/path: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/embed"};
  return {url.substr(0, slash), url.substr(slash)};
}

inline EmbedFunction http_embed_function(const std::string& url,
                                         std::chrono::seconds timeout = kProviderTimeout) {
  const EndpointUrl ep = split_endpoint(url);
  return [ep, timeout](const std::vector<std::string>& texts) {
    httplib::Client cli(ep.base);
    cli.set_connection_timeout(timeout);
    cli.set_read_timeout(timeout);
    cli.set_write_timeout(timeout);
    const json body = {{"texts", texts}};
    auto res = cli.Post(ep.path, body.dump(), "application/json");
    if (!res) throw ProviderUnavailable(ep.base + ep.path + ": " + httplib::to_string(res.error()));
    if (res->status != 200) throw ProviderUnavailable(ep.base + ep.path + ": HTTP " + std::to_string(res->status));
    try {
      auto vectors = json::parse(res->body).at("vectors").get<std::vector<std::vector<double>>>();
      return vectors;
    } catch (const json::exception& e) {
      throw ProviderUnavailable(std::string("bad embedding response: ") + e.what());
    }
  };
}

inline SimilarityProvider http_provider(const std::string& url) {
  return SimilarityProvider::external(url, http_embed_function(url));
}

}  // namespace astbridge
