#include "http_util.h"

#include <cstdlib>
#include <thread>

#include "chunkrag/errors.h"
#include "httplib.h"

namespace chunkrag::http {

Endpoint parse_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("endpoint '" + url + "' has no scheme");
  }
  const std::string scheme = url.substr(0, scheme_end);
  // TLS needs an httplib build with OpenSSL support; put a local proxy in front
  // of https providers for now.
  if (scheme != "http") {
    throw ConfigError("unsupported endpoint scheme '" + scheme + "'");
  }
  const auto host_begin = scheme_end + 3;
  const auto path_begin = url.find('/', host_begin);
  Endpoint ep;
  ep.base = url.substr(0, path_begin);
  ep.path = path_begin == std::string::npos ? "/" : url.substr(path_begin);
  if (ep.base.size() <= host_begin) {
    throw ConfigError("endpoint '" + url + "' has no host");
  }
  return ep;
}

nlohmann::json post_json(const Endpoint& endpoint, const nlohmann::json& body,
                         const RetryPolicy& policy) {
  httplib::Headers headers;
  if (const char* token = std::getenv("LLM_API_TOKEN"); token && *token) {
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }
  const std::string payload = body.dump();
  std::string last_error = "no attempt made";
  auto backoff = policy.backoff;
  for (int attempt = 0; attempt <= policy.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    httplib::Client client(endpoint.base);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(policy.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(
        policy.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    auto res = client.Post(endpoint.path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw BackendUnavailable(endpoint.base + endpoint.path + " returned HTTP " +
                               std::to_string(res->status) + ": " + res->body);
    }
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw BackendUnavailable("malformed JSON reply from " + endpoint.base +
                               endpoint.path + ": " + e.what());
    }
  }
  throw BackendUnavailable(endpoint.base + endpoint.path + " unavailable after " +
                           std::to_string(policy.max_retries) +
                           " retries: " + last_error);
}

}  // namespace chunkrag::http
