#pragma once

#include <chrono>
#include <optional>
#include <string>

#include "json.hpp"

namespace chunkrag::http {

struct Endpoint {
  std::string base;  // scheme://host[:port]
  std::string path;  // starts with '/'
};

// Throws ConfigError for anything that is not http://host[:port][/path].
Endpoint parse_endpoint(const std::string& url);

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds backoff{100};
  std::chrono::milliseconds timeout{30000};
};

// POSTs `body` as JSON and returns the parsed JSON reply. Retries transport
// failures and 5xx/429 replies with exponential backoff, then throws
// BackendUnavailable. Sends "Authorization: Bearer $LLM_API_TOKEN" when the
// variable is set.
nlohmann::json post_json(const Endpoint& endpoint, const nlohmann::json& body,
                         const RetryPolicy& policy);

}  // namespace chunkrag::http
