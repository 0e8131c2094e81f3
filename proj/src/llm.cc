#include "chunkrag/llm.h"

#include <cmath>
#include <fstream>

#include "chunkrag/core.h"
#include "chunkrag/errors.h"
#include "http_util.h"

namespace chunkrag {
namespace {

constexpr std::string_view kTargetPlaceholder = "{target}";

std::string substitute_target(const std::string& pattern, std::string_view target) {
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const auto hit = pattern.find(kTargetPlaceholder, pos);
    out.append(pattern, pos, hit == std::string::npos ? std::string::npos : hit - pos);
    if (hit == std::string::npos) break;
    out.append(target);
    pos = hit + kTargetPlaceholder.size();
  }
  return out;
}

bool mentions_target(const MockRule& rule) {
  return rule.pattern.find(kTargetPlaceholder) != std::string::npos;
}

struct SemaphoreGuard {
  explicit SemaphoreGuard(std::counting_semaphore<>& s) : sem(s) { sem.acquire(); }
  ~SemaphoreGuard() { sem.release(); }
  std::counting_semaphore<>& sem;
};

}  // namespace

std::vector<MockRule> mock_rules_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ConfigError("mock rules must be a JSON array");
  std::vector<MockRule> rules;
  for (const auto& r : j) {
    MockRule rule;
    try {
      rule.pattern = r.at("pattern").get<std::string>();
      rule.probability = r.at("probability").get<double>();
      if (r.contains("completion") && !r.at("completion").is_null()) {
        rule.completion = r.at("completion").get<std::string>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed mock rule: ") + e.what());
    }
    rules.push_back(std::move(rule));
  }
  return rules;
}

nlohmann::json mock_rules_to_json(const std::vector<MockRule>& rules) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rules) {
    nlohmann::json j{{"pattern", r.pattern}, {"probability", r.probability}};
    if (r.completion) j["completion"] = *r.completion;
    arr.push_back(std::move(j));
  }
  return arr;
}

std::vector<MockRule> load_mock_rules(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open mock rules " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("mock rules " + path + ": " + e.what());
  }
  return mock_rules_from_json(j);
}

void LmBackendConfig::validate() const {
  if (context_limit == 0) throw ConfigError("context_limit must be positive");
  if (max_concurrent_requests == 0) {
    throw ConfigError("max_concurrent_requests must be positive");
  }
  if (!(words_per_token > 0.0)) throw ConfigError("words_per_token must be positive");
  if (kind == LmBackendKind::kRemote && (!endpoint || endpoint->empty())) {
    throw ConfigError("remote LM backend requires an endpoint");
  }
  if (kind == LmBackendKind::kMock) {
    for (const auto& r : mock_rules) {
      if (!(r.probability > 0.0 && r.probability <= 1.0)) {
        throw ConfigError("mock rule '" + r.pattern + "' probability must be in (0,1]");
      }
    }
    if (!(mock_fallback_probability > 0.0 && mock_fallback_probability <= 1.0)) {
      throw ConfigError("mock fallback probability must be in (0,1]");
    }
  }
}

std::size_t estimate_tokens(std::string_view text, double words_per_token) {
  std::size_t words = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++words;
    in_word = !space;
  }
  return static_cast<std::size_t>(std::ceil(static_cast<double>(words) / words_per_token));
}

LmBackend::LmBackend(LmBackendConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

void LmBackend::check_limits(std::string_view prompt, std::string_view target) const {
  if (normalize_surface(prompt).empty()) throw InvalidPrompt("prompt is empty");
  const std::size_t tokens = estimate_tokens(prompt, cfg_.words_per_token) +
                             estimate_tokens(target, cfg_.words_per_token);
  if (tokens > cfg_.context_limit) {
    throw ContextOverflow("prompt needs ~" + std::to_string(tokens) +
                          " tokens, limit is " + std::to_string(cfg_.context_limit));
  }
}

double LmBackend::score_continuation(std::string_view prompt, std::string_view target) {
  if (normalize_surface(target).empty()) throw InvalidPrompt("target is empty");
  check_limits(prompt, target);
  return do_score(prompt, target);
}

std::string LmBackend::generate(std::string_view prompt) {
  check_limits(prompt, {});
  return do_generate(prompt);
}

std::unique_ptr<LmBackend> LmBackend::create(LmBackendConfig cfg) {
  if (cfg.kind == LmBackendKind::kRemote) {
    return std::make_unique<RemoteLmBackend>(std::move(cfg));
  }
  return std::make_unique<MockLmBackend>(std::move(cfg));
}

MockLmBackend::MockLmBackend(LmBackendConfig cfg) : LmBackend(std::move(cfg)) {}

double MockLmBackend::do_score(std::string_view prompt, std::string_view target) {
  for (const auto& rule : config().mock_rules) {
    const std::string pattern = substitute_target(rule.pattern, target);
    if (!pattern.empty() && prompt.find(pattern) != std::string_view::npos) {
      return rule.probability;
    }
  }
  return config().mock_fallback_probability;
}

std::string MockLmBackend::do_generate(std::string_view prompt) {
  for (const auto& rule : config().mock_rules) {
    if (mentions_target(rule) || !rule.completion) continue;
    if (!rule.pattern.empty() && prompt.find(rule.pattern) != std::string_view::npos) {
      return *rule.completion;
    }
  }
  return {};
}

RemoteLmBackend::RemoteLmBackend(LmBackendConfig cfg)
    : LmBackend(std::move(cfg)),
      in_flight_(static_cast<std::ptrdiff_t>(config().max_concurrent_requests)) {
  http::parse_endpoint(*config().endpoint);
}

double RemoteLmBackend::do_score(std::string_view prompt, std::string_view target) {
  SemaphoreGuard guard(in_flight_);
  const auto& cfg = config();
  const auto reply = http::post_json(
      http::parse_endpoint(*cfg.endpoint),
      {{"prompt", std::string(prompt)}, {"target", std::string(target)}},
      {cfg.max_retries, cfg.retry_backoff, cfg.timeout});
  std::vector<double> logprobs;
  try {
    logprobs = reply.at("logprobs").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw BackendUnavailable(std::string("malformed scoring reply: ") + e.what());
  }
  if (logprobs.empty()) throw BackendUnavailable("scoring reply has no logprobs");
  double sum = 0.0;
  for (double lp : logprobs) {
    if (!std::isfinite(lp)) throw BackendUnavailable("non-finite logprob in reply");
    sum += lp;
  }
  return std::min(1.0, std::exp(sum / static_cast<double>(logprobs.size())));
}

std::string RemoteLmBackend::do_generate(std::string_view prompt) {
  SemaphoreGuard guard(in_flight_);
  const auto& cfg = config();
  const auto reply = http::post_json(http::parse_endpoint(*cfg.endpoint),
                                     {{"prompt", std::string(prompt)}},
                                     {cfg.max_retries, cfg.retry_backoff, cfg.timeout});
  try {
    return reply.at("text").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw BackendUnavailable(std::string("malformed generation reply: ") + e.what());
  }
}

}  // namespace chunkrag
