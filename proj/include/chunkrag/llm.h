#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace chunkrag {

// A mock rule matches when its pattern is a substring of the prompt. The
// placeholder "{target}" inside a pattern is replaced by the scored target,
// so "{target}" alone means "the prompt already shows the answer". Rules that
// mention {target} never fire during generation.
struct MockRule {
  std::string pattern;
  double probability = 0.1;
  std::optional<std::string> completion;
};

std::vector<MockRule> load_mock_rules(const std::string& path);
std::vector<MockRule> mock_rules_from_json(const nlohmann::json& j);
nlohmann::json mock_rules_to_json(const std::vector<MockRule>& rules);

enum class LmBackendKind { kRemote, kMock };

struct LmBackendConfig {
  LmBackendKind kind = LmBackendKind::kMock;
  std::optional<std::string> endpoint;
  std::size_t context_limit = 4096;  // tokens
  std::size_t max_concurrent_requests = 4;
  std::vector<MockRule> mock_rules;
  double words_per_token = 0.75;
  double mock_fallback_probability = 0.1;
  int max_retries = 3;
  std::chrono::milliseconds retry_backoff{200};
  std::chrono::milliseconds timeout{60000};

  void validate() const;
};

// Token estimate for limit checks: words / words_per_token, rounded up.
std::size_t estimate_tokens(std::string_view text, double words_per_token);

// Black-box language model: likelihood of a target and free generation.
// Implementations are internally synchronized.
class LmBackend {
 public:
  explicit LmBackend(LmBackendConfig cfg);
  virtual ~LmBackend() = default;

  // exp(mean token log-prob of target | prompt), in (0, 1].
  // Throws InvalidPrompt, ContextOverflow, BackendUnavailable.
  double score_continuation(std::string_view prompt, std::string_view target);
  std::string generate(std::string_view prompt);

  const LmBackendConfig& config() const { return cfg_; }

  static std::unique_ptr<LmBackend> create(LmBackendConfig cfg);

 protected:
  virtual double do_score(std::string_view prompt, std::string_view target) = 0;
  virtual std::string do_generate(std::string_view prompt) = 0;

 private:
  void check_limits(std::string_view prompt, std::string_view target) const;

  LmBackendConfig cfg_;
};

class MockLmBackend : public LmBackend {
 public:
  explicit MockLmBackend(LmBackendConfig cfg);

 protected:
  double do_score(std::string_view prompt, std::string_view target) override;
  std::string do_generate(std::string_view prompt) override;
};

// Wire shape: POST {"prompt", "target"} -> {"logprobs": [...]} for scoring,
// POST {"prompt"} -> {"text": "..."} for generation.
class RemoteLmBackend : public LmBackend {
 public:
  explicit RemoteLmBackend(LmBackendConfig cfg);

 protected:
  double do_score(std::string_view prompt, std::string_view target) override;
  std::string do_generate(std::string_view prompt) override;

 private:
  std::counting_semaphore<> in_flight_;
};

}  // namespace chunkrag
