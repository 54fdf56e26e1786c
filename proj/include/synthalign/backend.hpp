#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "synthalign/error.hpp"

namespace synthalign {

enum class Role { strong, target, judge };

std::string_view to_string(Role role);
Role role_from_string(std::string_view s);

struct GenerationRequest {
  std::string prompt;
  double temperature = 0.7;
  // 0 means "the role's default" (see RoleSettings).
  int max_tokens = 0;
  // Empty means "use the model bound to the role".
  std::string model_id;
  // Distinguishes independent samples of the same prompt (e.g. several
  // decode calls for one metadata). Part of the cache key; the scripted
  // provider uses it to pick among alternative responses.
  std::uint32_t sample_index = 0;
  // Re-prompt counter after a parse failure. Part of the cache key only.
  std::uint32_t attempt = 0;
};

/// Throws precondition errors for an empty prompt, negative max_tokens or a
/// temperature outside [0, 2].
void validate(const GenerationRequest& request);

struct TokenUsage {
  std::uint64_t prompt_tokens = 0;
  std::uint64_t completion_tokens = 0;
};

struct ErrorInfo {
  ErrorCode code = ErrorCode::provider_unreachable;
  std::string message;
};

/// Outcome of one completion. `text` is present iff the call succeeded;
/// otherwise `error` says why.
struct GenerationResult {
  std::optional<std::string> text;
  std::string model_id;
  TokenUsage usage;
  bool cached = false;
  bool truncated = false;
  int retries = 0;
  std::optional<ErrorInfo> error;

  bool ok() const { return text.has_value(); }
};

struct BackendRole {
  Role role = Role::strong;
  std::string model_id;
};

/// What a provider hands back for one successful call.
struct ProviderReply {
  std::string text;
  TokenUsage usage;
  bool truncated = false;
};

/// Raised by providers. `transient` failures are retried by the backend.
class ProviderError : public Error {
 public:
  ProviderError(ErrorCode code, const std::string& message, bool transient)
      : Error(code, message), transient_(transient) {}
  bool transient() const noexcept { return transient_; }

 private:
  bool transient_;
};

class Provider {
 public:
  virtual ~Provider() = default;
  virtual ProviderReply generate(const GenerationRequest& request) = 0;
  virtual std::string describe() const = 0;
};

/// Adapter over a callable; handy for tests and embedding.
class CallbackProvider final : public Provider {
 public:
  using Fn = std::function<ProviderReply(const GenerationRequest&)>;
  explicit CallbackProvider(Fn fn, std::string name = "callback")
      : fn_(std::move(fn)), name_(std::move(name)) {}
  ProviderReply generate(const GenerationRequest& request) override { return fn_(request); }
  std::string describe() const override { return name_; }

 private:
  Fn fn_;
  std::string name_;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_delay{500};
  std::chrono::milliseconds max_delay{8000};
};

struct RoleSettings {
  std::string model_id;
  int default_max_tokens = 2048;
};

struct UsageCounters {
  // Logical: every successful completion, cached or not.
  std::uint64_t requests = 0;
  std::uint64_t prompt_tokens = 0;
  std::uint64_t completion_tokens = 0;
  // Physical: what actually reached a provider.
  std::uint64_t provider_calls = 0;
  std::uint64_t billed_prompt_tokens = 0;
  std::uint64_t billed_completion_tokens = 0;
  std::uint64_t retries = 0;
  std::uint64_t failures = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t truncated = 0;

  UsageCounters& operator+=(const UsageCounters& other);
};

void to_json(nlohmann::json& j, const UsageCounters& u);
void from_json(const nlohmann::json& j, UsageCounters& u);

struct BackendOptions {
  RetryPolicy retry;
  bool cache_enabled = true;
  // Non-zero temperature calls are cached only when a seed is set.
  std::optional<std::uint64_t> seed;
  // 0 disables rate limiting.
  double requests_per_second = 0.0;
  std::size_t max_in_flight = 8;
};

/// Role-addressed access to text generation with caching, bounded retries,
/// rate limiting and usage accounting. Safe to share across threads.
class Backend {
 public:
  explicit Backend(BackendOptions options = {});

  Backend(const Backend&) = delete;
  Backend& operator=(const Backend&) = delete;

  void bind(Role role, std::shared_ptr<Provider> provider, RoleSettings settings = {});
  /// Routes `alias` to whatever `target` is bound to, with its own settings.
  void alias(Role alias, Role target, RoleSettings settings = {});
  bool is_bound(Role role) const;
  BackendRole binding(Role role) const;
  int default_max_tokens(Role role) const;

  /// Throws Error on failure after retries.
  GenerationResult complete(const GenerationRequest& request, Role role);

  /// Positionally aligned results; per-item failures land in their slot.
  std::vector<GenerationResult> batch_complete(std::span<const GenerationRequest> requests,
                                               Role role, std::size_t max_in_flight);
  std::vector<GenerationResult> batch_complete(std::span<const GenerationRequest> requests,
                                               Role role) {
    return batch_complete(requests, role, options_.max_in_flight);
  }

  UsageCounters usage(Role role) const;
  UsageCounters total_usage() const;
  /// Adds previously persisted usage (used when resuming a run).
  void restore_usage(const std::map<Role, UsageCounters>& usage);
  std::map<Role, UsageCounters> usage_by_role() const;

  void set_seed(std::optional<std::uint64_t> seed);
  std::size_t max_in_flight() const { return options_.max_in_flight; }
  const BackendOptions& options() const { return options_; }

 private:
  struct Binding {
    std::shared_ptr<Provider> provider;
    RoleSettings settings;
  };

  Binding resolve(Role role) const;
  GenerationResult attempt(const GenerationRequest& request, Role role);
  bool cacheable(const GenerationRequest& request) const;
  void throttle();

  BackendOptions options_;
  struct Alias {
    Role target;
    RoleSettings settings;
  };

  std::map<Role, Binding> bindings_;
  std::map<Role, Alias> aliases_;

  mutable std::mutex cache_mutex_;
  std::unordered_map<std::string, GenerationResult> cache_;

  mutable std::mutex usage_mutex_;
  std::map<Role, UsageCounters> usage_;

  std::mutex rate_mutex_;
  std::chrono::steady_clock::time_point next_slot_{};
};

/// Cache key: SHA-256 over (model_id, prompt, temperature, max_tokens,
/// sample_index, attempt).
std::string cache_key(const GenerationRequest& request, std::string_view model_id);

// ---------------------------------------------------------------------------
// Scripted provider

/// A deterministic provider driven by a transcript. Each rule matches either
/// the SHA-256 of the full prompt ("sha256:<hex>") or a substring of it. Exact
/// hash matches win; among substring rules the longest match wins. A prompt
/// no rule matches is an error, never a silent default.
struct TranscriptRule {
  std::string match;
  // One response, or alternatives picked by request.sample_index (mod size).
  std::vector<std::string> responses;
  // Transient failures delivered before the first success, per sample.
  int fail_times = 0;
  // Permanent failure instead of a response.
  std::optional<ErrorCode> error;
  std::chrono::milliseconds delay{0};
};

void to_json(nlohmann::json& j, const TranscriptRule& rule);
void from_json(const nlohmann::json& j, TranscriptRule& rule);

std::string hash_matcher(std::string_view prompt);

class ScriptedProvider final : public Provider {
 public:
  explicit ScriptedProvider(std::vector<TranscriptRule> rules, std::string name = "scripted");
  static std::shared_ptr<ScriptedProvider> from_file(const std::string& path);

  ProviderReply generate(const GenerationRequest& request) override;
  std::string describe() const override { return name_; }

  std::size_t calls() const { return calls_.load(); }
  std::size_t peak_in_flight() const { return peak_.load(); }

 private:
  const TranscriptRule& lookup(std::string_view prompt) const;

  std::string name_;
  std::vector<TranscriptRule> rules_;
  std::unordered_map<std::string, std::size_t> by_hash_;

  std::mutex fail_mutex_;
  std::map<std::pair<std::size_t, std::uint32_t>, int> failures_delivered_;

  std::atomic<std::size_t> calls_{0};
  std::atomic<std::size_t> in_flight_{0};
  std::atomic<std::size_t> peak_{0};
};

// ---------------------------------------------------------------------------
// HTTP provider (OpenAI-compatible chat completions)

struct HttpProviderConfig {
  // e.g. https://api.openai.com/v1/chat/completions
  std::string endpoint;
  std::string model_id;
  // Name of the environment variable holding the API key; may be empty for
  // local servers that need no auth.
  std::string api_key_env;
  std::chrono::seconds timeout{120};
};

/// Posts {model, messages, temperature, max_tokens} and reads
/// choices[0].message.content. Prompts of the form "System: ...\n\nUser:\n..."
/// are split into a system and a user message.
class HttpProvider final : public Provider {
 public:
  explicit HttpProvider(HttpProviderConfig config);
  ProviderReply generate(const GenerationRequest& request) override;
  std::string describe() const override;

  static nlohmann::json build_body(const GenerationRequest& request, std::string_view model_id);

 private:
  HttpProviderConfig config_;
  std::string api_key_;
};

// ---------------------------------------------------------------------------
// Provider configuration

struct ProviderSpec {
  std::string kind;  // "scripted" | "http"
  std::string model_id;
  std::string transcript;
  std::string endpoint;
  std::string api_key_env;
  int max_tokens = 0;  // 0: role default
};

void from_json(const nlohmann::json& j, ProviderSpec& spec);
void to_json(nlohmann::json& j, const ProviderSpec& spec);

/// Binds strong/target (required) and judge (optional; aliases strong when
/// absent) from a {"strong": {...}, "target": {...}, "judge": {...}} object.
/// Relative transcript paths resolve against `base_dir`.
void configure_backend(Backend& backend, const nlohmann::json& providers,
                       const std::string& base_dir, int generation_max_tokens,
                       int judge_max_tokens);

}  // namespace synthalign
