#include "synthalign/backend.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <thread>

#include "synthalign/text.hpp"

namespace synthalign {

std::string_view to_string(Role role) {
  switch (role) {
    case Role::strong: return "strong";
    case Role::target: return "target";
    case Role::judge: return "judge";
  }
  return "strong";
}

Role role_from_string(std::string_view s) {
  if (s == "strong") return Role::strong;
  if (s == "target") return Role::target;
  if (s == "judge") return Role::judge;
  fail(ErrorCode::config, "unknown role '" + std::string(s) + "'");
}

void validate(const GenerationRequest& request) {
  require(!request.prompt.empty(), "generation request has an empty prompt");
  require(request.max_tokens >= 0, "max_tokens must be positive");
  require(request.temperature >= 0.0 && request.temperature <= 2.0,
          "temperature must lie in [0, 2]");
}

UsageCounters& UsageCounters::operator+=(const UsageCounters& o) {
  requests += o.requests;
  prompt_tokens += o.prompt_tokens;
  completion_tokens += o.completion_tokens;
  provider_calls += o.provider_calls;
  billed_prompt_tokens += o.billed_prompt_tokens;
  billed_completion_tokens += o.billed_completion_tokens;
  retries += o.retries;
  failures += o.failures;
  cache_hits += o.cache_hits;
  truncated += o.truncated;
  return *this;
}

void to_json(nlohmann::json& j, const UsageCounters& u) {
  j = nlohmann::json{{"requests", u.requests},
                     {"prompt_tokens", u.prompt_tokens},
                     {"completion_tokens", u.completion_tokens},
                     {"provider_calls", u.provider_calls},
                     {"billed_prompt_tokens", u.billed_prompt_tokens},
                     {"billed_completion_tokens", u.billed_completion_tokens},
                     {"retries", u.retries},
                     {"failures", u.failures},
                     {"cache_hits", u.cache_hits},
                     {"truncated", u.truncated}};
}

void from_json(const nlohmann::json& j, UsageCounters& u) {
  u.requests = j.value("requests", std::uint64_t{0});
  u.prompt_tokens = j.value("prompt_tokens", std::uint64_t{0});
  u.completion_tokens = j.value("completion_tokens", std::uint64_t{0});
  u.provider_calls = j.value("provider_calls", std::uint64_t{0});
  u.billed_prompt_tokens = j.value("billed_prompt_tokens", std::uint64_t{0});
  u.billed_completion_tokens = j.value("billed_completion_tokens", std::uint64_t{0});
  u.retries = j.value("retries", std::uint64_t{0});
  u.failures = j.value("failures", std::uint64_t{0});
  u.cache_hits = j.value("cache_hits", std::uint64_t{0});
  u.truncated = j.value("truncated", std::uint64_t{0});
}

std::string cache_key(const GenerationRequest& request, std::string_view model_id) {
  std::ostringstream ss;
  ss.precision(17);
  ss << model_id << '\x1f' << request.temperature << '\x1f' << request.max_tokens << '\x1f'
     << request.sample_index << '\x1f' << request.attempt << '\x1f' << request.prompt;
  return text::sha256_hex(ss.str());
}

Backend::Backend(BackendOptions options) : options_(std::move(options)) {
  require(options_.retry.max_attempts >= 1, "retry policy needs at least one attempt");
  require(options_.max_in_flight >= 1, "max_in_flight must be at least 1");
}

void Backend::bind(Role role, std::shared_ptr<Provider> provider, RoleSettings settings) {
  require(provider != nullptr, "cannot bind a null provider");
  if (settings.default_max_tokens < 1) settings.default_max_tokens = 2048;
  aliases_.erase(role);
  bindings_[role] = Binding{std::move(provider), std::move(settings)};
}

void Backend::alias(Role alias, Role target, RoleSettings settings) {
  require(alias != target, "a role cannot alias itself");
  require(bindings_.count(target) == 1, "alias target role is not bound");
  if (settings.default_max_tokens < 1) {
    settings.default_max_tokens = bindings_.at(target).settings.default_max_tokens;
  }
  if (settings.model_id.empty()) settings.model_id = bindings_.at(target).settings.model_id;
  bindings_.erase(alias);
  aliases_[alias] = Alias{target, std::move(settings)};
}

bool Backend::is_bound(Role role) const {
  return bindings_.count(role) == 1 || aliases_.count(role) == 1;
}

Backend::Binding Backend::resolve(Role role) const {
  if (auto it = bindings_.find(role); it != bindings_.end()) return it->second;
  if (auto it = aliases_.find(role); it != aliases_.end()) {
    return Binding{bindings_.at(it->second.target).provider, it->second.settings};
  }
  fail(ErrorCode::config, "role '" + std::string(to_string(role)) + "' is not bound");
}

BackendRole Backend::binding(Role role) const { return {role, resolve(role).settings.model_id}; }

int Backend::default_max_tokens(Role role) const {
  return resolve(role).settings.default_max_tokens;
}

bool Backend::cacheable(const GenerationRequest& request) const {
  return options_.cache_enabled && (request.temperature == 0.0 || options_.seed.has_value());
}

void Backend::set_seed(std::optional<std::uint64_t> seed) { options_.seed = seed; }

void Backend::throttle() {
  if (options_.requests_per_second <= 0.0) return;
  const auto interval = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(1.0 / options_.requests_per_second));
  std::chrono::steady_clock::time_point slot;
  {
    std::lock_guard lock(rate_mutex_);
    slot = std::max(std::chrono::steady_clock::now(), next_slot_);
    next_slot_ = slot + interval;
  }
  std::this_thread::sleep_until(slot);
}

GenerationResult Backend::attempt(const GenerationRequest& original, Role role) {
  const Binding binding = resolve(role);
  GenerationRequest request = original;
  if (request.model_id.empty()) request.model_id = binding.settings.model_id;
  if (request.max_tokens == 0) request.max_tokens = binding.settings.default_max_tokens;
  validate(request);

  auto account = [&](auto&& update) {
    std::lock_guard lock(usage_mutex_);
    update(usage_[role]);
  };

  const bool use_cache = cacheable(request);
  std::string key;
  if (use_cache) {
    key = cache_key(request, request.model_id);
    std::lock_guard lock(cache_mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) {
      GenerationResult hit = it->second;
      hit.cached = true;
      hit.retries = 0;
      account([&](UsageCounters& u) {
        ++u.requests;
        ++u.cache_hits;
        u.prompt_tokens += hit.usage.prompt_tokens;
        u.completion_tokens += hit.usage.completion_tokens;
      });
      return hit;
    }
  }

  const auto& policy = options_.retry;
  for (int attempt_no = 1;; ++attempt_no) {
    throttle();
    account([](UsageCounters& u) { ++u.provider_calls; });
    try {
      ProviderReply reply = binding.provider->generate(request);
      GenerationResult result;
      result.text = std::move(reply.text);
      result.model_id = request.model_id;
      result.usage = reply.usage;
      result.truncated = reply.truncated;
      result.retries = attempt_no - 1;
      account([&](UsageCounters& u) {
        ++u.requests;
        u.prompt_tokens += result.usage.prompt_tokens;
        u.completion_tokens += result.usage.completion_tokens;
        u.billed_prompt_tokens += result.usage.prompt_tokens;
        u.billed_completion_tokens += result.usage.completion_tokens;
        if (result.truncated) ++u.truncated;
      });
      if (use_cache) {
        std::lock_guard lock(cache_mutex_);
        cache_.emplace(key, result);
      }
      return result;
    } catch (const ProviderError& e) {
      if (!e.transient() || attempt_no >= policy.max_attempts) {
        account([](UsageCounters& u) { ++u.failures; });
        if (e.transient()) {
          throw Error(e.code(), std::string(e.what()) + " (gave up after " +
                                    std::to_string(attempt_no) + " attempts)");
        }
        throw;
      }
      account([](UsageCounters& u) { ++u.retries; });
      const auto factor = std::pow(2.0, attempt_no - 1);
      auto delay = std::chrono::milliseconds(
          static_cast<long long>(static_cast<double>(policy.base_delay.count()) * factor));
      std::this_thread::sleep_for(std::min(delay, policy.max_delay));
    } catch (...) {
      account([](UsageCounters& u) { ++u.failures; });
      throw;
    }
  }
}

GenerationResult Backend::complete(const GenerationRequest& request, Role role) {
  return attempt(request, role);
}

std::vector<GenerationResult> Backend::batch_complete(std::span<const GenerationRequest> requests,
                                                      Role role, std::size_t max_in_flight) {
  require(max_in_flight >= 1, "max_in_flight must be at least 1");
  std::vector<GenerationResult> results(requests.size());
  if (requests.empty()) return results;
  // Unbound roles are a caller bug, not a per-item failure.
  resolve(role);

  auto run_one = [&](std::size_t i) {
    try {
      results[i] = attempt(requests[i], role);
    } catch (const Error& e) {
      results[i].error = ErrorInfo{e.code(), e.what()};
    } catch (const std::exception& e) {
      results[i].error = ErrorInfo{ErrorCode::provider_unreachable, e.what()};
    }
  };

  const std::size_t workers = std::min(max_in_flight, requests.size());
  if (workers == 1) {
    for (std::size_t i = 0; i < requests.size(); ++i) run_one(i);
    return results;
  }
  std::atomic<std::size_t> next{0};
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < requests.size(); i = next++) run_one(i);
      });
    }
  }
  return results;
}

UsageCounters Backend::usage(Role role) const {
  std::lock_guard lock(usage_mutex_);
  auto it = usage_.find(role);
  return it == usage_.end() ? UsageCounters{} : it->second;
}

UsageCounters Backend::total_usage() const {
  std::lock_guard lock(usage_mutex_);
  UsageCounters total;
  for (const auto& [role, u] : usage_) total += u;
  return total;
}

std::map<Role, UsageCounters> Backend::usage_by_role() const {
  std::lock_guard lock(usage_mutex_);
  return usage_;
}

void Backend::restore_usage(const std::map<Role, UsageCounters>& usage) {
  std::lock_guard lock(usage_mutex_);
  for (const auto& [role, u] : usage) usage_[role] += u;
}

}  // namespace synthalign
