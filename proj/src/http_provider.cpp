#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <cstdlib>

#include "synthalign/backend.hpp"

namespace synthalign {

namespace {

constexpr std::string_view kSystemPrefix = "System: ";
constexpr std::string_view kUserMarker = "\n\nUser:\n";

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    fail(ErrorCode::config, "endpoint '" + url + "' lacks a scheme");
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

HttpProvider::HttpProvider(HttpProviderConfig config) : config_(std::move(config)) {
  if (config_.endpoint.empty()) fail(ErrorCode::config, "http provider needs an endpoint");
  if (config_.model_id.empty()) fail(ErrorCode::config, "http provider needs a model_id");
  split_endpoint(config_.endpoint);
  if (!config_.api_key_env.empty()) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (!key || !*key) {
      fail(ErrorCode::config, "environment variable " + config_.api_key_env + " is not set");
    }
    api_key_ = key;
  }
}

std::string HttpProvider::describe() const { return "http:" + config_.model_id; }

nlohmann::json HttpProvider::build_body(const GenerationRequest& request,
                                        std::string_view model_id) {
  auto messages = nlohmann::json::array();
  std::string_view prompt = request.prompt;
  const auto user_at = prompt.find(kUserMarker);
  if (prompt.starts_with(kSystemPrefix) && user_at != std::string_view::npos) {
    const auto system = prompt.substr(kSystemPrefix.size(), user_at - kSystemPrefix.size());
    messages.push_back({{"role", "system"}, {"content", std::string(system)}});
    messages.push_back(
        {{"role", "user"}, {"content", std::string(prompt.substr(user_at + kUserMarker.size()))}});
  } else {
    messages.push_back({{"role", "user"}, {"content", request.prompt}});
  }
  return nlohmann::json{{"model", std::string(model_id)},
                        {"messages", std::move(messages)},
                        {"temperature", request.temperature},
                        {"max_tokens", request.max_tokens}};
}

ProviderReply HttpProvider::generate(const GenerationRequest& request) {
  const auto [origin, path] = split_endpoint(config_.endpoint);
  httplib::Client client(origin);
  client.set_connection_timeout(std::chrono::seconds(10));
  client.set_read_timeout(config_.timeout);
  client.set_write_timeout(config_.timeout);

  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  const auto model = request.model_id.empty() ? config_.model_id : request.model_id;
  const auto body = build_body(request, model).dump();

  auto res = client.Post(path, headers, body, "application/json");
  if (!res) {
    throw ProviderError(ErrorCode::provider_unreachable,
                        describe() + ": " + httplib::to_string(res.error()), true);
  }
  const int status = res->status;
  if (status == 429) {
    if (res->body.find("insufficient_quota") != std::string::npos) {
      throw ProviderError(ErrorCode::quota_exceeded, describe() + ": quota exceeded", false);
    }
    throw ProviderError(ErrorCode::provider_unreachable, describe() + ": rate limited", true);
  }
  if (status >= 500) {
    throw ProviderError(ErrorCode::provider_unreachable,
                        describe() + ": HTTP " + std::to_string(status), true);
  }
  if (status != 200) {
    throw ProviderError(ErrorCode::request_rejected,
                        describe() + ": HTTP " + std::to_string(status) + ": " + res->body, false);
  }

  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::parse_error&) {
    throw ProviderError(ErrorCode::provider_unreachable, describe() + ": malformed response body",
                        true);
  }
  const auto& choices = parsed.value("choices", nlohmann::json::array());
  if (!choices.is_array() || choices.empty() || !choices[0].contains("message")) {
    throw ProviderError(ErrorCode::provider_unreachable, describe() + ": response has no choices",
                        true);
  }
  ProviderReply reply;
  const auto& content = choices[0]["message"].value("content", nlohmann::json());
  reply.text = content.is_string() ? content.get<std::string>() : std::string();
  reply.truncated = choices[0].value("finish_reason", std::string()) == "length";
  if (auto it = parsed.find("usage"); it != parsed.end() && it->is_object()) {
    reply.usage.prompt_tokens = it->value("prompt_tokens", std::uint64_t{0});
    reply.usage.completion_tokens = it->value("completion_tokens", std::uint64_t{0});
  }
  return reply;
}

}  // namespace synthalign
