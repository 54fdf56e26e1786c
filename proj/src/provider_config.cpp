#include <filesystem>

#include "synthalign/backend.hpp"

namespace synthalign {

void from_json(const nlohmann::json& j, ProviderSpec& spec) {
  if (!j.is_object()) fail(ErrorCode::config, "provider entry must be an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "api_key" || key == "key" || key == "token") {
      fail(ErrorCode::config,
           "API keys belong in environment variables; use \"api_key_env\" instead of \"" + key +
               "\"");
    }
    if (key != "kind" && key != "model_id" && key != "transcript" && key != "endpoint" &&
        key != "api_key_env" && key != "max_tokens") {
      fail(ErrorCode::config, "unknown provider field '" + key + "'");
    }
  }
  spec.kind = j.value("kind", std::string());
  spec.model_id = j.value("model_id", std::string());
  spec.transcript = j.value("transcript", std::string());
  spec.endpoint = j.value("endpoint", std::string());
  spec.api_key_env = j.value("api_key_env", std::string());
  spec.max_tokens = j.value("max_tokens", 0);
  if (spec.kind == "scripted") {
    if (spec.transcript.empty()) fail(ErrorCode::config, "scripted provider needs a transcript");
  } else if (spec.kind == "http") {
    if (spec.endpoint.empty() || spec.model_id.empty()) {
      fail(ErrorCode::config, "http provider needs endpoint and model_id");
    }
  } else {
    fail(ErrorCode::config, "provider kind must be \"scripted\" or \"http\"");
  }
  if (spec.max_tokens < 0) fail(ErrorCode::config, "max_tokens must be positive");
}

void to_json(nlohmann::json& j, const ProviderSpec& spec) {
  j = nlohmann::json{{"kind", spec.kind}};
  if (!spec.model_id.empty()) j["model_id"] = spec.model_id;
  if (!spec.transcript.empty()) j["transcript"] = spec.transcript;
  if (!spec.endpoint.empty()) j["endpoint"] = spec.endpoint;
  if (!spec.api_key_env.empty()) j["api_key_env"] = spec.api_key_env;
  if (spec.max_tokens > 0) j["max_tokens"] = spec.max_tokens;
}

namespace {

std::shared_ptr<Provider> make_provider(const ProviderSpec& spec, const std::string& base_dir) {
  if (spec.kind == "scripted") {
    std::filesystem::path path(spec.transcript);
    if (path.is_relative()) path = std::filesystem::path(base_dir) / path;
    return ScriptedProvider::from_file(path.string());
  }
  return std::make_shared<HttpProvider>(
      HttpProviderConfig{spec.endpoint, spec.model_id, spec.api_key_env, std::chrono::seconds(120)});
}

}  // namespace

void configure_backend(Backend& backend, const nlohmann::json& providers,
                       const std::string& base_dir, int generation_max_tokens,
                       int judge_max_tokens) {
  if (!providers.is_object()) fail(ErrorCode::config, "\"providers\" must be an object");
  for (const auto& [key, value] : providers.items()) role_from_string(key);
  for (Role role : {Role::strong, Role::target}) {
    const auto name = std::string(to_string(role));
    if (!providers.contains(name)) {
      fail(ErrorCode::config, "the " + name + " role must be bound before the run starts");
    }
  }
  // Roles that name the same scripted transcript share one provider.
  std::map<std::string, std::shared_ptr<Provider>> shared;
  for (Role role : {Role::strong, Role::target, Role::judge}) {
    const auto name = std::string(to_string(role));
    const int role_default = role == Role::judge ? judge_max_tokens : generation_max_tokens;
    if (!providers.contains(name)) {
      backend.alias(role, Role::strong, RoleSettings{{}, role_default});
      continue;
    }
    const auto spec = providers.at(name).get<ProviderSpec>();
    const auto identity = providers.at(name).dump();
    auto& provider = shared[identity];
    if (!provider) provider = make_provider(spec, base_dir);
    backend.bind(role, provider,
                 RoleSettings{spec.model_id.empty() ? spec.kind : spec.model_id,
                              spec.max_tokens > 0 ? spec.max_tokens : role_default});
  }
}

}  // namespace synthalign
