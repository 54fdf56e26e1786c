#include <thread>

#include "synthalign/backend.hpp"
#include "synthalign/jsonl.hpp"
#include "synthalign/text.hpp"

namespace synthalign {

namespace {

constexpr std::string_view kHashPrefix = "sha256:";

ErrorCode error_code_from_string(std::string_view s) {
  if (s == "provider_unreachable") return ErrorCode::provider_unreachable;
  if (s == "quota_exceeded") return ErrorCode::quota_exceeded;
  if (s == "request_rejected") return ErrorCode::request_rejected;
  fail(ErrorCode::config, "transcript rule has unsupported error '" + std::string(s) + "'");
}

struct InFlightProbe {
  std::atomic<std::size_t>& current;
  explicit InFlightProbe(std::atomic<std::size_t>& c, std::atomic<std::size_t>& peak)
      : current(c) {
    const auto now = ++current;
    auto seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {
    }
  }
  ~InFlightProbe() { --current; }
};

}  // namespace

std::string hash_matcher(std::string_view prompt) {
  return std::string(kHashPrefix) + text::sha256_hex(prompt);
}

void to_json(nlohmann::json& j, const TranscriptRule& rule) {
  j = nlohmann::json{{"match", rule.match}};
  if (rule.responses.size() == 1) {
    j["response"] = rule.responses.front();
  } else if (!rule.responses.empty()) {
    j["responses"] = rule.responses;
  }
  if (rule.fail_times > 0) j["fail_times"] = rule.fail_times;
  if (rule.error) j["error"] = to_string(*rule.error);
  if (rule.delay.count() > 0) j["delay_ms"] = rule.delay.count();
}

void from_json(const nlohmann::json& j, TranscriptRule& rule) {
  rule.match = j.at("match").get<std::string>();
  rule.responses.clear();
  if (auto it = j.find("response"); it != j.end()) rule.responses.push_back(it->get<std::string>());
  if (auto it = j.find("responses"); it != j.end()) {
    for (const auto& r : *it) rule.responses.push_back(r.get<std::string>());
  }
  rule.fail_times = j.value("fail_times", 0);
  rule.error.reset();
  if (auto it = j.find("error"); it != j.end()) {
    rule.error = error_code_from_string(it->get<std::string>());
  }
  rule.delay = std::chrono::milliseconds(j.value("delay_ms", 0));
}

ScriptedProvider::ScriptedProvider(std::vector<TranscriptRule> rules, std::string name)
    : name_(std::move(name)), rules_(std::move(rules)) {
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    const auto& rule = rules_[i];
    require(!rule.match.empty(), "transcript rule " + std::to_string(i) + " has an empty matcher");
    require(!rule.responses.empty() || rule.error.has_value(),
            "transcript rule '" + rule.match + "' has neither response nor error");
    if (!seen.emplace(rule.match, i).second) {
      fail(ErrorCode::precondition, "duplicate transcript matcher '" + rule.match + "'");
    }
    if (rule.match.starts_with(kHashPrefix)) by_hash_.emplace(rule.match.substr(kHashPrefix.size()), i);
  }
}

std::shared_ptr<ScriptedProvider> ScriptedProvider::from_file(const std::string& path) {
  std::vector<TranscriptRule> rules;
  for (const auto& row : jsonl::read(path)) rules.push_back(row.get<TranscriptRule>());
  return std::make_shared<ScriptedProvider>(std::move(rules), "scripted:" + path);
}

const TranscriptRule& ScriptedProvider::lookup(std::string_view prompt) const {
  if (!by_hash_.empty()) {
    if (auto it = by_hash_.find(text::sha256_hex(prompt)); it != by_hash_.end()) {
      return rules_[it->second];
    }
  }
  const TranscriptRule* best = nullptr;
  bool ambiguous = false;
  for (const auto& rule : rules_) {
    if (rule.match.starts_with(kHashPrefix)) continue;
    if (prompt.find(rule.match) == std::string_view::npos) continue;
    if (!best || rule.match.size() > best->match.size()) {
      best = &rule;
      ambiguous = false;
    } else if (rule.match.size() == best->match.size()) {
      ambiguous = true;
    }
  }
  const auto preview = std::string(prompt.substr(0, 120));
  if (!best) {
    throw ProviderError(ErrorCode::unmatched_prompt,
                        name_ + ": no transcript rule matches prompt \"" + preview + "\"", false);
  }
  if (ambiguous) {
    throw ProviderError(ErrorCode::unmatched_prompt,
                        name_ + ": several equally specific rules match \"" + preview + "\"",
                        false);
  }
  return *best;
}

ProviderReply ScriptedProvider::generate(const GenerationRequest& request) {
  ++calls_;
  InFlightProbe probe(in_flight_, peak_);
  const TranscriptRule& rule = lookup(request.prompt);
  if (rule.delay.count() > 0) std::this_thread::sleep_for(rule.delay);
  if (rule.error) {
    throw ProviderError(*rule.error, name_ + ": scripted failure for '" + rule.match + "'", false);
  }
  if (rule.fail_times > 0) {
    const auto index = static_cast<std::size_t>(&rule - rules_.data());
    std::lock_guard lock(fail_mutex_);
    int& delivered = failures_delivered_[{index, request.sample_index}];
    if (delivered < rule.fail_times) {
      ++delivered;
      throw ProviderError(ErrorCode::provider_unreachable,
                          name_ + ": scripted transient failure " + std::to_string(delivered),
                          true);
    }
  }
  ProviderReply reply;
  reply.text = rule.responses[request.sample_index % rule.responses.size()];
  reply.usage.prompt_tokens = text::count_words(request.prompt);
  reply.usage.completion_tokens = text::count_words(reply.text);
  reply.truncated = request.max_tokens > 0 &&
                    reply.usage.completion_tokens > static_cast<std::uint64_t>(request.max_tokens);
  return reply;
}

}  // namespace synthalign
