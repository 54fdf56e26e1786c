#include "synthalign/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "synthalign/decoder.hpp"
#include "synthalign/encoder.hpp"
#include "synthalign/jsonl.hpp"
#include "synthalign/text.hpp"

namespace synthalign {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "total_instructions", "metadata_target", "rubric_count", "max_iterations",
      "theta", "score_scale", "gen_temperature", "judge_temperature",
      "generation_max_tokens", "judge_max_tokens", "seed", "max_in_flight",
      "dedup", "keep_at_max", "weight_use_cases_by_frequency", "token_budget",
      "seeds_path", "metadata_path", "blocklist_path", "templates_dir",
      "providers", "retry_attempts", "retry_base_delay_ms", "requests_per_second"};
  return keys;
}

// Settings that change how a run is executed but not what it produces.
const std::set<std::string>& operational_keys() {
  static const std::set<std::string> keys{"max_in_flight", "token_budget", "providers",
                                          "retry_attempts", "retry_base_delay_ms",
                                          "requests_per_second"};
  return keys;
}

void config_check(bool ok, const std::string& message) {
  if (!ok) fail(ErrorCode::config, message);
}

}  // namespace

void RunConfig::validate() const {
  config_check(total_instructions >= 1, "total_instructions must be positive");
  config_check(metadata_target >= 1, "metadata_target must be positive");
  config_check(total_instructions >= metadata_target,
               "total_instructions must be at least metadata_target");
  config_check(rubric_count >= 1, "rubric_count must be positive");
  config_check(max_iterations >= 1, "max_iterations must be positive");
  config_check(score_scale >= 2, "score_scale must be at least 2");
  config_check(std::isfinite(theta) && theta > 0, "theta must be a positive number");
  config_check(theta < score_scale, "theta must be smaller than score_scale");
  config_check(gen_temperature >= 0 && gen_temperature <= 2, "gen_temperature must lie in [0, 2]");
  config_check(judge_temperature >= 0 && judge_temperature <= 2,
               "judge_temperature must lie in [0, 2]");
  config_check(generation_max_tokens >= 1 && judge_max_tokens >= 1, "max tokens must be positive");
  config_check(max_in_flight >= 1, "max_in_flight must be positive");
  config_check(retry_attempts >= 1, "retry_attempts must be positive");
  config_check(retry_base_delay_ms >= 0, "retry_base_delay_ms must not be negative");
  config_check(requests_per_second >= 0, "requests_per_second must not be negative");
  config_check(seeds_path.empty() != metadata_path.empty(),
               "exactly one of seeds_path and metadata_path must be set");
  config_check(providers.is_object(), "providers must be an object");
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"total_instructions", c.total_instructions},
                     {"metadata_target", c.metadata_target},
                     {"rubric_count", c.rubric_count},
                     {"max_iterations", c.max_iterations},
                     {"theta", c.theta},
                     {"score_scale", c.score_scale},
                     {"gen_temperature", c.gen_temperature},
                     {"judge_temperature", c.judge_temperature},
                     {"generation_max_tokens", c.generation_max_tokens},
                     {"judge_max_tokens", c.judge_max_tokens},
                     {"seed", c.seed},
                     {"max_in_flight", c.max_in_flight},
                     {"dedup", c.dedup},
                     {"keep_at_max", c.keep_at_max},
                     {"weight_use_cases_by_frequency", c.weight_use_cases_by_frequency},
                     {"token_budget", c.token_budget ? nlohmann::json(*c.token_budget)
                                                     : nlohmann::json(nullptr)},
                     {"seeds_path", c.seeds_path},
                     {"metadata_path", c.metadata_path},
                     {"blocklist_path", c.blocklist_path},
                     {"templates_dir", c.templates_dir},
                     {"providers", c.providers},
                     {"retry_attempts", c.retry_attempts},
                     {"retry_base_delay_ms", c.retry_base_delay_ms},
                     {"requests_per_second", c.requests_per_second}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  config_check(j.is_object(), "config must be a JSON object");
  const auto& known = config_keys();
  for (const auto& [key, value] : j.items()) {
    config_check(std::find(known.begin(), known.end(), key) != known.end(),
                 "unknown config key: " + key);
  }
  try {
    auto take = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    take("total_instructions", c.total_instructions);
    take("metadata_target", c.metadata_target);
    take("rubric_count", c.rubric_count);
    take("max_iterations", c.max_iterations);
    take("theta", c.theta);
    take("score_scale", c.score_scale);
    take("gen_temperature", c.gen_temperature);
    take("judge_temperature", c.judge_temperature);
    take("generation_max_tokens", c.generation_max_tokens);
    take("judge_max_tokens", c.judge_max_tokens);
    take("seed", c.seed);
    take("max_in_flight", c.max_in_flight);
    take("dedup", c.dedup);
    take("keep_at_max", c.keep_at_max);
    take("weight_use_cases_by_frequency", c.weight_use_cases_by_frequency);
    if (j.contains("token_budget")) {
      if (j["token_budget"].is_null()) {
        c.token_budget.reset();
      } else {
        c.token_budget = j["token_budget"].get<std::uint64_t>();
      }
    }
    take("seeds_path", c.seeds_path);
    take("metadata_path", c.metadata_path);
    take("blocklist_path", c.blocklist_path);
    take("templates_dir", c.templates_dir);
    take("providers", c.providers);
    take("retry_attempts", c.retry_attempts);
    take("retry_base_delay_ms", c.retry_base_delay_ms);
    take("requests_per_second", c.requests_per_second);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::config, std::string("bad config value: ") + e.what());
  }
}

RunConfig load_run_config(const fs::path& path) {
  nlohmann::json j;
  try {
    j = jsonl::read_json(path);
  } catch (const Error& e) {
    fail(ErrorCode::config, e.what());
  }
  auto c = j.get<RunConfig>();
  const auto base = path.parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && fs::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  resolve(c.seeds_path);
  resolve(c.metadata_path);
  resolve(c.blocklist_path);
  resolve(c.templates_dir);
  if (c.providers.is_object()) {
    for (auto& [role, spec] : c.providers.items()) {
      if (spec.is_object() && spec.contains("transcript") && spec["transcript"].is_string()) {
        auto p = spec["transcript"].get<std::string>();
        resolve(p);
        spec["transcript"] = p;
      }
    }
  }
  return c;
}

// ---------------------------------------------------------------------------

std::string Checkpoint::label() const {
  switch (phase) {
    case Phase::start: return "start";
    case Phase::encoded: return "encoded";
    case Phase::augmented: return "augmented";
    case Phase::decoded: return "decoded";
    case Phase::iterating: return "iterating(" + std::to_string(round) + ")";
    case Phase::done: return "done";
  }
  return "?";
}

Checkpoint Checkpoint::parse(std::string_view label) {
  const std::string s = text::to_lower(text::trim(label));
  if (s == "start") return {Phase::start, 0};
  if (s == "encoded") return {Phase::encoded, 0};
  if (s == "augmented") return {Phase::augmented, 0};
  if (s == "decoded") return {Phase::decoded, 0};
  if (s == "done") return {Phase::done, 0};
  const std::string prefix = "iterating(";
  if (s.size() > prefix.size() + 1 && s.compare(0, prefix.size(), prefix) == 0 && s.back() == ')') {
    const auto digits = s.substr(prefix.size(), s.size() - prefix.size() - 1);
    if (!digits.empty() && digits.find_first_not_of("0123456789") == std::string::npos &&
        digits.size() < 6) {
      return {Phase::iterating, std::stoi(digits)};
    }
  }
  fail(ErrorCode::config, "unknown checkpoint: " + std::string(label));
}

void to_json(nlohmann::json& j, const RunCounters& c) {
  j = nlohmann::json{{"seeds_skipped", c.seeds_skipped},
                     {"decode_log_entries", c.decode_log_entries},
                     {"decoded", c.decoded},
                     {"duplicates_removed", c.duplicates_removed},
                     {"accept_strong", c.accept_strong},
                     {"accept_target", c.accept_target},
                     {"kept_at_max", c.kept_at_max},
                     {"deferrals", c.deferrals},
                     {"improvement_failures", c.improvement_failures},
                     {"copied_action_flags", c.copied_action_flags}};
}

void from_json(const nlohmann::json& j, RunCounters& c) {
  j.at("seeds_skipped").get_to(c.seeds_skipped);
  j.at("decode_log_entries").get_to(c.decode_log_entries);
  j.at("decoded").get_to(c.decoded);
  j.at("duplicates_removed").get_to(c.duplicates_removed);
  j.at("accept_strong").get_to(c.accept_strong);
  j.at("accept_target").get_to(c.accept_target);
  j.at("kept_at_max").get_to(c.kept_at_max);
  j.at("deferrals").get_to(c.deferrals);
  j.at("improvement_failures").get_to(c.improvement_failures);
  j.at("copied_action_flags").get_to(c.copied_action_flags);
}

void to_json(nlohmann::json& j, const RunState& s) {
  nlohmann::json usage = nlohmann::json::object();
  for (const auto& [role, u] : s.usage) usage[std::string(to_string(role))] = u;
  nlohmann::json per_iteration = nlohmann::json::object();
  for (const auto& [it, n] : s.accepted_per_iteration) per_iteration[std::to_string(it)] = n;
  j = nlohmann::json{{"checkpoint", s.checkpoint.label()},
                     {"config_fingerprint", s.config_fingerprint},
                     {"metadata", s.metadata},
                     {"pool", s.pool},
                     {"accepted", s.accepted},
                     {"accepted_per_iteration", per_iteration},
                     {"dropped", s.dropped},
                     {"unresolved", s.unresolved},
                     {"rubrics", s.rubrics},
                     {"untailorable", s.untailorable},
                     {"counters", s.counters},
                     {"usage", usage},
                     {"events", s.events},
                     {"instruction_lines", s.instruction_lines}};
}

void from_json(const nlohmann::json& j, RunState& s) {
  s.checkpoint = Checkpoint::parse(j.at("checkpoint").get<std::string>());
  s.config_fingerprint = j.at("config_fingerprint").get<std::string>();
  s.metadata = j.at("metadata").get<std::vector<InstructionMetadata>>();
  s.pool = j.at("pool").get<std::vector<Instruction>>();
  s.accepted = j.at("accepted").get<std::vector<CurationRecord>>();
  s.accepted_per_iteration.clear();
  for (const auto& [it, n] : j.at("accepted_per_iteration").items()) {
    s.accepted_per_iteration[std::stoi(it)] = n.get<std::size_t>();
  }
  s.dropped = j.at("dropped").get<std::vector<SkipEntry>>();
  s.unresolved = j.at("unresolved").get<std::vector<Instruction>>();
  s.rubrics = j.at("rubrics").get<std::vector<RubricActionSet>>();
  s.untailorable = j.at("untailorable").get<std::vector<std::string>>();
  from_json(j.at("counters"), s.counters);
  s.usage.clear();
  for (const auto& [role, u] : j.at("usage").items()) {
    s.usage[role_from_string(role)] = u.get<UsageCounters>();
  }
  s.events = j.at("events").get<std::size_t>();
  s.instruction_lines = j.value("instruction_lines", std::size_t{0});
}

// ---------------------------------------------------------------------------

RunReport report(const RunState& state) {
  RunReport r;
  r.phase = state.checkpoint.label();
  r.decoded = state.counters.decoded;
  r.accepted = state.accepted.size();
  r.dropped = state.dropped.size();
  r.unresolved = state.unresolved.size() + state.pool.size();
  r.counters = state.counters;
  r.no_accepted = state.accepted.empty();
  if (!state.accepted.empty()) {
    const double total = static_cast<double>(state.accepted.size());
    for (const auto& [it, n] : state.accepted_per_iteration) {
      r.per_iteration.push_back({it, n, static_cast<double>(n) / total});
    }
  }
  for (const auto& d : state.dropped) {
    const auto colon = d.reason.find(':');
    ++r.drop_reasons[d.reason.substr(0, colon)];
  }
  for (const auto& [role, u] : state.usage) {
    r.usage.requests += u.requests;
    r.usage.prompt_tokens += u.prompt_tokens;
    r.usage.completion_tokens += u.completion_tokens;
  }
  return r;
}

nlohmann::json to_json(const RunReport& r) {
  nlohmann::json per_iteration = nlohmann::json::array();
  for (const auto& s : r.per_iteration) {
    per_iteration.push_back(
        {{"iteration", s.iteration}, {"accepted", s.accepted}, {"proportion", s.proportion}});
  }
  nlohmann::json counters;
  to_json(counters, r.counters);
  return nlohmann::json{{"phase", r.phase},
                        {"decoded", r.decoded},
                        {"accepted", r.accepted},
                        {"dropped", r.dropped},
                        {"unresolved", r.unresolved},
                        {"per_iteration", per_iteration},
                        {"no_accepted", r.no_accepted},
                        {"counters", counters},
                        {"drop_reasons", r.drop_reasons},
                        {"usage",
                         {{"requests", r.usage.requests},
                          {"prompt_tokens", r.usage.prompt_tokens},
                          {"completion_tokens", r.usage.completion_tokens}}}};
}

// ---------------------------------------------------------------------------

std::unique_ptr<Backend> make_backend(const RunConfig& config, const std::string& base_dir) {
  BackendOptions options;
  options.retry.max_attempts = config.retry_attempts;
  options.retry.base_delay = std::chrono::milliseconds(config.retry_base_delay_ms);
  options.seed = config.seed;
  options.requests_per_second = config.requests_per_second;
  options.max_in_flight = config.max_in_flight;
  auto backend = std::make_unique<Backend>(options);
  configure_backend(*backend, config.providers, base_dir, config.generation_max_tokens,
                    config.judge_max_tokens);
  return backend;
}

RunState load_state(const fs::path& run_dir) {
  const auto path = run_dir / "state.json";
  if (!fs::exists(path)) fail(ErrorCode::no_data, "no run state in " + run_dir.string());
  try {
    return jsonl::read_json(path).get<RunState>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::io, "corrupt run state " + path.string() + ": " + e.what());
  }
}

namespace {

std::string fingerprint(const RunConfig& config) {
  nlohmann::json j = config;
  for (const auto& key : operational_keys()) j.erase(key);
  return text::sha256_hex(j.dump());
}

std::vector<Instruction> load_seeds(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorCode::config, "seeds file not found: " + path.string());
  std::vector<Instruction> seeds;
  const auto ext = path.extension().string();
  if (ext == ".jsonl" || ext == ".json") {
    const auto rows = jsonl::read(path);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& row = rows[i];
      std::string body;
      if (row.is_string()) {
        body = row.get<std::string>();
      } else if (row.is_object() && row.contains("instruction")) {
        body = row["instruction"].get<std::string>();
      } else if (row.is_object() && row.contains("text")) {
        body = row["text"].get<std::string>();
      } else {
        fail(ErrorCode::config, path.string() + ":" + std::to_string(i + 1) + ": no instruction");
      }
      char id[16];
      std::snprintf(id, sizeof id, "s%05zu", i + 1);
      auto seed_id = row.is_object() && row.contains("id") && row["id"].is_string()
                         ? row["id"].get<std::string>()
                         : std::string(id);
      seeds.push_back(Instruction::seed(std::move(seed_id), std::move(body)));
    }
  } else {
    const auto content = jsonl::read_text(path);
    for (const auto line : text::split_lines(content)) {
      const auto body = text::trim(line);
      if (body.empty()) continue;
      char id[16];
      std::snprintf(id, sizeof id, "s%05zu", seeds.size() + 1);
      seeds.push_back(Instruction::seed(id, std::string(body)));
    }
  }
  if (seeds.empty()) fail(ErrorCode::no_data, "seeds file is empty: " + path.string());
  return seeds;
}

std::vector<InstructionMetadata> load_metadata(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorCode::config, "metadata file not found: " + path.string());
  std::vector<InstructionMetadata> out;
  const auto rows = jsonl::read(path);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    const auto where = path.string() + ":" + std::to_string(i + 1);
    if (!row.is_object() || !row.contains("use_case") || !row.contains("skills")) {
      fail(ErrorCode::config, where + ": expected {use_case, skills}");
    }
    InstructionMetadata m;
    try {
      m.id = row.contains("id") ? row["id"].get<std::string>() : metadata_id(i + 1);
      m.use_case = text::to_lower(text::trim(row["use_case"].get<std::string>()));
      for (const auto& s : row["skills"].get<std::vector<std::string>>()) {
        m.skills.push_back(text::to_lower(text::trim(s)));
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::config, where + ": " + e.what());
    }
    m.provenance = Provenance::user_provided;
    if (m.use_case.empty() || m.skills.empty()) {
      fail(ErrorCode::config, where + ": use case and skills must be non-empty");
    }
    if (!ids.insert(m.id).second) fail(ErrorCode::config, where + ": duplicate id " + m.id);
    out.push_back(std::move(m));
  }
  if (out.empty()) fail(ErrorCode::no_data, "metadata file is empty: " + path.string());
  return out;
}

// Keeps only the first `keep` lines so a resumed run does not repeat
// entries written after the last checkpoint.
void truncate_lines(const fs::path& path, std::size_t keep) {
  if (!fs::exists(path)) return;
  std::ifstream in(path, std::ios::binary);
  std::string content, line;
  std::size_t n = 0;
  while (n < keep && std::getline(in, line)) {
    content += line;
    content += '\n';
    ++n;
  }
  in.close();
  jsonl::write_text_atomic(path, content);
}

class Runner {
 public:
  Runner(const RunConfig& config, Backend& backend, fs::path run_dir, const RunControl& control)
      : config_(config),
        backend_(backend),
        dir_(std::move(run_dir)),
        control_(control),
        registry_(config.templates_dir.empty()
                      ? prompts::PromptRegistry::defaults()
                      : prompts::PromptRegistry::with_overrides(config.templates_dir)),
        ctx_{backend, registry_, config.gen_temperature, config.judge_temperature,
             config.score_scale},
        book_(config.rubric_count) {}

  RunOutcome execute();

 private:
  void event(nlohmann::json e) {
    e["seq"] = state_.events++;
    jsonl::append(dir_ / "events.jsonl", e);
  }
  void record_instructions(std::span<const Instruction> instrs) {
    for (const auto& i : instrs) {
      jsonl::append(dir_ / "instructions.jsonl", i);
      ++state_.instruction_lines;
    }
  }
  // Persists the boundary; returns a halt reason when the run must stop here.
  std::optional<std::string> checkpoint(Checkpoint c);
  void write_outputs();

  void encode();
  void augment();
  void decode();
  void iterate_round();

  const RunConfig& config_;
  Backend& backend_;
  fs::path dir_;
  RunControl control_;
  prompts::PromptRegistry registry_;
  StageContext ctx_;
  RubricBook book_;
  RunState state_;
};

std::optional<std::string> Runner::checkpoint(Checkpoint c) {
  state_.checkpoint = c;
  state_.rubrics = book_.sets();
  state_.untailorable = book_.untailorable_ids();
  state_.usage = backend_.usage_by_role();
  event({{"type", "checkpoint"}, {"phase", c.label()}});
  std::vector<nlohmann::json> rubric_rows(state_.rubrics.begin(), state_.rubrics.end());
  jsonl::write(dir_ / "rubrics.jsonl", rubric_rows);
  jsonl::write_json(dir_ / "state.json", state_);
  jsonl::write_json(dir_ / "report.json", to_json(report(state_)));

  if (control_.stop_after && *control_.stop_after == c && c.phase != Phase::done) {
    return "stopped after " + c.label();
  }
  if (config_.token_budget) {
    std::uint64_t billed = 0;
    for (const auto& [role, u] : state_.usage) {
      billed += u.billed_prompt_tokens + u.billed_completion_tokens;
    }
    if (billed > *config_.token_budget && c.phase != Phase::done) {
      return "token budget exceeded: " + std::to_string(billed) + " > " +
             std::to_string(*config_.token_budget);
    }
  }
  return std::nullopt;
}

void Runner::encode() {
  if (!config_.metadata_path.empty()) {
    state_.metadata = load_metadata(config_.metadata_path);
  } else {
    const auto seeds = load_seeds(config_.seeds_path);
    auto result = encode_seeds(seeds, ctx_);
    for (const auto& s : result.skipped) {
      event({{"type", "seed_skipped"}, {"id", s.id}, {"reason", s.reason}});
    }
    state_.counters.seeds_skipped = result.skipped.size();
    state_.metadata = std::move(result.metadata);
  }
  std::vector<nlohmann::json> rows(state_.metadata.begin(), state_.metadata.end());
  jsonl::write(dir_ / "metadata.jsonl", rows);
}

void Runner::augment() {
  const auto target = static_cast<std::size_t>(config_.metadata_target);
  if (state_.metadata.size() < target) {
    Blocklist blocklist;
    if (!config_.blocklist_path.empty()) blocklist = load_blocklist(config_.blocklist_path);
    AugmentOptions options;
    options.weight_by_frequency = config_.weight_use_cases_by_frequency;
    state_.metadata = augment_metadata(state_.metadata, target,
                                       text::derive_seed(config_.seed, "augment"), blocklist,
                                       options);
  }
  std::vector<nlohmann::json> rows(state_.metadata.begin(), state_.metadata.end());
  jsonl::write(dir_ / "metadata.jsonl", rows);
  event({{"type", "augmented"}, {"metadata", state_.metadata.size()}});
}

void Runner::decode() {
  if (state_.metadata.size() > static_cast<std::size_t>(config_.total_instructions)) {
    fail(ErrorCode::config, "total_instructions is smaller than the metadata pool (" +
                                std::to_string(state_.metadata.size()) + ")");
  }
  const auto counts = plan_counts(state_.metadata, config_.total_instructions);
  auto result = decode_pool(state_.metadata, counts, ctx_);
  for (const auto& entry : result.log) {
    event({{"type", "decode_log"}, {"id", entry.id}, {"reason", entry.reason}});
  }
  state_.counters.decode_log_entries = result.log.size();
  auto pool = std::move(result.instructions);
  if (config_.dedup) {
    auto unique = dedup_instructions(pool);
    state_.counters.duplicates_removed = pool.size() - unique.size();
    pool = std::move(unique);
  }
  if (pool.empty()) fail(ErrorCode::no_data, "decoding produced no instructions");
  state_.counters.decoded = pool.size();
  record_instructions(pool);
  state_.pool = std::move(pool);
}

void Runner::iterate_round() {
  const int round = state_.checkpoint.round + 1;
  FilterOptions options{config_.theta, config_.max_iterations, config_.keep_at_max};
  auto pass = filter_pass(state_.pool, options, ctx_);

  for (auto& record : pass.accepted) {
    event({{"type", "accepted"},
           {"id", record.instruction.id},
           {"source", to_string(record.response_source)},
           {"gap", record.gap},
           {"iteration", record.accepted_at_iteration}});
    ++state_.accepted_per_iteration[record.accepted_at_iteration];
    state_.accepted.push_back(std::move(record));
  }
  state_.counters.accept_strong += pass.accept_strong;
  state_.counters.accept_target += pass.accept_target;
  state_.counters.kept_at_max += pass.kept_at_max;
  state_.counters.deferrals += pass.deferred.size();
  for (const auto& d : pass.deferred) event({{"type", "deferred"}, {"id", d.id}});
  auto drop = [&](SkipEntry entry) {
    event({{"type", "dropped"}, {"id", entry.id}, {"reason", entry.reason}});
    state_.dropped.push_back(std::move(entry));
  };
  for (auto& d : pass.dropped) drop(std::move(d));

  std::vector<Instruction> next;
  if (round >= config_.max_iterations) {
    // No round left to duel an improved version; survivors stay undecided.
    next = std::move(pass.survivors);
  } else {
    std::map<std::string, const InstructionMetadata*> by_id;
    for (const auto& m : state_.metadata) by_id[m.id] = &m;
    std::vector<InstructionMetadata> wanted;
    std::set<std::string> seen;
    for (const auto& s : pass.survivors) {
      if (s.metadata_id && by_id.count(*s.metadata_id) && seen.insert(*s.metadata_id).second) {
        wanted.push_back(*by_id[*s.metadata_id]);
      }
    }
    book_.ensure(wanted, ctx_);

    std::vector<Instruction> tailorable;
    std::vector<RubricActionSet> sets;
    for (auto& s : pass.survivors) {
      std::optional<RubricActionSet> set;
      if (s.metadata_id) set = book_.find(*s.metadata_id);
      if (!set) {
        drop({s.id, "untailorable"});
        continue;
      }
      tailorable.push_back(std::move(s));
      sets.push_back(std::move(*set));
    }

    auto run_jobs = [&](const std::vector<std::size_t>& which, std::uint32_t attempt) {
      std::vector<ImproveJob> jobs;
      for (auto i : which) {
        jobs.push_back({&tailorable[i], &sets[i],
                        improvement_seed(config_.seed, tailorable[i], attempt)});
      }
      return improve_batch(jobs, ctx_, config_.max_iterations, attempt);
    };
    std::vector<std::size_t> all(tailorable.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    auto results = run_jobs(all, 0);
    std::vector<std::size_t> failed;
    for (std::size_t i = 0; i < results.size(); ++i) {
      if (results[i].failed) failed.push_back(i);
    }
    if (!failed.empty()) {
      auto again = run_jobs(failed, 1);
      for (std::size_t k = 0; k < failed.size(); ++k) results[failed[k]] = std::move(again[k]);
    }
    std::vector<Instruction> improved;
    for (std::size_t i = 0; i < results.size(); ++i) {
      auto& r = results[i];
      if (r.failed) {
        ++state_.counters.improvement_failures;
        event({{"type", "improvement_failed"}, {"id", tailorable[i].id}, {"reason", r.failure_reason}});
        next.push_back(std::move(tailorable[i]));
        continue;
      }
      if (r.copied_action_span) {
        ++state_.counters.copied_action_flags;
        event({{"type", "copied_action_span"}, {"id", r.instruction.id}});
      }
      event({{"type", "improved"}, {"id", r.instruction.id}, {"action", r.action}});
      improved.push_back(r.instruction);
      next.push_back(std::move(r.instruction));
    }
    record_instructions(improved);
  }
  for (auto& d : pass.deferred) next.push_back(std::move(d));
  state_.pool = std::move(next);
  state_.checkpoint.round = round;
}

void Runner::write_outputs() {
  std::vector<nlohmann::json> rows;
  rows.reserve(state_.accepted.size());
  for (const auto& record : state_.accepted) rows.push_back(to_dataset_row(record));
  jsonl::write(dir_ / "dataset.jsonl", rows);
}

RunOutcome Runner::execute() {
  config_.validate();
  fs::create_directories(dir_);
  const auto state_path = dir_ / "state.json";
  const auto print = fingerprint(config_);
  if (fs::exists(state_path)) {
    if (!control_.resume) {
      fail(ErrorCode::config, dir_.string() + " already holds a run; resume it or pick a new directory");
    }
    state_ = load_state(dir_);
    if (state_.config_fingerprint != print) {
      fail(ErrorCode::config, "config differs from the one that started this run");
    }
    truncate_lines(dir_ / "events.jsonl", state_.events);
    truncate_lines(dir_ / "instructions.jsonl", state_.instruction_lines);
    book_.restore(state_.rubrics, state_.untailorable);
    backend_.restore_usage(state_.usage);
    event({{"type", "resumed"}, {"phase", state_.checkpoint.label()}});
  } else {
    for (const char* name : {"events.jsonl", "instructions.jsonl", "dataset.jsonl"}) {
      fs::remove(dir_ / name);
    }
    state_ = RunState{};
    state_.config_fingerprint = print;
    event({{"type", "started"}, {"seed", config_.seed}});
  }

  RunOutcome outcome;
  outcome.dataset_path = dir_ / "dataset.jsonl";
  auto halt = [&](std::string reason) {
    event({{"type", "halted"}, {"reason", reason}});
    jsonl::write_json(state_path, state_);
    outcome.halted = true;
    outcome.halt_reason = std::move(reason);
    outcome.report = report(state_);
    return outcome;
  };

  try {
    std::optional<std::string> stop;
    if (state_.checkpoint.phase == Phase::start) {
      encode();
      if ((stop = checkpoint({Phase::encoded, 0}))) return halt(*stop);
    }
    if (state_.checkpoint.phase == Phase::encoded) {
      augment();
      if ((stop = checkpoint({Phase::augmented, 0}))) return halt(*stop);
    }
    if (state_.checkpoint.phase == Phase::augmented) {
      decode();
      if ((stop = checkpoint({Phase::decoded, 0}))) return halt(*stop);
    }
    if (state_.checkpoint.phase == Phase::decoded) state_.checkpoint = {Phase::iterating, 0};
    while (state_.checkpoint.phase == Phase::iterating &&
           state_.checkpoint.round < config_.max_iterations && !state_.pool.empty()) {
      iterate_round();
      if ((stop = checkpoint(state_.checkpoint))) return halt(*stop);
    }
    if (state_.checkpoint.phase == Phase::iterating) {
      for (auto& i : state_.pool) {
        event({{"type", "unresolved"}, {"id", i.id}});
        state_.unresolved.push_back(std::move(i));
      }
      state_.pool.clear();
      write_outputs();
      checkpoint({Phase::done, 0});
    } else if (!fs::exists(outcome.dataset_path)) {
      write_outputs();
    }
  } catch (const Error& e) {
    event({{"type", "error"}, {"code", to_string(e.code())}, {"message", e.what()}});
    throw;
  }
  outcome.report = report(state_);
  return outcome;
}

}  // namespace

RunOutcome run(const RunConfig& config, Backend& backend, const fs::path& run_dir,
               const RunControl& control) {
  Runner runner(config, backend, run_dir, control);
  return runner.execute();
}

}  // namespace synthalign
