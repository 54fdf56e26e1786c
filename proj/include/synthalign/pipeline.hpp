#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "synthalign/backend.hpp"
#include "synthalign/filter.hpp"
#include "synthalign/tailor.hpp"
#include "synthalign/types.hpp"

namespace synthalign {

struct RunConfig {
  int total_instructions = 2000;
  int metadata_target = 200;
  int rubric_count = 4;
  int max_iterations = 4;
  double theta = 3.0;
  int score_scale = 10;
  double gen_temperature = 0.7;
  double judge_temperature = 0.0;
  int generation_max_tokens = 2048;
  int judge_max_tokens = 512;
  std::uint64_t seed = 0;

  std::size_t max_in_flight = 8;
  bool dedup = true;
  bool keep_at_max = false;
  bool weight_use_cases_by_frequency = false;
  // Stop cleanly at the next phase boundary once billed tokens exceed this.
  std::optional<std::uint64_t> token_budget;

  // Exactly one of these drives the run.
  std::string seeds_path;
  std::string metadata_path;
  std::string blocklist_path;
  std::string templates_dir;

  // Role bindings, see configure_backend().
  nlohmann::json providers = nlohmann::json::object();
  int retry_attempts = 3;
  int retry_base_delay_ms = 500;
  double requests_per_second = 0.0;

  /// Throws config errors.
  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Missing keys keep their defaults; unknown keys are config errors.
void from_json(const nlohmann::json& j, RunConfig& c);

/// Relative paths in a config file resolve against the file's directory.
RunConfig load_run_config(const std::filesystem::path& path);

enum class Phase { start, encoded, augmented, decoded, iterating, done };

/// A phase boundary. `round` counts completed filter rounds in `iterating`.
struct Checkpoint {
  Phase phase = Phase::start;
  int round = 0;

  std::string label() const;  // "decoded", "iterating(2)"
  static Checkpoint parse(std::string_view label);
  bool operator==(const Checkpoint&) const = default;
};

struct RunCounters {
  std::size_t seeds_skipped = 0;
  std::size_t decode_log_entries = 0;
  std::size_t decoded = 0;
  std::size_t duplicates_removed = 0;
  std::size_t accept_strong = 0;
  std::size_t accept_target = 0;
  std::size_t kept_at_max = 0;
  std::size_t deferrals = 0;
  std::size_t improvement_failures = 0;
  std::size_t copied_action_flags = 0;
};

void to_json(nlohmann::json& j, const RunCounters& c);
void from_json(const nlohmann::json& j, RunCounters& c);

struct RunState {
  Checkpoint checkpoint;
  std::string config_fingerprint;
  std::vector<InstructionMetadata> metadata;
  // Instructions awaiting the next filter round.
  std::vector<Instruction> pool;
  std::vector<CurationRecord> accepted;
  std::map<int, std::size_t> accepted_per_iteration;
  std::vector<SkipEntry> dropped;
  // Still undecided when the rounds ran out.
  std::vector<Instruction> unresolved;
  std::vector<RubricActionSet> rubrics;
  std::vector<std::string> untailorable;
  RunCounters counters;
  std::map<Role, UsageCounters> usage;
  // Lines in the append-only logs at this checkpoint.
  std::size_t events = 0;
  std::size_t instruction_lines = 0;
};

void to_json(nlohmann::json& j, const RunState& s);
void from_json(const nlohmann::json& j, RunState& s);

struct IterationShare {
  int iteration;
  std::size_t accepted;
  double proportion;
};

struct RunReport {
  std::string phase;
  std::size_t decoded = 0;
  std::size_t accepted = 0;
  std::size_t dropped = 0;
  std::size_t unresolved = 0;
  std::vector<IterationShare> per_iteration;
  bool no_accepted = false;
  RunCounters counters;
  std::map<std::string, std::size_t> drop_reasons;
  UsageCounters usage;
};

nlohmann::json to_json(const RunReport& r);

RunReport report(const RunState& state);

struct RunControl {
  bool resume = false;
  // Halt after checkpointing this boundary (simulates an interruption).
  std::optional<Checkpoint> stop_after;
};

struct RunOutcome {
  std::filesystem::path dataset_path;
  RunReport report;
  bool halted = false;
  std::string halt_reason;
};

/// encode -> augment -> plan -> decode -> rounds of (filter, improve) ->
/// dataset. Every phase boundary is checkpointed to `run_dir/state.json`, so
/// an interrupted run resumes to the same result.
///
/// Files in run_dir: state.json, events.jsonl, metadata.jsonl,
/// instructions.jsonl, rubrics.jsonl, dataset.jsonl, report.json.
RunOutcome run(const RunConfig& config, Backend& backend, const std::filesystem::path& run_dir,
               const RunControl& control = {});

/// Backend wired from config.providers plus retry/rate settings.
std::unique_ptr<Backend> make_backend(const RunConfig& config, const std::string& base_dir = ".");

RunState load_state(const std::filesystem::path& run_dir);

}  // namespace synthalign
