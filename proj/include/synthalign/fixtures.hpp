#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "synthalign/backend.hpp"
#include "synthalign/pipeline.hpp"
#include "synthalign/types.hpp"

namespace synthalign::fixtures {

/// Collects transcript rules; a matcher may appear only once.
class TranscriptBuilder {
 public:
  /// Substring rule.
  TranscriptBuilder& add(std::string match, std::string response);
  /// Rule for one exact prompt.
  TranscriptBuilder& add_exact(std::string_view prompt, std::string response);
  TranscriptBuilder& add_responses(std::string match, std::vector<std::string> responses);
  TranscriptBuilder& add_rule(TranscriptRule rule);

  const std::vector<TranscriptRule>& rules() const { return rules_; }
  std::size_t size() const { return rules_.size(); }
  void write(const std::filesystem::path& path) const;
  std::shared_ptr<ScriptedProvider> provider(std::string name = "scripted") const;

 private:
  std::vector<TranscriptRule> rules_;
  std::vector<std::string> matchers_;
};

/// Writes (matcher, response) pairs as a transcript file.
void build_transcript(const std::vector<std::pair<std::string, std::string>>& script,
                      const std::filesystem::path& path);

/// One row of the published detailed comparison table.
struct CrrTableRow {
  std::string model;
  std::string method;
  std::size_t wins;
  std::size_t ties;
  std::size_t losses;
  std::string crr;
};

const std::vector<CrrTableRow>& published_crr_table();

/// The three worked examples of the metadata-extraction prompt.
struct MetadataExample {
  std::string instruction;
  std::string label;  // "Use case" or "Task"
  std::string use_case;
  std::vector<std::string> skills;
};

const std::vector<MetadataExample>& metadata_examples();

/// Splits `n` instructions over rounds by `fractions` (largest remainder).
/// Entry i is the 1-based round in which instruction i is accepted; 0 means
/// never.
std::vector<int> gap_schedule(std::size_t n, const std::vector<double>& fractions);

struct ScriptedRunSpec {
  std::size_t seeds = 5;
  int total_instructions = 100;
  int metadata_target = 10;
  int max_iterations = 4;
  int rubric_count = 4;
  std::uint64_t seed = 7;
  // Per decoded instruction (pool order). Missing entries mean never accepted.
  std::vector<int> accept_round;
  // Every n-th accepted instruction (n > 0) is won by the target instead.
  std::size_t target_win_every = 0;
};

struct ScriptedRun {
  RunConfig config;
  std::filesystem::path config_path;
  std::vector<InstructionMetadata> metadata;
  std::size_t decoded = 0;
};

/// Writes seeds, strong/target/judge transcripts and a config file under
/// `dir` so that a full `run` follows the requested acceptance schedule.
ScriptedRun build_scripted_run(const ScriptedRunSpec& spec, const std::filesystem::path& dir);

/// Text of instruction `index` (pool order) after `version` improvements.
std::string scripted_instruction_text(const InstructionMetadata& metadata, std::size_t ordinal,
                                      int version);

}  // namespace synthalign::fixtures
