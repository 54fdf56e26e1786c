#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace synthalign {

enum class Origin { seed, decoded, improved };
enum class Provenance { extracted, augmented, user_provided };

std::string_view to_string(Origin origin);
std::string_view to_string(Provenance provenance);
Origin origin_from_string(std::string_view s);
Provenance provenance_from_string(std::string_view s);

/// An instruction plus its lineage. Improved instructions are new values;
/// `lineage_id` names the decoded ancestor they came from.
struct Instruction {
  std::string id;
  std::string text;
  Origin origin = Origin::seed;
  std::optional<std::string> metadata_id;
  int iteration = 0;
  std::vector<std::string> action_history;
  std::string lineage_id;

  static Instruction seed(std::string id, std::string text);
};

/// Checks the iteration/origin/action_history invariants.
bool is_consistent(const Instruction& instr);

struct InstructionMetadata {
  std::string id;
  std::string use_case;
  std::vector<std::string> skills;
  Provenance provenance = Provenance::extracted;
};

/// Identity used for deduplication: use case plus sorted skills.
std::string metadata_key(const InstructionMetadata& m);

void to_json(nlohmann::json& j, const Instruction& instr);
void from_json(const nlohmann::json& j, Instruction& instr);
void to_json(nlohmann::json& j, const InstructionMetadata& m);
void from_json(const nlohmann::json& j, InstructionMetadata& m);

/// An item a stage skipped, with the reason. Stages return these
/// alongside their results; the CLI and the run log print them.
struct SkipEntry {
  std::string id;
  std::string reason;
};

void to_json(nlohmann::json& j, const SkipEntry& e);
void from_json(const nlohmann::json& j, SkipEntry& e);

}  // namespace synthalign
