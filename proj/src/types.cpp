#include "synthalign/types.hpp"

#include <algorithm>

#include "synthalign/error.hpp"
#include "synthalign/text.hpp"

namespace synthalign {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::config: return "config";
    case ErrorCode::precondition: return "precondition";
    case ErrorCode::io: return "io";
    case ErrorCode::provider_unreachable: return "provider_unreachable";
    case ErrorCode::quota_exceeded: return "quota_exceeded";
    case ErrorCode::request_rejected: return "request_rejected";
    case ErrorCode::unmatched_prompt: return "unmatched_prompt";
    case ErrorCode::unparseable_output: return "unparseable_output";
    case ErrorCode::missing_placeholder: return "missing_placeholder";
    case ErrorCode::all_seeds_failed: return "all_seeds_failed";
    case ErrorCode::cannot_reach_target: return "cannot_reach_target";
    case ErrorCode::no_data: return "no_data";
    case ErrorCode::budget_exceeded: return "budget_exceeded";
  }
  return "unknown";
}

std::string_view to_string(Origin origin) {
  switch (origin) {
    case Origin::seed: return "seed";
    case Origin::decoded: return "decoded";
    case Origin::improved: return "improved";
  }
  return "seed";
}

std::string_view to_string(Provenance provenance) {
  switch (provenance) {
    case Provenance::extracted: return "extracted";
    case Provenance::augmented: return "augmented";
    case Provenance::user_provided: return "user_provided";
  }
  return "extracted";
}

Origin origin_from_string(std::string_view s) {
  if (s == "seed") return Origin::seed;
  if (s == "decoded") return Origin::decoded;
  if (s == "improved") return Origin::improved;
  fail(ErrorCode::io, "unknown instruction origin '" + std::string(s) + "'");
}

Provenance provenance_from_string(std::string_view s) {
  if (s == "extracted") return Provenance::extracted;
  if (s == "augmented") return Provenance::augmented;
  if (s == "user_provided") return Provenance::user_provided;
  fail(ErrorCode::io, "unknown metadata provenance '" + std::string(s) + "'");
}

Instruction Instruction::seed(std::string id, std::string text) {
  Instruction instr;
  instr.lineage_id = id;
  instr.id = std::move(id);
  instr.text = std::move(text);
  instr.origin = Origin::seed;
  return instr;
}

bool is_consistent(const Instruction& instr) {
  if (instr.iteration < 0) return false;
  if (instr.origin == Origin::improved) {
    return instr.iteration > 0 &&
           instr.action_history.size() == static_cast<std::size_t>(instr.iteration);
  }
  return instr.iteration == 0 && instr.action_history.empty();
}

std::string metadata_key(const InstructionMetadata& m) {
  std::vector<std::string> skills;
  for (const auto& s : m.skills) skills.push_back(text::to_lower(text::trim(s)));
  std::sort(skills.begin(), skills.end());
  return text::to_lower(text::trim(m.use_case)) + '\x1f' + text::join(skills, "\x1e");
}

void to_json(nlohmann::json& j, const Instruction& instr) {
  j = nlohmann::json{{"id", instr.id},
                     {"text", instr.text},
                     {"origin", to_string(instr.origin)},
                     {"metadata_id", instr.metadata_id ? nlohmann::json(*instr.metadata_id)
                                                       : nlohmann::json(nullptr)},
                     {"iteration", instr.iteration},
                     {"action_history", instr.action_history},
                     {"lineage_id", instr.lineage_id}};
}

void from_json(const nlohmann::json& j, Instruction& instr) {
  instr.id = j.at("id").get<std::string>();
  instr.text = j.at("text").get<std::string>();
  instr.origin = origin_from_string(j.value("origin", std::string("seed")));
  if (auto it = j.find("metadata_id"); it != j.end() && !it->is_null()) {
    instr.metadata_id = it->get<std::string>();
  } else {
    instr.metadata_id.reset();
  }
  instr.iteration = j.value("iteration", 0);
  instr.action_history = j.value("action_history", std::vector<std::string>{});
  instr.lineage_id = j.value("lineage_id", instr.id);
}

void to_json(nlohmann::json& j, const InstructionMetadata& m) {
  j = nlohmann::json{{"id", m.id},
                     {"use_case", m.use_case},
                     {"skills", m.skills},
                     {"provenance", to_string(m.provenance)}};
}

void from_json(const nlohmann::json& j, InstructionMetadata& m) {
  m.id = j.at("id").get<std::string>();
  m.use_case = j.at("use_case").get<std::string>();
  m.skills = j.at("skills").get<std::vector<std::string>>();
  m.provenance = provenance_from_string(j.value("provenance", std::string("user_provided")));
}

void to_json(nlohmann::json& j, const SkipEntry& e) {
  j = nlohmann::json{{"id", e.id}, {"reason", e.reason}};
}

void from_json(const nlohmann::json& j, SkipEntry& e) {
  e.id = j.at("id").get<std::string>();
  e.reason = j.at("reason").get<std::string>();
}

}  // namespace synthalign
