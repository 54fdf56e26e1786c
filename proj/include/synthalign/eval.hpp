#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "synthalign/prompts.hpp"
#include "synthalign/stage.hpp"

namespace synthalign {

enum class Outcome { win, tie, loss };
std::string_view to_string(Outcome o);

/// Target vs reference under the pairwise judge. `forward` shows the target
/// as Assistant 1, `reversed` shows the reference first.
struct Comparison {
  std::string instruction_id;
  std::string target_response;
  std::string reference_response;
  prompts::ParsedScores forward;
  prompts::ParsedScores reversed;
  Outcome outcome = Outcome::tie;
  bool valid = true;
  std::string invalid_reason;
};

/// A side wins only if it scores strictly higher in both orderings.
Outcome decide_outcome(double target_forward, double reference_forward, double target_reversed,
                       double reference_reversed);

Comparison judge_pair(std::string_view instruction, std::string_view target_response,
                      std::string_view reference_response, const StageContext& ctx,
                      std::string instruction_id = {});

struct CrrReport {
  std::size_t wins = 0;
  std::size_t ties = 0;
  std::size_t losses = 0;
  std::size_t total = 0;
  std::size_t invalid = 0;
  double crr = 0;

  /// "72.02%"
  std::string percent() const;
  std::string table() const;
};

nlohmann::json to_json(const CrrReport& r);

/// (wins + ties) / total over the valid comparisons. Throws no_data when
/// none are valid.
CrrReport compute_crr(std::span<const Comparison> comparisons);
CrrReport compute_crr(std::size_t wins, std::size_t ties, std::size_t losses);

struct EvalItem {
  std::string id;
  std::string instruction;
  // Missing responses are generated live: target role for the target,
  // strong role for the reference.
  std::optional<std::string> target_response;
  std::optional<std::string> reference_response;
};

EvalItem eval_item_from_json(const nlohmann::json& j, std::size_t index);

struct EvaluationResult {
  CrrReport report;
  std::vector<Comparison> comparisons;
};

EvaluationResult evaluate_model(std::span<const EvalItem> test_set, const StageContext& ctx);

}  // namespace synthalign
