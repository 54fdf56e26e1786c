#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "synthalign/prompts.hpp"
#include "synthalign/stage.hpp"
#include "synthalign/types.hpp"

namespace synthalign {

inline constexpr double kDefaultTheta = 3.0;

enum class Route { accept_strong, accept_target, improve_further };
enum class ResponseSource { strong, target };
// `kept_at_max` records come from the keep-at-max option, not from the gap.
enum class Admission { gap, kept_at_max };

std::string_view to_string(Route r);
std::string_view to_string(ResponseSource s);
ResponseSource response_source_from_string(std::string_view s);

/// Both responses to one instruction with order-swapped scorer results.
/// `strong_first` presented the strong response as Assistant 1.
struct ScoredDuel {
  std::string instruction_id;
  std::string strong_response;
  std::string target_response;
  prompts::ParsedScores strong_first;
  prompts::ParsedScores strong_second;
  double avg_strong = 0;
  double avg_target = 0;
  double gap = 0;
};

struct DuelScores {
  double avg_strong;
  double avg_target;
  double gap;
};

/// Averages each side's score over the two presentation orders.
DuelScores combine_scores(const prompts::ParsedScores& strong_first,
                          const prompts::ParsedScores& strong_second);

/// gap > theta: strong; gap < -theta: target; otherwise improve further.
Route route(double gap, double theta = kDefaultTheta);

struct CurationRecord {
  Instruction instruction;
  std::string response;
  ResponseSource response_source = ResponseSource::strong;
  double gap = 0;
  int accepted_at_iteration = 1;
  Admission admission = Admission::gap;
};

/// Strong responses need gap > theta, target responses gap < -theta.
bool is_consistent(const CurationRecord& record, double theta);

/// One line of the output dataset.
nlohmann::json to_dataset_row(const CurationRecord& record);
void to_json(nlohmann::json& j, const CurationRecord& r);
void from_json(const nlohmann::json& j, CurationRecord& r);
void to_json(nlohmann::json& j, const ScoredDuel& d);

enum class DuelStatus { ok, deferred, dropped };

struct DuelOutcome {
  DuelStatus status = DuelStatus::ok;
  std::optional<ScoredDuel> duel;
  std::string reason;
};

/// Strong and target responses, then two scorer calls with swapped order.
DuelOutcome duel(const Instruction& instr, const StageContext& ctx);
std::vector<DuelOutcome> duel_batch(std::span<const Instruction> instrs, const StageContext& ctx);

struct FilterOptions {
  double theta = kDefaultTheta;
  int max_iterations = 4;
  // Accept exhausted instructions with the strong response instead of
  // dropping them.
  bool keep_at_max = false;
};

struct FilterPassResult {
  std::vector<CurationRecord> accepted;
  std::vector<Instruction> survivors;
  std::vector<SkipEntry> dropped;
  std::vector<Instruction> deferred;
  std::vector<ScoredDuel> duels;
  std::size_t accept_strong = 0;
  std::size_t accept_target = 0;
  std::size_t kept_at_max = 0;
};

FilterPassResult filter_pass(std::span<const Instruction> instrs, const FilterOptions& options,
                             const StageContext& ctx);

}  // namespace synthalign
