#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "synthalign/random.hpp"
#include "synthalign/stage.hpp"
#include "synthalign/types.hpp"

namespace synthalign {

inline constexpr int kDefaultRubricCount = 4;
inline constexpr int kDefaultMaxIterations = 4;

/// Rubrics and the improvement actions derived from them, paired by position.
struct RubricActionSet {
  std::string metadata_id;
  std::vector<std::string> rubrics;
  std::vector<std::string> actions;
};

void to_json(nlohmann::json& j, const RubricActionSet& s);
void from_json(const nlohmann::json& j, RubricActionSet& s);

/// Asks the strong model for `k` rubrics and `k` actions. A count mismatch
/// or unparseable answer is re-prompted once; a second failure throws
/// unparseable_output.
RubricActionSet generate_rubrics(const InstructionMetadata& metadata, const StageContext& ctx,
                                 int k = kDefaultRubricCount);

/// Per-run cache of rubric sets. Each metadata is asked about at most once;
/// metadata whose rubrics could not be produced are remembered as
/// untailorable.
class RubricBook {
 public:
  explicit RubricBook(int k = kDefaultRubricCount) : k_(k) {}

  /// Generates the missing sets concurrently.
  void ensure(std::span<const InstructionMetadata> metadata, const StageContext& ctx);
  const RubricActionSet& get_or_generate(const InstructionMetadata& metadata,
                                         const StageContext& ctx);

  std::optional<RubricActionSet> find(const std::string& metadata_id) const;
  bool untailorable(const std::string& metadata_id) const;

  std::vector<RubricActionSet> sets() const;
  std::vector<std::string> untailorable_ids() const;
  void restore(std::vector<RubricActionSet> sets, std::vector<std::string> untailorable);
  std::size_t generation_calls() const;

 private:
  int k_;
  // Serializes generation so concurrent callers never ask twice.
  std::mutex generation_mutex_;
  mutable std::mutex mutex_;
  std::map<std::string, RubricActionSet> sets_;
  std::set<std::string> untailorable_;
  std::size_t generation_calls_ = 0;
};

struct ImproveResult {
  // The improved instruction, or a copy of the input when `failed`.
  Instruction instruction;
  std::string action;
  bool failed = false;
  std::string failure_reason;
  // Soft check: the output repeats four or more consecutive words of the
  // action. Flagged, not rejected.
  bool copied_action_span = false;
};

/// Seed for one improvement step of one lineage; independent of scheduling.
std::uint64_t improvement_seed(std::uint64_t run_seed, const Instruction& instr,
                               std::uint32_t attempt);

/// Uniform over actions not yet in the lineage's history; over all actions
/// once those run out.
std::size_t pick_action(const Instruction& instr, const RubricActionSet& actions, Rng& rng);

bool shares_word_span(std::string_view text, std::string_view action, std::size_t span = 4);

/// Applies one sampled action. Requires instr.iteration + 1 < max_iterations.
ImproveResult improve_instruction(const Instruction& instr, const RubricActionSet& actions,
                                  std::uint64_t rng_seed, const StageContext& ctx,
                                  int max_iterations = kDefaultMaxIterations,
                                  std::uint32_t attempt = 0);

struct ImproveJob {
  const Instruction* instruction;
  const RubricActionSet* actions;
  std::uint64_t rng_seed;
};

std::vector<ImproveResult> improve_batch(std::span<const ImproveJob> jobs, const StageContext& ctx,
                                         int max_iterations = kDefaultMaxIterations,
                                         std::uint32_t attempt = 0);

}  // namespace synthalign
